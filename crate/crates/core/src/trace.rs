//! Structured platform trace.
//!
//! Every notable platform action is recorded as a [`TraceEvent`] with a
//! strictly increasing sequence number. Subscribers see every event emitted
//! after they subscribe, in order; a bounded history is kept for late readers.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

const DEFAULT_HISTORY: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceKind {
    HamRegistered,
    ModuleLoaded,
    DeployRequested,
    ImplementationMatched,
    Deployed,
    EndpointOpened,
    DataIn,
    DataOut,
    CommandParsed,
    Undeployed,
    DeployRejected,
    DeployQueued,
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    pub kind: TraceKind,
    #[serde(default)]
    pub detail: BTreeMap<String, String>,
}

impl TraceEvent {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.detail.get(key).map(String::as_str)
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:<6} {:<22}", self.seq, self.kind)?;
        for (k, v) in &self.detail {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

struct Inner {
    next_seq: u64,
    history: VecDeque<TraceEvent>,
    history_cap: usize,
    subscribers: Vec<Sender<TraceEvent>>,
}

/// Cloneable emitter shared by the platform and endpoint pumps.
#[derive(Clone)]
pub struct TraceHub {
    inner: Arc<Mutex<Inner>>,
}

impl Default for TraceHub {
    fn default() -> Self {
        Self::with_history(DEFAULT_HISTORY)
    }
}

impl TraceHub {
    pub fn with_history(history_cap: usize) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                next_seq: 0,
                history: VecDeque::new(),
                history_cap,
                subscribers: Vec::new(),
            })),
        }
    }

    pub fn emit<I, K, V>(&self, kind: TraceKind, detail: I) -> u64
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: ToString,
    {
        let detail = detail
            .into_iter()
            .map(|(k, v)| (k.into(), v.to_string()))
            .collect();
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);

        let mut inner = self.inner.lock().unwrap();
        let seq = inner.next_seq;
        inner.next_seq += 1;
        let event = TraceEvent {
            seq,
            timestamp_ms,
            kind,
            detail,
        };
        log::debug!("{event}");
        inner
            .subscribers
            .retain(|tx| tx.send(event.clone()).is_ok());
        if inner.history.len() == inner.history_cap {
            inner.history.pop_front();
        }
        inner.history.push_back(event);
        seq
    }

    /// Stream of every event emitted from now on.
    pub fn subscribe(&self) -> Receiver<TraceEvent> {
        self.subscribe_with_history().1
    }

    /// Retained history plus a stream continuing exactly where it ends.
    pub fn subscribe_with_history(&self) -> (Vec<TraceEvent>, Receiver<TraceEvent>) {
        let (tx, rx) = mpsc::channel();
        let mut inner = self.inner.lock().unwrap();
        inner.subscribers.push(tx);
        (inner.history.iter().cloned().collect(), rx)
    }

    pub fn history(&self) -> Vec<TraceEvent> {
        self.inner.lock().unwrap().history.iter().cloned().collect()
    }

    pub fn next_seq(&self) -> u64 {
        self.inner.lock().unwrap().next_seq
    }
}

impl fmt::Debug for TraceHub {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TraceHub")
            .field("next_seq", &self.next_seq())
            .finish()
    }
}

/// Whether `needle` occurs in `events` as an ordered (not necessarily
/// contiguous) subsequence of kinds.
pub fn contains_subsequence(events: &[TraceEvent], needle: &[TraceKind]) -> bool {
    let mut want = needle.iter().peekable();
    for e in events {
        if want.peek() == Some(&&e.kind) {
            want.next();
        }
    }
    want.peek().is_none()
}
