//! OS-visible endpoints for deployments.
//!
//! An endpoint owns the application handle of a deployment's duplex channel
//! and moves bytes between it and something a native program can open. The
//! production backend is a pseudo-terminal ([`PtyPublisher`]); the
//! [`MemoryPublisher`] hands the application handle straight to the caller and
//! is used to drive the platform in-process.

mod pty;

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelHandle;

pub use pty::{EndpointPump, PtyPublisher, PumpCounts};

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("endpoint name `{0}` is already in use")]
    NameInUse(String),
    #[error("invalid endpoint name `{0}`")]
    InvalidName(String),
    #[error("os resource failure: {0}")]
    Os(#[from] std::io::Error),
}

/// Observable endpoint state, as reported in platform status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointInfo {
    pub name: String,
    pub os_path: PathBuf,
    pub link_path: Option<PathBuf>,
    /// 1 while a native application has the endpoint open.
    pub open_count: u8,
    /// Sessions seen so far.
    pub sessions: u64,
    /// Bytes moved from the application into the channel.
    pub bytes_in: u64,
    /// Bytes moved from the channel to the application.
    pub bytes_out: u64,
}

pub trait Endpoint: Send {
    fn info(&self) -> EndpointInfo;

    /// Remove the OS node and stop pumping. A connected application sees
    /// hangup once any already-pumped bytes are delivered.
    fn withdraw(self: Box<Self>);
}

pub trait EndpointPublisher: Send {
    fn publish(
        &mut self,
        deployment_id: &str,
        app: ChannelHandle,
        name: &str,
    ) -> Result<Box<dyn Endpoint>, EndpointError>;
}

pub(crate) fn check_name(name: &str) -> Result<(), EndpointError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(EndpointError::InvalidName(name.to_string()))
    }
}

/// Names currently published, shared between a publisher and its endpoints.
#[derive(Debug, Clone, Default)]
pub(crate) struct LiveNames(Arc<Mutex<HashSet<String>>>);

impl LiveNames {
    pub(crate) fn claim(&self, name: &str) -> Result<(), EndpointError> {
        check_name(name)?;
        if self.0.lock().unwrap().insert(name.to_string()) {
            Ok(())
        } else {
            Err(EndpointError::NameInUse(name.to_string()))
        }
    }

    pub(crate) fn release(&self, name: &str) {
        self.0.lock().unwrap().remove(name);
    }

    pub(crate) fn contains(&self, name: &str) -> bool {
        self.0.lock().unwrap().contains(name)
    }
}

type Taps = Arc<Mutex<HashMap<String, ChannelHandle>>>;

/// In-process publisher: application handles are parked by endpoint name
/// until taken with [`MemoryPublisher::take`].
#[derive(Debug, Clone, Default)]
pub struct MemoryPublisher {
    live: LiveNames,
    taps: Taps,
}

impl MemoryPublisher {
    pub fn new() -> Self {
        Self::default()
    }

    /// Take the application handle published under `name`.
    pub fn take(&self, name: &str) -> Option<ChannelHandle> {
        self.taps.lock().unwrap().remove(name)
    }

    pub fn is_live(&self, name: &str) -> bool {
        self.live.contains(name)
    }
}

struct MemoryEndpoint {
    name: String,
    live: LiveNames,
    taps: Taps,
}

impl Endpoint for MemoryEndpoint {
    fn info(&self) -> EndpointInfo {
        let parked = self.taps.lock().unwrap().contains_key(&self.name);
        EndpointInfo {
            name: self.name.clone(),
            os_path: PathBuf::from(format!("mem:{}", self.name)),
            link_path: None,
            open_count: u8::from(!parked),
            sessions: u64::from(!parked),
            bytes_in: 0,
            bytes_out: 0,
        }
    }

    fn withdraw(self: Box<Self>) {
        self.taps.lock().unwrap().remove(&self.name);
        self.live.release(&self.name);
    }
}

impl EndpointPublisher for MemoryPublisher {
    fn publish(
        &mut self,
        _deployment_id: &str,
        app: ChannelHandle,
        name: &str,
    ) -> Result<Box<dyn Endpoint>, EndpointError> {
        self.live.claim(name)?;
        self.taps.lock().unwrap().insert(name.to_string(), app);
        Ok(Box::new(MemoryEndpoint {
            name: name.to_string(),
            live: self.live.clone(),
            taps: self.taps.clone(),
        }))
    }
}
