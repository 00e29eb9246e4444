//! Dial plan: which carrier a dialed number reaches.
//!
//! File format, one entry per line:
//!
//! ```text
//! ; comment
//! 5551234 = loopback
//! 20000   = tcp:127.0.0.1:7000
//! default = nocarrier
//! ```
//!
//! Lines starting with `;` are comments (`#` is a valid dial digit).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DialPlanError {
    #[error("dial plan line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("cannot read dial plan: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CarrierTarget {
    Loopback,
    Tcp { host: String, port: u16 },
}

impl fmt::Display for CarrierTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CarrierTarget::Loopback => f.write_str("loopback"),
            CarrierTarget::Tcp { host, port } => write!(f, "tcp:{host}:{port}"),
        }
    }
}

impl FromStr for CarrierTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("loopback") {
            return Ok(CarrierTarget::Loopback);
        }
        let addr = s
            .strip_prefix("tcp:")
            .ok_or_else(|| format!("expected `loopback` or `tcp:<host>:<port>`, got `{s}`"))?;
        let (host, port) = addr
            .rsplit_once(':')
            .ok_or_else(|| format!("missing port in `{s}`"))?;
        let host = host.trim_start_matches('[').trim_end_matches(']');
        if host.is_empty() {
            return Err(format!("missing host in `{s}`"));
        }
        let port = port.parse().map_err(|_| format!("bad port in `{s}`"))?;
        Ok(CarrierTarget::Tcp {
            host: host.to_string(),
            port,
        })
    }
}

/// Where an unlisted number goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefaultRoute {
    Loopback,
    NoCarrier,
}

/// Outcome of looking a number up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Route {
    Carrier(CarrierTarget),
    NoCarrier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialPlan {
    entries: BTreeMap<String, CarrierTarget>,
    default: DefaultRoute,
}

impl Default for DialPlan {
    /// Every number reaches a loopback carrier.
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
            default: DefaultRoute::Loopback,
        }
    }
}

pub fn is_dial_string(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_digit() || b == b'*' || b == b'#')
}

impl DialPlan {
    pub fn new(default: DefaultRoute) -> Self {
        Self {
            entries: BTreeMap::new(),
            default,
        }
    }

    /// Add an entry. Returns `false` for an invalid or duplicate dial string.
    pub fn insert(&mut self, dial: &str, target: CarrierTarget) -> bool {
        if !is_dial_string(dial) || self.entries.contains_key(dial) {
            return false;
        }
        self.entries.insert(dial.to_string(), target);
        true
    }

    pub fn with_entry(mut self, dial: &str, target: CarrierTarget) -> Self {
        self.insert(dial, target);
        self
    }

    pub fn default_route(&self) -> DefaultRoute {
        self.default
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &CarrierTarget)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn resolve(&self, dial: &str) -> Route {
        match self.entries.get(dial) {
            Some(target) => Route::Carrier(target.clone()),
            None => match self.default {
                DefaultRoute::Loopback => Route::Carrier(CarrierTarget::Loopback),
                DefaultRoute::NoCarrier => Route::NoCarrier,
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self, DialPlanError> {
        let mut plan = DialPlan::default();
        let mut seen_default = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |reason: String| DialPlanError::Syntax { line, reason };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with(';') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| err("expected `<dialstring> = <target>`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "default" {
                if seen_default {
                    return Err(err("duplicate default".into()));
                }
                seen_default = true;
                plan.default = match value.to_ascii_lowercase().as_str() {
                    "loopback" => DefaultRoute::Loopback,
                    "nocarrier" | "no-carrier" | "no carrier" => DefaultRoute::NoCarrier,
                    _ => return Err(err(format!("bad default `{value}`"))),
                };
                continue;
            }
            if !is_dial_string(key) {
                return Err(err(format!("invalid dial string `{key}`")));
            }
            if plan.entries.contains_key(key) {
                return Err(err(format!("duplicate dial string `{key}`")));
            }
            let target = value.parse().map_err(err)?;
            plan.entries.insert(key.to_string(), target);
        }
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, DialPlanError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
