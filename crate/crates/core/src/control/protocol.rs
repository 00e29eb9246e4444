//! Line-delimited JSON control protocol.
//!
//! Each request is one JSON object on one line; each gets exactly one
//! response line. A `trace` request with `follow = true` is followed by one
//! [`TraceEvent`] per line until the client disconnects.
//!
//! ```text
//! > {"op":"deploy","module_id":"modem","ham_id":"sim0","policy":"reject"}
//! < {"ok":{"kind":"deployed","deployment_id":"d0","state":"active","endpoint":{...}}}
//! > {"op":"deploy","module_id":"modem","ham_id":"sim0","policy":"reject"}
//! < {"error":{"code":"hardware-busy","message":"HAM `sim0` is busy with deployment `d0`"}}
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::endpoint::EndpointInfo;
use crate::platform::{DeploymentState, PlatformError, Policy, StatusSnapshot};
use crate::trace::TraceEvent;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ControlRequest {
    /// Handshake; reports daemon identity.
    Start,
    LoadModule {
        path: PathBuf,
    },
    Deploy {
        module_id: String,
        ham_id: String,
        #[serde(default)]
        policy: Policy,
    },
    Undeploy {
        deployment_id: String,
    },
    Status,
    Trace {
        #[serde(default)]
        follow: bool,
    },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl From<&PlatformError> for ErrorBody {
    fn from(e: &PlatformError) -> Self {
        ErrorBody {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Started {
        version: String,
        pid: u32,
    },
    ModuleLoaded {
        module_id: String,
    },
    Deployed {
        deployment_id: String,
        state: DeploymentState,
        endpoint: Option<EndpointInfo>,
    },
    Undeployed {
        deployment_id: String,
    },
    Status(StatusSnapshot),
    Trace {
        events: Vec<TraceEvent>,
    },
    ShuttingDown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlResponse {
    Ok(Payload),
    Error(ErrorBody),
}

impl ControlResponse {
    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        ControlResponse::Error(ErrorBody {
            code: code.into(),
            message: message.into(),
        })
    }
}

impl From<Result<Payload, PlatformError>> for ControlResponse {
    fn from(r: Result<Payload, PlatformError>) -> Self {
        match r {
            Ok(p) => ControlResponse::Ok(p),
            Err(e) => ControlResponse::Error((&e).into()),
        }
    }
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    let mut line = serde_json::to_string(msg).expect("protocol types always serialize");
    line.push('\n');
    line
}

pub fn decode<'a, T: Deserialize<'a>>(line: &'a str) -> serde_json::Result<T> {
    serde_json::from_str(line.trim_end_matches(['\r', '\n']))
}
