//! Operator control plane: the daemon, its socket protocol, and a client.

pub mod client;
pub mod protocol;
pub mod server;

use std::path::{Path, PathBuf};

pub use client::{Client, ClientError};
pub use protocol::{ControlRequest, ControlResponse, ErrorBody, Payload};
pub use server::{Daemon, DaemonConfig, DaemonError, DaemonHandle, HamSpec};

/// Environment variable overriding the control socket path.
pub const CONTROL_ENV: &str = "PROTEUS_CONTROL";

/// `$XDG_RUNTIME_DIR`, falling back to the system temp directory.
pub fn runtime_dir() -> PathBuf {
    std::env::var_os("XDG_RUNTIME_DIR")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
}

/// Directory holding the control socket and endpoint links.
pub fn proteus_dir(runtime: &Path) -> PathBuf {
    runtime.join("proteus")
}

pub fn default_socket_path() -> PathBuf {
    std::env::var_os(CONTROL_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| proteus_dir(&runtime_dir()).join("control.sock"))
}
