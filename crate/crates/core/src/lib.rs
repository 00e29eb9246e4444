//! User-space platform that exposes deployed Software Modules on a simulated
//! reconfigurable device as ordinary character-device endpoints.
//!
//! The pieces, bottom up:
//!
//! - [`channel`]: the two-handle duplex ring buffer between an endpoint and the platform.
//! - [`ham`]: hardware abstraction modules and the simulated FPGA.
//! - [`manifest`]: Software Module manifests and implementation matching.
//! - [`modem`]: the AT-command virtual modem module.
//! - [`endpoint`]: pseudo-terminal endpoints native programs can open.
//! - [`platform`]: registry, arbitration, deployments and the data pump.
//! - [`trace`]: the structured event stream.
//! - [`control`]: the daemon, its line protocol and client.

pub mod channel;
pub mod clock;
pub mod control;
pub mod endpoint;
pub mod ham;
pub mod manifest;
pub mod modem;
pub mod platform;
pub mod trace;

pub use channel::{create_duplex, ChannelError, ChannelHandle, Side};
pub use ham::{Ham, HamDescriptor, HardwareImage, SimFpga};
pub use manifest::{match_implementation, ModuleManifest};
pub use platform::{Platform, PlatformConfig, PlatformError, Policy, StatusSnapshot};
pub use trace::{TraceEvent, TraceHub, TraceKind};
