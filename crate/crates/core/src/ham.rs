//! Hardware Abstraction Modules.
//!
//! A HAM is the only way the platform touches hardware. [`SimFpga`] stands in
//! for a reconfigurable device: it accepts a [`HardwareImage`] naming a byte
//! transform and then applies it to everything passed through `process`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hardware type reported by [`SimFpga`] unless overridden.
pub const SIM_HARDWARE_TYPE: &str = "sim-fpga-v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HamError {
    #[error("unknown behavior `{0}`")]
    UnknownBehavior(String),
    #[error("device is not configured")]
    NotConfigured,
}

/// What a HAM reports about its device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HamDescriptor {
    pub ham_id: String,
    pub hardware_type: String,
    #[serde(default)]
    pub resources: BTreeMap<String, String>,
}

impl HamDescriptor {
    pub fn new(ham_id: impl Into<String>, hardware_type: impl Into<String>) -> Self {
        Self {
            ham_id: ham_id.into(),
            hardware_type: hardware_type.into(),
            resources: BTreeMap::new(),
        }
    }
}

/// Blob deployed onto a device. For the simulator this is just a behavior tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardwareImage {
    pub behavior: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl HardwareImage {
    pub fn new(behavior: impl Into<String>) -> Self {
        Self {
            behavior: behavior.into(),
            params: BTreeMap::new(),
        }
    }
}

/// Byte transforms the simulated device can be configured with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Identity,
    Upper,
    /// Modem images are pass-through at the hardware level; AT handling lives
    /// in the software module.
    ModemStub,
}

impl Behavior {
    pub const ALL: [Behavior; 3] = [Behavior::Identity, Behavior::Upper, Behavior::ModemStub];

    pub fn tag(self) -> &'static str {
        match self {
            Behavior::Identity => "identity",
            Behavior::Upper => "upper",
            Behavior::ModemStub => "modem-stub",
        }
    }

    pub fn apply(self, input: &[u8]) -> Vec<u8> {
        match self {
            Behavior::Identity | Behavior::ModemStub => input.to_vec(),
            Behavior::Upper => input.to_ascii_uppercase(),
        }
    }
}

impl FromStr for Behavior {
    type Err = HamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Behavior::ALL
            .into_iter()
            .find(|b| b.tag() == s)
            .ok_or_else(|| HamError::UnknownBehavior(s.to_string()))
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Contract every hardware abstraction module satisfies.
///
/// HAMs are driven only from the platform loop, never concurrently.
pub trait Ham: Send {
    fn probe(&self) -> HamDescriptor;
    fn configure(&mut self, image: &HardwareImage) -> Result<(), HamError>;
    fn process(&mut self, input: &[u8]) -> Result<Vec<u8>, HamError>;
    fn reset(&mut self);
}

/// Simulated reconfigurable device.
#[derive(Debug)]
pub struct SimFpga {
    descriptor: HamDescriptor,
    reconfig_delay: Duration,
    loaded: Option<Behavior>,
}

impl SimFpga {
    pub fn new(ham_id: impl Into<String>) -> Self {
        Self::with_type(ham_id, SIM_HARDWARE_TYPE)
    }

    pub fn with_type(ham_id: impl Into<String>, hardware_type: impl Into<String>) -> Self {
        let mut descriptor = HamDescriptor::new(ham_id, hardware_type);
        descriptor
            .resources
            .insert("kind".into(), "simulated".into());
        Self {
            descriptor,
            reconfig_delay: Duration::ZERO,
            loaded: None,
        }
    }

    /// Simulated time spent in `configure`.
    pub fn with_reconfig_delay(mut self, delay: Duration) -> Self {
        self.reconfig_delay = delay;
        self.descriptor
            .resources
            .insert("reconfig_delay_ms".into(), delay.as_millis().to_string());
        self
    }

    pub fn loaded(&self) -> Option<Behavior> {
        self.loaded
    }
}

impl Ham for SimFpga {
    fn probe(&self) -> HamDescriptor {
        self.descriptor.clone()
    }

    fn configure(&mut self, image: &HardwareImage) -> Result<(), HamError> {
        let behavior: Behavior = image.behavior.parse()?;
        if !self.reconfig_delay.is_zero() {
            std::thread::sleep(self.reconfig_delay);
        }
        self.loaded = Some(behavior);
        Ok(())
    }

    fn process(&mut self, input: &[u8]) -> Result<Vec<u8>, HamError> {
        self.loaded
            .map(|b| b.apply(input))
            .ok_or(HamError::NotConfigured)
    }

    fn reset(&mut self) {
        self.loaded = None;
    }
}
