//! Software Module manifests.
//!
//! A manifest names a module and lists its algorithm implementations, each
//! tagged with the hardware type it runs on. On disk it is a TOML document:
//!
//! ```toml
//! module_id = "modem"
//! display_name = "Virtual Modem"
//!
//! [[implementations]]
//! hardware_type = "xilinx-virtex"
//! image = "modem-stub"
//! behavior = "modem"
//!
//! [[implementations]]
//! hardware_type = "sim-fpga-v1"
//! image = { behavior = "modem-stub", params = { revision = "2" } }
//! behavior = "modem"
//!
//! [config]
//! endpoint = "proteus-modem0"
//! dial_plan = "dialplan.txt"
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ham::{HamDescriptor, HardwareImage};

/// Config key naming the endpoint to publish.
pub const CONFIG_ENDPOINT: &str = "endpoint";
/// Config key pointing at a dial plan file (modem modules only).
pub const CONFIG_DIAL_PLAN: &str = "dial_plan";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("malformed manifest: {field}: {reason}")]
    Malformed { field: String, reason: String },
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ManifestError {
    fn malformed(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ManifestError::Malformed {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// What the module does on the platform side of the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModuleBehavior {
    /// AT command interpreter with a data-mode carrier.
    Modem,
    /// Hardware output is returned to the application unchanged.
    Identity,
}

impl FromStr for ModuleBehavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "modem" => Ok(ModuleBehavior::Modem),
            "identity" => Ok(ModuleBehavior::Identity),
            other => Err(format!("unknown module behavior `{other}`")),
        }
    }
}

impl fmt::Display for ModuleBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModuleBehavior::Modem => "modem",
            ModuleBehavior::Identity => "identity",
        })
    }
}

/// Accepts either a bare behavior tag or a full image table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum ImageSpec {
    Tag(String),
    Full(HardwareImage),
}

impl From<ImageSpec> for HardwareImage {
    fn from(spec: ImageSpec) -> Self {
        match spec {
            ImageSpec::Tag(tag) => HardwareImage::new(tag),
            ImageSpec::Full(image) => image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Implementation {
    pub hardware_type: String,
    pub image: HardwareImage,
    pub behavior: ModuleBehavior,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleManifest {
    pub module_id: String,
    pub display_name: String,
    pub implementations: Vec<Implementation>,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawImplementation {
    hardware_type: Option<String>,
    image: Option<ImageSpec>,
    behavior: Option<String>,
}

#[derive(Deserialize)]
struct RawManifest {
    module_id: Option<String>,
    display_name: Option<String>,
    implementations: Option<Vec<RawImplementation>>,
    #[serde(default)]
    config: BTreeMap<String, toml::Value>,
}

impl ModuleManifest {
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.module_id.trim().is_empty() {
            return Err(ManifestError::malformed("module_id", "must be non-empty"));
        }
        if self.implementations.is_empty() {
            return Err(ManifestError::malformed(
                "implementations",
                "at least one implementation is required",
            ));
        }
        for (i, imp) in self.implementations.iter().enumerate() {
            if imp.hardware_type.trim().is_empty() {
                return Err(ManifestError::malformed(
                    format!("implementations[{i}].hardware_type"),
                    "must be non-empty",
                ));
            }
            if imp.image.behavior.trim().is_empty() {
                return Err(ManifestError::malformed(
                    format!("implementations[{i}].image"),
                    "behavior tag must be non-empty",
                ));
            }
        }
        Ok(())
    }

    /// Parse a manifest document. Relative paths in `config` are left as-is.
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let raw: RawManifest =
            toml::from_str(text).map_err(|e| ManifestError::malformed("document", e.message()))?;
        let module_id = raw
            .module_id
            .ok_or_else(|| ManifestError::malformed("module_id", "missing"))?;
        let display_name = raw.display_name.unwrap_or_else(|| module_id.clone());
        let raw_impls = raw
            .implementations
            .ok_or_else(|| ManifestError::malformed("implementations", "missing"))?;

        let mut implementations = Vec::with_capacity(raw_impls.len());
        for (i, imp) in raw_impls.into_iter().enumerate() {
            let field = |name: &str| format!("implementations[{i}].{name}");
            let hardware_type = imp
                .hardware_type
                .ok_or_else(|| ManifestError::malformed(field("hardware_type"), "missing"))?;
            let image = imp
                .image
                .ok_or_else(|| ManifestError::malformed(field("image"), "missing"))?;
            let behavior = imp
                .behavior
                .ok_or_else(|| ManifestError::malformed(field("behavior"), "missing"))?
                .parse()
                .map_err(|e: String| ManifestError::malformed(field("behavior"), e))?;
            implementations.push(Implementation {
                hardware_type,
                image: image.into(),
                behavior,
            });
        }

        let mut config = BTreeMap::new();
        for (k, v) in raw.config {
            let v = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(_) | toml::Value::Float(_) | toml::Value::Boolean(_) => {
                    v.to_string()
                }
                _ => {
                    return Err(ManifestError::malformed(
                        format!("config.{k}"),
                        "values must be scalars",
                    ))
                }
            };
            config.insert(k, v);
        }

        let manifest = ModuleManifest {
            module_id,
            display_name,
            implementations,
            config,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Read a manifest file, resolving a relative `dial_plan` against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest = Self::parse(&text)?;
        if let Some(plan) = manifest.config.get_mut(CONFIG_DIAL_PLAN) {
            let p = Path::new(plan.as_str());
            if p.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                *plan = base.join(p).to_string_lossy().into_owned();
            }
        }
        Ok(manifest)
    }
}

/// Index of the first implementation compatible with `descriptor`.
pub fn match_implementation(
    manifest: &ModuleManifest,
    descriptor: &HamDescriptor,
) -> Option<usize> {
    manifest
        .implementations
        .iter()
        .position(|imp| imp.hardware_type == descriptor.hardware_type)
}
