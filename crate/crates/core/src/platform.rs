//! Platform core.
//!
//! Owns the registered HAMs and loaded Software Modules, matches module
//! implementations to hardware, arbitrates exclusive access to each HAM, and
//! runs the data path of every active deployment:
//!
//! ```text
//! native app ─► endpoint ─► channel ─► pump ─► HAM.process ─► module ─► channel ─► endpoint ─► native app
//! ```
//!
//! A HAM hosts at most one active deployment. Requests for a busy HAM are
//! rejected or queued FIFO depending on [`Policy`]; nothing is ever preempted.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{create_duplex, ChannelError, ChannelHandle, DEFAULT_CAPACITY};
use crate::clock::{Clock, SystemClock};
use crate::endpoint::{Endpoint, EndpointError, EndpointInfo, EndpointPublisher};
use crate::ham::{Ham, HamDescriptor, HamError};
use crate::manifest::{
    match_implementation, ManifestError, ModuleBehavior, ModuleManifest, CONFIG_DIAL_PLAN,
    CONFIG_ENDPOINT,
};
use crate::modem::{DialPlan, ModemEvent, ModemState, DEFAULT_GUARD_TIME};
use crate::trace::{TraceEvent, TraceHub, TraceKind};

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("HAM `{0}` is already registered")]
    DuplicateHam(String),
    #[error("HAM descriptor for `{0}` has an empty hardware type")]
    InvalidDescriptor(String),
    #[error("module `{0}` is already loaded")]
    DuplicateModule(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("unknown HAM `{0}`")]
    UnknownHam(String),
    #[error("unknown deployment `{0}`")]
    UnknownDeployment(String),
    #[error("deployment `{0}` is not active")]
    NotActive(String),
    #[error("HAM `{ham_id}` is busy with deployment `{active}`")]
    HardwareBusy { ham_id: String, active: String },
    #[error("module `{module_id}` has no implementation for hardware type `{hardware_type}`")]
    NoCompatibleImplementation {
        module_id: String,
        hardware_type: String,
    },
    #[error("configuring HAM `{ham_id}` failed: {source}")]
    ConfigureFailed {
        ham_id: String,
        #[source]
        source: HamError,
    },
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

impl PlatformError {
    /// Stable kebab-case code used on the control protocol.
    pub fn code(&self) -> &'static str {
        match self {
            PlatformError::DuplicateHam(_) => "duplicate-ham-id",
            PlatformError::InvalidDescriptor(_) => "invalid-descriptor",
            PlatformError::DuplicateModule(_) => "duplicate-module-id",
            PlatformError::Manifest(ManifestError::Io { .. }) => "manifest-unreadable",
            PlatformError::Manifest(ManifestError::Malformed { .. }) => "malformed-manifest",
            PlatformError::UnknownModule(_) => "unknown-module",
            PlatformError::UnknownHam(_) => "unknown-ham",
            PlatformError::UnknownDeployment(_) => "unknown-deployment",
            PlatformError::NotActive(_) => "not-active",
            PlatformError::HardwareBusy { .. } => "hardware-busy",
            PlatformError::NoCompatibleImplementation { .. } => "no-compatible-implementation",
            PlatformError::ConfigureFailed { .. } => "configure-failed",
            PlatformError::Endpoint(EndpointError::NameInUse(_)) => "name-in-use",
            PlatformError::Endpoint(EndpointError::InvalidName(_)) => "invalid-name",
            PlatformError::Endpoint(EndpointError::Os(_)) => "os-resource-failure",
            PlatformError::Channel(_) => "channel-error",
        }
    }
}

/// What to do when the requested HAM is already busy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    #[default]
    Reject,
    Queue,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Reject => "reject",
            Policy::Queue => "queue",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeploymentState {
    Pending,
    Active,
    Stopping,
    Stopped,
}

impl fmt::Display for DeploymentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeploymentState::Pending => "pending",
            DeploymentState::Active => "active",
            DeploymentState::Stopping => "stopping",
            DeploymentState::Stopped => "stopped",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HamStatus {
    pub ham_id: String,
    pub hardware_type: String,
    pub resources: BTreeMap<String, String>,
    pub busy: bool,
    pub active_deployment: Option<String>,
    pub queued: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleStatus {
    pub module_id: String,
    pub display_name: String,
    pub hardware_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentStatus {
    pub deployment_id: String,
    pub module_id: String,
    pub ham_id: String,
    pub policy: Policy,
    pub implementation: Option<usize>,
    pub state: DeploymentState,
    pub endpoint: Option<EndpointInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub hams: Vec<HamStatus>,
    pub modules: Vec<ModuleStatus>,
    pub deployments: Vec<DeploymentStatus>,
    pub queue_depth: usize,
}

impl StatusSnapshot {
    pub fn deployment(&self, id: &str) -> Option<&DeploymentStatus> {
        self.deployments.iter().find(|d| d.deployment_id == id)
    }
}

/// Bytes moved by one pump pass.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PumpProgress {
    pub bytes_in: usize,
    pub bytes_out: usize,
}

impl PumpProgress {
    pub fn is_idle(&self) -> bool {
        self.bytes_in == 0 && self.bytes_out == 0
    }
}

#[derive(Debug, Clone)]
pub struct PlatformConfig {
    pub channel_capacity: usize,
    /// Used by modem modules whose manifest names no dial plan.
    pub dial_plan: DialPlan,
    pub guard_time: Duration,
    /// Stopped deployments kept for status.
    pub stopped_history: usize,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            channel_capacity: DEFAULT_CAPACITY,
            dial_plan: DialPlan::default(),
            guard_time: DEFAULT_GUARD_TIME,
            stopped_history: 64,
        }
    }
}

struct HamSlot {
    descriptor: HamDescriptor,
    ham: Box<dyn Ham>,
    active: Option<u64>,
    queue: VecDeque<u64>,
}

struct LoadedModule {
    manifest: ModuleManifest,
    dial_plan: Option<DialPlan>,
}

/// Live resources of an active deployment.
struct Runtime {
    platform: ChannelHandle,
    endpoint: Box<dyn Endpoint>,
    behavior: ModuleBehavior,
    modem: Option<ModemState>,
    /// Output accepted from the module but not yet taken by the channel.
    pending_out: Vec<u8>,
}

struct Deployment {
    module_id: String,
    ham_id: String,
    policy: Policy,
    implementation: Option<usize>,
    state: DeploymentState,
    runtime: Option<Runtime>,
    last_endpoint: Option<EndpointInfo>,
}

pub fn deployment_name(n: u64) -> String {
    format!("d{n}")
}

fn parse_deployment_id(id: &str) -> Option<u64> {
    id.strip_prefix('d')?.parse().ok()
}

pub struct Platform {
    config: PlatformConfig,
    hams: BTreeMap<String, HamSlot>,
    modules: BTreeMap<String, LoadedModule>,
    deployments: BTreeMap<u64, Deployment>,
    next_deployment: u64,
    publisher: Box<dyn EndpointPublisher>,
    trace: TraceHub,
    clock: Arc<dyn Clock>,
}

impl Platform {
    pub fn new(config: PlatformConfig, publisher: Box<dyn EndpointPublisher>) -> Self {
        Self::with_parts(
            config,
            publisher,
            TraceHub::default(),
            Arc::new(SystemClock),
        )
    }

    pub fn with_parts(
        config: PlatformConfig,
        publisher: Box<dyn EndpointPublisher>,
        trace: TraceHub,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            config,
            hams: BTreeMap::new(),
            modules: BTreeMap::new(),
            deployments: BTreeMap::new(),
            next_deployment: 0,
            publisher,
            trace,
            clock,
        }
    }

    pub fn trace(&self) -> &TraceHub {
        &self.trace
    }

    pub fn trace_subscribe(&self) -> std::sync::mpsc::Receiver<TraceEvent> {
        self.trace.subscribe()
    }

    pub fn register_ham(&mut self, ham: Box<dyn Ham>) -> Result<String, PlatformError> {
        let descriptor = ham.probe();
        if descriptor.hardware_type.trim().is_empty() {
            return Err(PlatformError::InvalidDescriptor(descriptor.ham_id));
        }
        if self.hams.contains_key(&descriptor.ham_id) {
            return Err(PlatformError::DuplicateHam(descriptor.ham_id));
        }
        let id = descriptor.ham_id.clone();
        self.trace.emit(
            TraceKind::HamRegistered,
            [
                ("ham_id", id.as_str()),
                ("hardware_type", descriptor.hardware_type.as_str()),
            ],
        );
        self.hams.insert(
            id.clone(),
            HamSlot {
                descriptor,
                ham,
                active: None,
                queue: VecDeque::new(),
            },
        );
        Ok(id)
    }

    pub fn load_module(&mut self, manifest: ModuleManifest) -> Result<String, PlatformError> {
        manifest.validate()?;
        if self.modules.contains_key(&manifest.module_id) {
            return Err(PlatformError::DuplicateModule(manifest.module_id));
        }
        let dial_plan = match manifest.config.get(CONFIG_DIAL_PLAN) {
            Some(path) => {
                Some(
                    DialPlan::load(Path::new(path)).map_err(|e| ManifestError::Malformed {
                        field: format!("config.{CONFIG_DIAL_PLAN}"),
                        reason: e.to_string(),
                    })?,
                )
            }
            None => None,
        };
        let id = manifest.module_id.clone();
        self.trace.emit(
            TraceKind::ModuleLoaded,
            [
                ("module_id", id.as_str()),
                (
                    "implementations",
                    &manifest.implementations.len().to_string(),
                ),
            ],
        );
        self.modules.insert(
            id.clone(),
            LoadedModule {
                manifest,
                dial_plan,
            },
        );
        Ok(id)
    }

    pub fn load_module_file(&mut self, path: &Path) -> Result<String, PlatformError> {
        let manifest = ModuleManifest::load(path)?;
        self.load_module(manifest)
    }

    pub fn deploy(
        &mut self,
        module_id: &str,
        ham_id: &str,
        policy: Policy,
    ) -> Result<String, PlatformError> {
        let module = self
            .modules
            .get(module_id)
            .ok_or_else(|| PlatformError::UnknownModule(module_id.to_string()))?;
        let slot = self
            .hams
            .get(ham_id)
            .ok_or_else(|| PlatformError::UnknownHam(ham_id.to_string()))?;

        self.trace.emit(
            TraceKind::DeployRequested,
            [
                ("module_id", module_id),
                ("ham_id", ham_id),
                ("policy", &policy.to_string()),
            ],
        );

        if match_implementation(&module.manifest, &slot.descriptor).is_none() {
            let err = PlatformError::NoCompatibleImplementation {
                module_id: module_id.to_string(),
                hardware_type: slot.descriptor.hardware_type.clone(),
            };
            self.reject(module_id, ham_id, None, &err);
            return Err(err);
        }

        if let Some(active) = slot.active {
            if policy == Policy::Reject {
                let err = PlatformError::HardwareBusy {
                    ham_id: ham_id.to_string(),
                    active: deployment_name(active),
                };
                self.reject(module_id, ham_id, None, &err);
                return Err(err);
            }
        }

        let n = self.next_deployment;
        self.next_deployment += 1;
        self.deployments.insert(
            n,
            Deployment {
                module_id: module_id.to_string(),
                ham_id: ham_id.to_string(),
                policy,
                implementation: None,
                state: DeploymentState::Pending,
                runtime: None,
                last_endpoint: None,
            },
        );

        let slot = self.hams.get_mut(ham_id).expect("checked above");
        if slot.active.is_some() {
            slot.queue.push_back(n);
            let position = slot.queue.len();
            self.trace.emit(
                TraceKind::DeployQueued,
                [
                    ("deployment_id", deployment_name(n)),
                    ("module_id", module_id.to_string()),
                    ("ham_id", ham_id.to_string()),
                    ("position", position.to_string()),
                ],
            );
            return Ok(deployment_name(n));
        }

        match self.activate(n) {
            Ok(()) => Ok(deployment_name(n)),
            Err(err) => {
                self.deployments.remove(&n);
                self.reject(module_id, ham_id, Some(n), &err);
                Err(err)
            }
        }
    }

    fn reject(&self, module_id: &str, ham_id: &str, n: Option<u64>, err: &PlatformError) {
        let mut detail = vec![
            ("module_id", module_id.to_string()),
            ("ham_id", ham_id.to_string()),
            ("reason", err.code().to_string()),
        ];
        if let Some(n) = n {
            detail.push(("deployment_id", deployment_name(n)));
        }
        self.trace.emit(TraceKind::DeployRejected, detail);
    }

    fn endpoint_name(&self, manifest: &ModuleManifest) -> String {
        if let Some(name) = manifest.config.get(CONFIG_ENDPOINT) {
            return name.clone();
        }
        let taken: Vec<String> = self
            .deployments
            .values()
            .filter_map(|d| d.runtime.as_ref().map(|r| r.endpoint.info().name))
            .collect();
        (0..)
            .map(|i| format!("proteus-{}{i}", manifest.module_id))
            .find(|n| !taken.contains(n))
            .expect("unbounded range")
    }

    /// Bring a pending deployment up on its (idle) HAM.
    fn activate(&mut self, n: u64) -> Result<(), PlatformError> {
        let dep = &self.deployments[&n];
        let (module_id, ham_id) = (dep.module_id.clone(), dep.ham_id.clone());
        let module = self
            .modules
            .get(&module_id)
            .ok_or_else(|| PlatformError::UnknownModule(module_id.clone()))?;
        let name = self.endpoint_name(&module.manifest);
        let slot = self
            .hams
            .get_mut(&ham_id)
            .ok_or_else(|| PlatformError::UnknownHam(ham_id.clone()))?;
        debug_assert!(slot.active.is_none());

        let index = match_implementation(&module.manifest, &slot.descriptor).ok_or_else(|| {
            PlatformError::NoCompatibleImplementation {
                module_id: module_id.clone(),
                hardware_type: slot.descriptor.hardware_type.clone(),
            }
        })?;
        let implementation = &module.manifest.implementations[index];
        self.trace.emit(
            TraceKind::ImplementationMatched,
            [
                ("deployment_id", deployment_name(n)),
                ("module_id", module_id.clone()),
                ("ham_id", ham_id.clone()),
                ("implementation", index.to_string()),
                ("hardware_type", implementation.hardware_type.clone()),
            ],
        );

        slot.ham
            .configure(&implementation.image)
            .map_err(|source| PlatformError::ConfigureFailed {
                ham_id: ham_id.clone(),
                source,
            })?;

        let behavior = implementation.behavior;
        let modem = (behavior == ModuleBehavior::Modem).then(|| {
            let plan = module
                .dial_plan
                .clone()
                .unwrap_or_else(|| self.config.dial_plan.clone());
            ModemState::new(plan, self.clock.now()).with_guard_time(self.config.guard_time)
        });

        let (app, platform) = match create_duplex(self.config.channel_capacity) {
            Ok(pair) => pair,
            Err(e) => {
                self.hams.get_mut(&ham_id).unwrap().ham.reset();
                return Err(e.into());
            }
        };
        let endpoint = match self.publisher.publish(&deployment_name(n), app, &name) {
            Ok(ep) => ep,
            Err(e) => {
                self.hams.get_mut(&ham_id).unwrap().ham.reset();
                return Err(e.into());
            }
        };
        let info = endpoint.info();

        self.hams.get_mut(&ham_id).unwrap().active = Some(n);
        let dep = self.deployments.get_mut(&n).unwrap();
        dep.implementation = Some(index);
        dep.state = DeploymentState::Active;
        dep.runtime = Some(Runtime {
            platform,
            endpoint,
            behavior,
            modem,
            pending_out: Vec::new(),
        });

        self.trace.emit(
            TraceKind::Deployed,
            [
                ("deployment_id", deployment_name(n)),
                ("module_id", module_id.clone()),
                ("ham_id", ham_id.clone()),
                ("implementation", index.to_string()),
                ("behavior", behavior.to_string()),
            ],
        );
        let mut detail = vec![
            ("deployment_id", deployment_name(n)),
            ("endpoint", info.name.clone()),
            ("os_path", info.os_path.display().to_string()),
            ("phase", "published".to_string()),
        ];
        if let Some(link) = &info.link_path {
            detail.push(("link_path", link.display().to_string()));
        }
        self.trace.emit(TraceKind::EndpointOpened, detail);
        Ok(())
    }

    pub fn undeploy(&mut self, deployment_id: &str) -> Result<(), PlatformError> {
        let unknown = || PlatformError::UnknownDeployment(deployment_id.to_string());
        let n = parse_deployment_id(deployment_id).ok_or_else(unknown)?;
        let dep = self.deployments.get_mut(&n).ok_or_else(unknown)?;
        let ham_id = dep.ham_id.clone();

        match dep.state {
            DeploymentState::Pending => {
                dep.state = DeploymentState::Stopped;
                if let Some(slot) = self.hams.get_mut(&ham_id) {
                    slot.queue.retain(|&q| q != n);
                }
                self.trace.emit(
                    TraceKind::Undeployed,
                    [
                        ("deployment_id", deployment_id),
                        ("ham_id", ham_id.as_str()),
                        ("from", "pending"),
                    ],
                );
            }
            DeploymentState::Active => {
                dep.state = DeploymentState::Stopping;
                if let Some(mut rt) = dep.runtime.take() {
                    dep.last_endpoint = Some(rt.endpoint.info());
                    rt.endpoint.withdraw();
                    rt.platform.close();
                    // Drops any carrier.
                    rt.modem.take();
                }
                dep.state = DeploymentState::Stopped;
                if let Some(slot) = self.hams.get_mut(&ham_id) {
                    slot.ham.reset();
                    slot.active = None;
                }
                self.trace.emit(
                    TraceKind::Undeployed,
                    [
                        ("deployment_id", deployment_id),
                        ("ham_id", ham_id.as_str()),
                        ("from", "active"),
                    ],
                );
                self.activate_next(&ham_id);
            }
            DeploymentState::Stopping | DeploymentState::Stopped => {
                return Err(PlatformError::NotActive(deployment_id.to_string()))
            }
        }
        self.prune_stopped();
        Ok(())
    }

    fn activate_next(&mut self, ham_id: &str) {
        loop {
            let Some(slot) = self.hams.get_mut(ham_id) else {
                return;
            };
            let Some(next) = slot.queue.pop_front() else {
                return;
            };
            match self.activate(next) {
                Ok(()) => return,
                Err(err) => {
                    let dep = self.deployments.get_mut(&next).unwrap();
                    dep.state = DeploymentState::Stopped;
                    let module_id = dep.module_id.clone();
                    self.reject(&module_id, ham_id, Some(next), &err);
                }
            }
        }
    }

    fn prune_stopped(&mut self) {
        let stopped: Vec<u64> = self
            .deployments
            .iter()
            .filter(|(_, d)| d.state == DeploymentState::Stopped)
            .map(|(&n, _)| n)
            .collect();
        let excess = stopped.len().saturating_sub(self.config.stopped_history);
        for n in &stopped[..excess] {
            self.deployments.remove(n);
        }
    }

    /// Undeploy everything: queued requests first so nothing activates.
    pub fn shutdown(&mut self) {
        let ids: Vec<(u64, DeploymentState)> = self
            .deployments
            .iter()
            .map(|(&n, d)| (n, d.state))
            .collect();
        for state in [DeploymentState::Pending, DeploymentState::Active] {
            for (n, s) in &ids {
                if *s == state {
                    let _ = self.undeploy(&deployment_name(*n));
                }
            }
        }
    }

    pub fn active_deployments(&self) -> Vec<String> {
        self.deployments
            .iter()
            .filter(|(_, d)| d.state == DeploymentState::Active)
            .map(|(&n, _)| deployment_name(n))
            .collect()
    }

    pub fn deployment_state(&self, deployment_id: &str) -> Option<DeploymentState> {
        let n = parse_deployment_id(deployment_id)?;
        self.deployments.get(&n).map(|d| d.state)
    }

    pub fn endpoint_info(&self, deployment_id: &str) -> Option<EndpointInfo> {
        let n = parse_deployment_id(deployment_id)?;
        let d = self.deployments.get(&n)?;
        d.runtime
            .as_ref()
            .map(|r| r.endpoint.info())
            .or_else(|| d.last_endpoint.clone())
    }

    pub fn status(&self) -> StatusSnapshot {
        let hams = self
            .hams
            .values()
            .map(|s| HamStatus {
                ham_id: s.descriptor.ham_id.clone(),
                hardware_type: s.descriptor.hardware_type.clone(),
                resources: s.descriptor.resources.clone(),
                busy: s.active.is_some(),
                active_deployment: s.active.map(deployment_name),
                queued: s.queue.iter().copied().map(deployment_name).collect(),
            })
            .collect();
        let modules = self
            .modules
            .values()
            .map(|m| ModuleStatus {
                module_id: m.manifest.module_id.clone(),
                display_name: m.manifest.display_name.clone(),
                hardware_types: m
                    .manifest
                    .implementations
                    .iter()
                    .map(|i| i.hardware_type.clone())
                    .collect(),
            })
            .collect();
        let deployments = self
            .deployments
            .iter()
            .map(|(&n, d)| DeploymentStatus {
                deployment_id: deployment_name(n),
                module_id: d.module_id.clone(),
                ham_id: d.ham_id.clone(),
                policy: d.policy,
                implementation: d.implementation,
                state: d.state,
                endpoint: d
                    .runtime
                    .as_ref()
                    .map(|r| r.endpoint.info())
                    .or_else(|| d.last_endpoint.clone()),
            })
            .collect();
        StatusSnapshot {
            hams,
            modules,
            deployments,
            queue_depth: self.hams.values().map(|s| s.queue.len()).sum(),
        }
    }

    /// One bounded pass of the data path for an active deployment.
    pub fn pump(&mut self, deployment_id: &str) -> Result<PumpProgress, PlatformError> {
        let unknown = || PlatformError::UnknownDeployment(deployment_id.to_string());
        let n = parse_deployment_id(deployment_id).ok_or_else(unknown)?;
        let dep = self.deployments.get_mut(&n).ok_or_else(unknown)?;
        let Some(rt) = dep.runtime.as_mut() else {
            return Err(PlatformError::NotActive(deployment_id.to_string()));
        };
        let slot = self
            .hams
            .get_mut(&dep.ham_id)
            .ok_or_else(|| PlatformError::UnknownHam(dep.ham_id.clone()))?;
        let now = self.clock.now();
        let capacity = rt.platform.capacity();
        let mut progress = PumpProgress::default();

        flush(rt);
        if rt.pending_out.is_empty() {
            let input = match rt.platform.read(capacity) {
                Ok(d) => d,
                Err(ChannelError::EndOfStream) => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            if !input.is_empty() {
                progress.bytes_in = input.len();
                self.trace.emit(
                    TraceKind::DataIn,
                    [
                        ("deployment_id", deployment_id.to_string()),
                        ("bytes", input.len().to_string()),
                    ],
                );
                let processed = match slot.ham.process(&input) {
                    Ok(p) => p,
                    Err(e) => {
                        log::error!("{deployment_id}: HAM process failed: {e}");
                        Vec::new()
                    }
                };
                match rt.behavior {
                    ModuleBehavior::Identity => rt.pending_out.extend(processed),
                    ModuleBehavior::Modem => {
                        if let Some(modem) = rt.modem.as_mut() {
                            let out = modem.feed(&processed, now);
                            rt.pending_out.extend(out.to_app);
                            emit_modem_events(&self.trace, deployment_id, out.events);
                        }
                    }
                }
            }
        }
        if let Some(modem) = rt.modem.as_mut() {
            let mut out = modem.tick(now);
            let room = capacity.saturating_sub(rt.pending_out.len() + out.to_app.len());
            if room > 0 {
                out.merge(modem.carrier_pump(room));
            }
            rt.pending_out.extend(out.to_app);
            emit_modem_events(&self.trace, deployment_id, out.events);
        }
        progress.bytes_out = flush(rt);
        if progress.bytes_out > 0 {
            self.trace.emit(
                TraceKind::DataOut,
                [
                    ("deployment_id", deployment_id.to_string()),
                    ("bytes", progress.bytes_out.to_string()),
                ],
            );
        }
        Ok(progress)
    }

    pub fn pump_all(&mut self) -> PumpProgress {
        let mut total = PumpProgress::default();
        for id in self.active_deployments() {
            match self.pump(&id) {
                Ok(p) => {
                    total.bytes_in += p.bytes_in;
                    total.bytes_out += p.bytes_out;
                }
                Err(e) => log::warn!("pump {id}: {e}"),
            }
        }
        total
    }
}

/// Write as much pending output as the channel takes; returns bytes written.
fn flush(rt: &mut Runtime) -> usize {
    if rt.pending_out.is_empty() {
        return 0;
    }
    match rt.platform.write(&rt.pending_out) {
        Ok(n) => {
            rt.pending_out.drain(..n);
            n
        }
        Err(ChannelError::PeerDisconnected) => {
            rt.pending_out.clear();
            0
        }
        Err(e) => {
            log::warn!("platform write: {e}");
            0
        }
    }
}

fn emit_modem_events(trace: &TraceHub, deployment_id: &str, events: Vec<ModemEvent>) {
    for event in events {
        match event {
            ModemEvent::CommandParsed {
                line,
                commands,
                result,
            } => {
                let commands: Vec<String> = commands.iter().map(ToString::to_string).collect();
                trace.emit(
                    TraceKind::CommandParsed,
                    [
                        ("deployment_id", deployment_id.to_string()),
                        ("line", line),
                        ("commands", commands.join(" ")),
                        ("result", result.to_string()),
                    ],
                );
            }
            other => log::info!("{deployment_id}: {other:?}"),
        }
    }
}

impl fmt::Debug for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Platform")
            .field("hams", &self.hams.keys().collect::<Vec<_>>())
            .field("modules", &self.modules.keys().collect::<Vec<_>>())
            .field("deployments", &self.deployments.len())
            .finish()
    }
}
