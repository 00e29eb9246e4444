//! The platform daemon.
//!
//! One thread owns the [`Platform`] and runs its event loop: it applies
//! control requests one at a time and pumps every active deployment between
//! them. Each control client gets its own thread which forwards requests to
//! the loop over a channel. Trace followers read the shared [`TraceHub`]
//! directly and never touch the loop.

use std::io::{self, BufRead, BufReader, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;

use super::protocol::{decode, encode, ControlRequest, ControlResponse, Payload};
use crate::endpoint::PtyPublisher;
use crate::ham::{SimFpga, SIM_HARDWARE_TYPE};
use crate::platform::{Platform, PlatformConfig, PlatformError};
use crate::trace::{TraceEvent, TraceHub};

const ACCEPT_POLL: Duration = Duration::from_millis(5);
const FOLLOW_POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error("a daemon is already running on {0}")]
    AlreadyRunning(PathBuf),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Platform(#[from] PlatformError),
}

/// A simulated HAM to register at startup, written `id[=hardware-type]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HamSpec {
    pub ham_id: String,
    pub hardware_type: String,
}

impl FromStr for HamSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (id, ty) = match s.split_once('=') {
            Some((id, ty)) => (id.trim(), ty.trim()),
            None => (s.trim(), SIM_HARDWARE_TYPE),
        };
        if id.is_empty() || ty.is_empty() {
            return Err(format!("bad HAM spec `{s}`, expected id[=hardware-type]"));
        }
        Ok(HamSpec {
            ham_id: id.to_string(),
            hardware_type: ty.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DaemonConfig {
    pub socket_path: PathBuf,
    /// Where endpoint links are created.
    pub link_dir: PathBuf,
    pub hams: Vec<HamSpec>,
    pub platform: PlatformConfig,
    pub reconfig_delay: Duration,
    pub exclusive_endpoints: bool,
}

impl DaemonConfig {
    pub fn new(socket_path: impl Into<PathBuf>, link_dir: impl Into<PathBuf>) -> Self {
        Self {
            socket_path: socket_path.into(),
            link_dir: link_dir.into(),
            hams: vec![HamSpec {
                ham_id: "sim0".into(),
                hardware_type: SIM_HARDWARE_TYPE.into(),
            }],
            platform: PlatformConfig::default(),
            reconfig_delay: Duration::ZERO,
            exclusive_endpoints: false,
        }
    }
}

enum LoopMsg {
    Request(ControlRequest, Sender<ControlResponse>),
    Stop,
}

pub struct Daemon {
    listener: UnixListener,
    socket_path: PathBuf,
    platform: Platform,
    trace: TraceHub,
    shutdown: Arc<AtomicBool>,
}

fn claim_socket(path: &Path) -> Result<UnixListener, DaemonError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    if path.exists() {
        if UnixStream::connect(path).is_ok() {
            return Err(DaemonError::AlreadyRunning(path.to_path_buf()));
        }
        log::info!("removing stale socket {}", path.display());
        std::fs::remove_file(path)?;
    }
    Ok(UnixListener::bind(path)?)
}

impl Daemon {
    pub fn bind(config: DaemonConfig) -> Result<Self, DaemonError> {
        let listener = claim_socket(&config.socket_path)?;
        let trace = TraceHub::default();
        let publisher = PtyPublisher::new(&config.link_dir)
            .with_trace(trace.clone())
            .exclusive(config.exclusive_endpoints);
        let mut platform = Platform::with_parts(
            config.platform,
            Box::new(publisher),
            trace.clone(),
            Arc::new(crate::clock::SystemClock),
        );
        for spec in &config.hams {
            let ham = SimFpga::with_type(&spec.ham_id, &spec.hardware_type)
                .with_reconfig_delay(config.reconfig_delay);
            platform.register_ham(Box::new(ham))?;
        }
        log::info!("listening on {}", config.socket_path.display());
        Ok(Self {
            listener,
            socket_path: config.socket_path,
            platform,
            trace,
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn socket_path(&self) -> &Path {
        &self.socket_path
    }

    pub fn trace(&self) -> &TraceHub {
        &self.trace
    }

    /// Setting this flag stops the daemon.
    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        self.shutdown.clone()
    }

    /// Serve until shutdown is requested; every deployment is undeployed on
    /// the way out.
    pub fn run(self) -> Result<(), DaemonError> {
        let Daemon {
            listener,
            socket_path,
            platform,
            trace,
            shutdown,
        } = self;
        let (tx, rx) = mpsc::channel();
        let loop_thread = {
            let shutdown = shutdown.clone();
            thread::Builder::new()
                .name("platform-loop".into())
                .spawn(move || platform_loop(platform, rx, shutdown))?
        };

        listener.set_nonblocking(true)?;
        while !shutdown.load(Ordering::Acquire) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let tx = tx.clone();
                    let trace = trace.clone();
                    let shutdown = shutdown.clone();
                    let spawned =
                        thread::Builder::new()
                            .name("control-client".into())
                            .spawn(move || {
                                if let Err(e) = serve_client(stream, tx, trace, shutdown) {
                                    log::debug!("control client: {e}");
                                }
                            });
                    if let Err(e) = spawned {
                        log::error!("cannot spawn client thread: {e}");
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                Err(e) => log::warn!("accept: {e}"),
            }
        }

        let _ = tx.send(LoopMsg::Stop);
        let _ = loop_thread.join();
        let _ = std::fs::remove_file(&socket_path);
        log::info!("daemon stopped");
        Ok(())
    }

    /// Run on a background thread.
    pub fn spawn(self) -> io::Result<DaemonHandle> {
        let shutdown = self.shutdown.clone();
        let socket_path = self.socket_path.clone();
        let trace = self.trace.clone();
        let thread = thread::Builder::new()
            .name("proteus-daemon".into())
            .spawn(move || self.run())?;
        Ok(DaemonHandle {
            shutdown,
            socket_path,
            trace,
            thread: Some(thread),
        })
    }
}

/// Handle to a daemon running on a background thread. Dropping it stops the
/// daemon.
pub struct DaemonHandle {
    shutdown: Arc<AtomicBool>,
    socket_path: PathBuf,
    trace: TraceHub,
    thread: Option<JoinHandle<Result<(), DaemonError>>>,
}

impl DaemonHandle {
    pub fn socket_path(&self) -> &Path {
        &self.socket_path
    }

    pub fn trace(&self) -> &TraceHub {
        &self.trace
    }

    pub fn stop(mut self) -> Result<(), DaemonError> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> Result<(), DaemonError> {
        self.shutdown.store(true, Ordering::Release);
        match self.thread.take() {
            Some(t) => t.join().unwrap_or(Ok(())),
            None => Ok(()),
        }
    }
}

impl Drop for DaemonHandle {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

fn platform_loop(mut platform: Platform, rx: Receiver<LoopMsg>, shutdown: Arc<AtomicBool>) {
    let mut busy = false;
    loop {
        let wait = if busy {
            Duration::ZERO
        } else if platform.active_deployments().is_empty() {
            Duration::from_millis(20)
        } else {
            Duration::from_millis(1)
        };
        match rx.recv_timeout(wait) {
            Ok(LoopMsg::Request(req, reply)) => {
                let resp = dispatch(&mut platform, req, &shutdown);
                let _ = reply.send(resp);
            }
            Ok(LoopMsg::Stop) | Err(RecvTimeoutError::Disconnected) => break,
            Err(RecvTimeoutError::Timeout) => {}
        }
        busy = !platform.pump_all().is_idle();
    }
    platform.shutdown();
}

fn dispatch(
    platform: &mut Platform,
    req: ControlRequest,
    shutdown: &AtomicBool,
) -> ControlResponse {
    let result = match req {
        ControlRequest::Start => Ok(Payload::Started {
            version: env!("CARGO_PKG_VERSION").to_string(),
            pid: std::process::id(),
        }),
        ControlRequest::LoadModule { path } => platform
            .load_module_file(&path)
            .map(|module_id| Payload::ModuleLoaded { module_id }),
        ControlRequest::Deploy {
            module_id,
            ham_id,
            policy,
        } => platform
            .deploy(&module_id, &ham_id, policy)
            .map(|deployment_id| Payload::Deployed {
                state: platform
                    .deployment_state(&deployment_id)
                    .expect("just created"),
                endpoint: platform.endpoint_info(&deployment_id),
                deployment_id,
            }),
        ControlRequest::Undeploy { deployment_id } => platform
            .undeploy(&deployment_id)
            .map(|()| Payload::Undeployed { deployment_id }),
        ControlRequest::Status => Ok(Payload::Status(platform.status())),
        ControlRequest::Trace { .. } => Ok(Payload::Trace {
            events: platform.trace().history(),
        }),
        ControlRequest::Shutdown => {
            shutdown.store(true, Ordering::Release);
            Ok(Payload::ShuttingDown)
        }
    };
    result.into()
}

fn serve_client(
    stream: UnixStream,
    tx: Sender<LoopMsg>,
    trace: TraceHub,
    shutdown: Arc<AtomicBool>,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;

    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match decode::<ControlRequest>(&line) {
            Err(e) => ControlResponse::error("bad-request", e.to_string()),
            Ok(ControlRequest::Trace { follow: true }) => {
                let (history, rx) = trace.subscribe_with_history();
                writer.write_all(
                    encode(&ControlResponse::Ok(Payload::Trace { events: history })).as_bytes(),
                )?;
                return follow_trace(writer, rx, &shutdown);
            }
            Ok(req) => {
                let (reply_tx, reply_rx) = mpsc::channel();
                if tx.send(LoopMsg::Request(req, reply_tx)).is_err() {
                    ControlResponse::error("daemon-stopping", "platform loop has stopped")
                } else {
                    reply_rx.recv().unwrap_or_else(|_| {
                        ControlResponse::error("daemon-stopping", "platform loop has stopped")
                    })
                }
            }
        };
        writer.write_all(encode(&response).as_bytes())?;
    }
    Ok(())
}

fn peer_closed(stream: &UnixStream) -> bool {
    let mut probe = [0u8; 1];
    if stream.set_nonblocking(true).is_err() {
        return true;
    }
    // SAFETY: MSG_PEEK into a one-byte buffer we own.
    let n = unsafe {
        libc::recv(
            std::os::fd::AsRawFd::as_raw_fd(stream),
            probe.as_mut_ptr().cast(),
            1,
            libc::MSG_PEEK,
        )
    };
    let closed =
        n == 0 || (n < 0 && io::Error::last_os_error().kind() != io::ErrorKind::WouldBlock);
    let _ = stream.set_nonblocking(false);
    closed
}

fn follow_trace(
    mut writer: UnixStream,
    rx: Receiver<TraceEvent>,
    shutdown: &AtomicBool,
) -> io::Result<()> {
    while !shutdown.load(Ordering::Acquire) {
        match rx.recv_timeout(FOLLOW_POLL) {
            Ok(event) => writer.write_all(encode(&event).as_bytes())?,
            Err(RecvTimeoutError::Timeout) => {
                if peer_closed(&writer) {
                    break;
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    Ok(())
}
