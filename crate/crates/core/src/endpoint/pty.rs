//! Pseudo-terminal endpoint backend.
//!
//! Each endpoint allocates a PTY pair, puts it in raw mode, and publishes a
//! symlink `<link-dir>/<name>` to the slave node. The slave is what a native
//! program opens; the master stays inside the daemon and is serviced by a
//! per-endpoint pump thread.
//!
//! Session tracking relies on the master reporting `POLLHUP` while no process
//! holds the slave open. The slave is opened and closed once at creation so
//! the hangup state is armed before the first application arrives.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::os::fd::{AsRawFd, FromRawFd, RawFd};
use std::os::unix::fs::OpenOptionsExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{Endpoint, EndpointError, EndpointInfo, EndpointPublisher, LiveNames};
use crate::channel::{ChannelError, ChannelHandle};
use crate::trace::{TraceHub, TraceKind};

const IDLE_WAIT: Duration = Duration::from_millis(1);
const FINAL_FLUSH: Duration = Duration::from_millis(100);

fn cvt(ret: libc::c_int) -> io::Result<libc::c_int> {
    if ret == -1 {
        Err(io::Error::last_os_error())
    } else {
        Ok(ret)
    }
}

fn is_hangup_error(e: &io::Error) -> bool {
    e.kind() == io::ErrorKind::WouldBlock || e.raw_os_error() == Some(libc::EIO)
}

/// Allocate a raw, non-blocking PTY master and return it with the slave path.
fn open_pty() -> io::Result<(File, PathBuf)> {
    // SAFETY: plain libc calls on a descriptor we own; `fd` is wrapped in a
    // File immediately so it is closed on every error path.
    unsafe {
        let fd = cvt(libc::posix_openpt(
            libc::O_RDWR | libc::O_NOCTTY | libc::O_CLOEXEC,
        ))?;
        let master = File::from_raw_fd(fd);
        cvt(libc::grantpt(fd))?;
        cvt(libc::unlockpt(fd))?;

        let mut buf = [0 as libc::c_char; 128];
        let rc = libc::ptsname_r(fd, buf.as_mut_ptr(), buf.len());
        if rc != 0 {
            return Err(io::Error::from_raw_os_error(rc));
        }
        let name = std::ffi::CStr::from_ptr(buf.as_ptr());
        let slave = PathBuf::from(name.to_string_lossy().into_owned());

        // Termios ioctls on the master apply to the slave side.
        let mut tio: libc::termios = std::mem::zeroed();
        cvt(libc::tcgetattr(fd, &mut tio))?;
        libc::cfmakeraw(&mut tio);
        cvt(libc::tcsetattr(fd, libc::TCSANOW, &tio))?;

        let flags = cvt(libc::fcntl(fd, libc::F_GETFL))?;
        cvt(libc::fcntl(fd, libc::F_SETFL, flags | libc::O_NONBLOCK))?;

        Ok((master, slave))
    }
}

fn open_slave(path: &Path) -> io::Result<File> {
    OpenOptions::new()
        .read(true)
        .write(true)
        .custom_flags(libc::O_NOCTTY | libc::O_NONBLOCK)
        .open(path)
}

/// Toggle exclusive mode on the slave. Non-privileged openers are refused
/// while it is set.
fn set_exclusive(slave: &Path, on: bool) -> io::Result<()> {
    let f = open_slave(slave)?;
    let req = if on { libc::TIOCEXCL } else { libc::TIOCNXCL };
    // SAFETY: TIOCEXCL/TIOCNXCL take no argument.
    cvt(unsafe { libc::ioctl(f.as_raw_fd(), req) })?;
    Ok(())
}

fn poll_fd(fd: RawFd, events: libc::c_short, timeout: Duration) -> io::Result<libc::c_short> {
    let mut pfd = libc::pollfd {
        fd,
        events,
        revents: 0,
    };
    let ms = timeout.as_millis().min(i32::MAX as u128) as libc::c_int;
    // SAFETY: one valid pollfd.
    match unsafe { libc::poll(&mut pfd, 1, ms) } {
        -1 => {
            let e = io::Error::last_os_error();
            if e.kind() == io::ErrorKind::Interrupted {
                Ok(0)
            } else {
                Err(e)
            }
        }
        _ => Ok(pfd.revents),
    }
}

#[derive(Debug, Default)]
struct Stats {
    open_count: AtomicU8,
    sessions: AtomicU64,
    bytes_in: AtomicU64,
    bytes_out: AtomicU64,
}

/// Bytes moved by one [`EndpointPump::pump_endpoint`] call.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PumpCounts {
    pub bytes_in: usize,
    pub bytes_out: usize,
}

impl PumpCounts {
    pub fn is_idle(&self) -> bool {
        self.bytes_in == 0 && self.bytes_out == 0
    }
}

/// Moves bytes between a PTY master and a channel's application handle.
pub struct EndpointPump {
    master: File,
    slave_path: PathBuf,
    app: ChannelHandle,
    to_channel: Vec<u8>,
    to_master: Vec<u8>,
    connected: bool,
    platform_gone: bool,
    exclusive: bool,
    stats: Arc<Stats>,
    trace: Option<(TraceHub, String, String)>,
}

impl EndpointPump {
    pub fn is_connected(&self) -> bool {
        self.connected
    }

    fn update_session(&mut self, hup: bool) {
        if hup && self.connected {
            self.connected = false;
            self.stats.open_count.store(0, Ordering::Release);
            if self.exclusive {
                if let Err(e) = set_exclusive(&self.slave_path, false) {
                    log::warn!("clearing exclusive mode on {:?}: {e}", self.slave_path);
                }
            }
        } else if !hup && !self.connected {
            self.connected = true;
            self.stats.open_count.store(1, Ordering::Release);
            let session = self.stats.sessions.fetch_add(1, Ordering::AcqRel) + 1;
            if self.exclusive {
                if let Err(e) = set_exclusive(&self.slave_path, true) {
                    log::warn!("setting exclusive mode on {:?}: {e}", self.slave_path);
                }
            }
            if let Some((hub, deployment, name)) = &self.trace {
                hub.emit(
                    TraceKind::EndpointOpened,
                    [
                        ("deployment_id", deployment.as_str()),
                        ("endpoint", name.as_str()),
                        ("phase", "connected"),
                        ("session", session.to_string().as_str()),
                    ],
                );
            }
        }
    }

    /// One bounded pass in each direction. Never blocks.
    pub fn pump_endpoint(&mut self) -> io::Result<PumpCounts> {
        let mut counts = PumpCounts::default();
        let revents = poll_fd(self.master.as_raw_fd(), libc::POLLIN, Duration::ZERO)?;
        self.update_session(revents & libc::POLLHUP != 0);

        // Application -> channel. Stop reading the PTY while the channel
        // cannot take what we already hold.
        if self.to_channel.is_empty() && revents & libc::POLLIN != 0 && !self.platform_gone {
            let room = self.app.poll().writable;
            if room > 0 {
                let mut buf = vec![0u8; room];
                match self.master.read(&mut buf) {
                    Ok(n) => {
                        buf.truncate(n);
                        self.to_channel = buf;
                    }
                    Err(e) if is_hangup_error(&e) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        if !self.to_channel.is_empty() {
            match self.app.write(&self.to_channel) {
                Ok(n) => {
                    self.to_channel.drain(..n);
                    counts.bytes_in = n;
                }
                Err(_) => {
                    self.platform_gone = true;
                    self.to_channel.clear();
                }
            }
        }

        // Channel -> application.
        if self.to_master.is_empty() {
            match self.app.read(self.app.capacity()) {
                Ok(data) => self.to_master = data,
                Err(ChannelError::EndOfStream | ChannelError::ClosedHandle) => {
                    self.platform_gone = true
                }
                Err(e) => log::warn!("endpoint channel read: {e}"),
            }
        }
        if !self.to_master.is_empty() && self.connected {
            match self.master.write(&self.to_master) {
                Ok(n) => {
                    self.to_master.drain(..n);
                    counts.bytes_out = n;
                }
                Err(e) if is_hangup_error(&e) => {}
                Err(e) => return Err(e),
            }
        }

        self.stats
            .bytes_in
            .fetch_add(counts.bytes_in as u64, Ordering::AcqRel);
        self.stats
            .bytes_out
            .fetch_add(counts.bytes_out as u64, Ordering::AcqRel);
        Ok(counts)
    }

    fn wait_for_work(&self) {
        if self.connected && self.to_channel.is_empty() {
            let _ = poll_fd(self.master.as_raw_fd(), libc::POLLIN, IDLE_WAIT);
        } else {
            thread::sleep(IDLE_WAIT);
        }
    }

    /// Push whatever the platform already produced out to the application.
    fn final_flush(&mut self) {
        let deadline = Instant::now() + FINAL_FLUSH;
        while self.connected && Instant::now() < deadline {
            if self.to_master.is_empty() && self.app.poll().readable == 0 {
                break;
            }
            match self.pump_endpoint() {
                Ok(c) if c.is_idle() => thread::sleep(IDLE_WAIT),
                Ok(_) => {}
                Err(_) => break,
            }
        }
    }

    fn run(mut self, stop: Arc<AtomicBool>) {
        while !stop.load(Ordering::Acquire) {
            match self.pump_endpoint() {
                Ok(c) if c.is_idle() => self.wait_for_work(),
                Ok(_) => {}
                Err(e) => {
                    log::error!("endpoint {:?} pump failed: {e}", self.slave_path);
                    thread::sleep(IDLE_WAIT * 10);
                }
            }
        }
        self.final_flush();
        if self.exclusive && self.connected {
            let _ = set_exclusive(&self.slave_path, false);
        }
        // Dropping the master hangs up the slave.
    }
}

/// Publishes deployments as PTYs with stable symlinks in `link_dir`.
#[derive(Debug, Clone)]
pub struct PtyPublisher {
    link_dir: PathBuf,
    live: LiveNames,
    trace: Option<TraceHub>,
    exclusive: bool,
}

impl PtyPublisher {
    pub fn new(link_dir: impl Into<PathBuf>) -> Self {
        Self {
            link_dir: link_dir.into(),
            live: LiveNames::default(),
            trace: None,
            exclusive: false,
        }
    }

    pub fn with_trace(mut self, hub: TraceHub) -> Self {
        self.trace = Some(hub);
        self
    }

    /// Refuse unprivileged second openers while a session is active.
    pub fn exclusive(mut self, on: bool) -> Self {
        self.exclusive = on;
        self
    }

    pub fn link_dir(&self) -> &Path {
        &self.link_dir
    }

    fn prepare_link(&self, link: &Path) -> Result<(), EndpointError> {
        match std::fs::symlink_metadata(link) {
            Ok(meta) => {
                // A dangling link left behind by a previous daemon is reclaimed.
                if meta.file_type().is_symlink() && !link.exists() {
                    std::fs::remove_file(link)?;
                    Ok(())
                } else {
                    Err(EndpointError::NameInUse(
                        link.file_name()
                            .map(|n| n.to_string_lossy().into_owned())
                            .unwrap_or_default(),
                    ))
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    fn publish_inner(
        &mut self,
        deployment_id: &str,
        app: ChannelHandle,
        name: &str,
    ) -> Result<Box<dyn Endpoint>, EndpointError> {
        std::fs::create_dir_all(&self.link_dir)?;
        let link_path = self.link_dir.join(name);
        self.prepare_link(&link_path)?;

        let (master, slave_path) = open_pty()?;
        drop(open_slave(&slave_path)?);
        std::os::unix::fs::symlink(&slave_path, &link_path)?;

        let stats = Arc::new(Stats::default());
        let stop = Arc::new(AtomicBool::new(false));
        let pump = EndpointPump {
            master,
            slave_path: slave_path.clone(),
            app,
            to_channel: Vec::new(),
            to_master: Vec::new(),
            connected: false,
            platform_gone: false,
            exclusive: self.exclusive,
            stats: stats.clone(),
            trace: self
                .trace
                .clone()
                .map(|hub| (hub, deployment_id.to_string(), name.to_string())),
        };
        let thread = {
            let stop = stop.clone();
            thread::Builder::new()
                .name(format!("endpoint-{name}"))
                .spawn(move || pump.run(stop))
        };
        let thread = match thread {
            Ok(t) => t,
            Err(e) => {
                let _ = std::fs::remove_file(&link_path);
                return Err(e.into());
            }
        };
        log::info!(
            "published {name}: {} -> {}",
            link_path.display(),
            slave_path.display()
        );

        Ok(Box::new(PtyEndpoint {
            name: name.to_string(),
            os_path: slave_path,
            link_path,
            stats,
            stop,
            thread: Some(thread),
            live: self.live.clone(),
        }))
    }
}

impl EndpointPublisher for PtyPublisher {
    fn publish(
        &mut self,
        deployment_id: &str,
        app: ChannelHandle,
        name: &str,
    ) -> Result<Box<dyn Endpoint>, EndpointError> {
        self.live.claim(name)?;
        let r = self.publish_inner(deployment_id, app, name);
        if r.is_err() {
            self.live.release(name);
        }
        r
    }
}

struct PtyEndpoint {
    name: String,
    os_path: PathBuf,
    link_path: PathBuf,
    stats: Arc<Stats>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    live: LiveNames,
}

impl PtyEndpoint {
    fn shutdown(&mut self) {
        let Some(thread) = self.thread.take() else {
            return;
        };
        let _ = std::fs::remove_file(&self.link_path);
        self.stop.store(true, Ordering::Release);
        let _ = thread.join();
        self.live.release(&self.name);
        log::info!("withdrew {}", self.name);
    }
}

impl Endpoint for PtyEndpoint {
    fn info(&self) -> EndpointInfo {
        EndpointInfo {
            name: self.name.clone(),
            os_path: self.os_path.clone(),
            link_path: Some(self.link_path.clone()),
            open_count: self.stats.open_count.load(Ordering::Acquire),
            sessions: self.stats.sessions.load(Ordering::Acquire),
            bytes_in: self.stats.bytes_in.load(Ordering::Acquire),
            bytes_out: self.stats.bytes_out.load(Ordering::Acquire),
        }
    }

    fn withdraw(mut self: Box<Self>) {
        self.shutdown();
    }
}

impl Drop for PtyEndpoint {
    fn drop(&mut self) {
        self.shutdown();
    }
}
