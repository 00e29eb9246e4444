//! Oracles and harness helpers shared by the integration and acceptance
//! targets. Each oracle is written against plain std collections and does
//! not reuse library logic.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{self, Read};
use std::os::fd::AsRawFd;
use std::os::unix::fs::OpenOptionsExt;
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use proteus::endpoint::MemoryPublisher;
use proteus::manifest::{Implementation, ModuleBehavior};
use proteus::modem::{AtCommand, DialPlan, ModemState, ResultCode};
use proteus::platform::DeploymentState;
use proteus::{
    create_duplex, ChannelHandle, HardwareImage, ModuleManifest, Platform, PlatformConfig, Policy,
    SimFpga,
};
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};

// ---------------------------------------------------------------------------
// Duplex channel vs. bounded FIFO model

#[derive(Debug, Default)]
pub struct ChannelOracleStats {
    pub ops_app_to_platform: usize,
    pub ops_platform_to_app: usize,
    pub bytes_app_to_platform: usize,
    pub bytes_platform_to_app: usize,
    pub checkpoints: usize,
}

struct Direction {
    model: VecDeque<u8>,
    written: usize,
    read: usize,
    ops: usize,
}

impl Direction {
    fn new() -> Self {
        Self {
            model: VecDeque::new(),
            written: 0,
            read: 0,
            ops: 0,
        }
    }
}

fn offer(model: &mut VecDeque<u8>, cap: usize, data: &[u8]) -> usize {
    let n = data.len().min(cap - model.len());
    model.extend(&data[..n]);
    n
}

fn take(model: &mut VecDeque<u8>, max: usize) -> Vec<u8> {
    let n = max.min(model.len());
    model.drain(..n).collect()
}

const MAX_OP_LEN: usize = 256;

fn step(
    rng: &mut StdRng,
    cap: usize,
    writer: &mut ChannelHandle,
    reader: &mut ChannelHandle,
    dir: &mut Direction,
) -> Result<(), String> {
    dir.ops += 1;
    // Lengths straddle the capacity for small rings so partial transfers are
    // frequent; large rings reach full/empty through the random walk.
    let max_len = (cap + cap / 2).min(MAX_OP_LEN);
    if rng.gen_bool(0.5) {
        let mut data = vec![0u8; rng.gen_range(0..=max_len)];
        rng.fill_bytes(&mut data);
        let got = writer.write(&data).map_err(|e| format!("write: {e}"))?;
        let want = offer(&mut dir.model, cap, &data);
        if got != want {
            return Err(format!("write accepted {got}, model accepted {want}"));
        }
        dir.written += got;
    } else {
        let max = rng.gen_range(0..=max_len);
        let got = reader.read(max).map_err(|e| format!("read: {e}"))?;
        let want = take(&mut dir.model, max);
        if got != want {
            return Err(format!(
                "read returned {} bytes, model {} bytes, differ",
                got.len(),
                want.len()
            ));
        }
        dir.read += got.len();
    }
    Ok(())
}

fn checkpoint(
    cap: usize,
    a: &ChannelHandle,
    b: &ChannelHandle,
    dir: &Direction,
) -> Result<(), String> {
    let (rp, wp) = a.outbound_counters();
    if (rp, wp) != b.inbound_counters() {
        return Err("handles disagree on shared ring counters".into());
    }
    // Conservation: every byte written is either read or still buffered.
    if wp != dir.written || rp != dir.read || dir.written != dir.read + dir.model.len() {
        return Err(format!(
            "conservation broken: counters ({rp},{wp}) vs written {} read {} buffered {}",
            dir.written,
            dir.read,
            dir.model.len()
        ));
    }
    let (pa, pb) = (a.poll(), b.poll());
    if pa.writable != cap - dir.model.len() || pb.readable != dir.model.len() {
        return Err(format!(
            "poll mismatch: writable {} readable {} buffered {}",
            pa.writable,
            pb.readable,
            dir.model.len()
        ));
    }
    if !pa.peer_open || !pb.peer_open {
        return Err("peer reported closed".into());
    }
    Ok(())
}

/// Run randomized partial reads/writes until each direction has seen
/// `ops_per_direction` operations, comparing every result with a FIFO model.
pub fn run_channel_oracle(
    seed: u64,
    capacity: usize,
    ops_per_direction: usize,
) -> Result<ChannelOracleStats, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let (mut app, mut plat) = create_duplex(capacity).map_err(|e| e.to_string())?;
    let mut up = Direction::new();
    let mut down = Direction::new();
    let mut stats = ChannelOracleStats::default();

    while up.ops < ops_per_direction || down.ops < ops_per_direction {
        if rng.gen_bool(0.5) {
            step(&mut rng, capacity, &mut app, &mut plat, &mut up)?;
        } else {
            step(&mut rng, capacity, &mut plat, &mut app, &mut down)?;
        }
        // Single-threaded, so every point between operations is quiescent.
        checkpoint(capacity, &app, &plat, &up)?;
        checkpoint(capacity, &plat, &app, &down)?;
        stats.checkpoints += 1;
    }

    // Drain-on-close: remaining bytes are still delivered after close.
    app.close();
    if !up.model.is_empty() {
        let rest = plat.read(capacity).map_err(|e| e.to_string())?;
        if rest != take(&mut up.model, capacity) {
            return Err("bytes lost on close".into());
        }
        up.read += rest.len();
    }
    match plat.read(capacity) {
        Err(proteus::ChannelError::EndOfStream) => {}
        other => return Err(format!("expected end-of-stream after drain, got {other:?}")),
    }

    stats.ops_app_to_platform = up.ops;
    stats.ops_platform_to_app = down.ops;
    stats.bytes_app_to_platform = up.read;
    stats.bytes_platform_to_app = down.read;
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Arbitration: reference state machine and exhaustive interleavings

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Deploy(usize),
    Undeploy(usize),
}

/// All orderings of `n` deploy/undeploy pairs in which each request's deploy
/// precedes its undeploy.
pub fn interleavings(n: usize) -> Vec<Vec<Step>> {
    fn go(
        n: usize,
        deployed: &mut Vec<bool>,
        undeployed: &mut Vec<bool>,
        cur: &mut Vec<Step>,
        out: &mut Vec<Vec<Step>>,
    ) {
        if cur.len() == 2 * n {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !deployed[i] {
                deployed[i] = true;
                cur.push(Step::Deploy(i));
                go(n, deployed, undeployed, cur, out);
                cur.pop();
                deployed[i] = false;
            } else if !undeployed[i] {
                undeployed[i] = true;
                cur.push(Step::Undeploy(i));
                go(n, deployed, undeployed, cur, out);
                cur.pop();
                undeployed[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(
        n,
        &mut vec![false; n],
        &mut vec![false; n],
        &mut Vec::new(),
        &mut out,
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelState {
    Pending,
    Active,
    Stopped,
}

/// Reference arbitration model for one HAM.
#[derive(Debug, Default)]
pub struct ArbitrationModel {
    next: u64,
    active: Option<u64>,
    queue: VecDeque<u64>,
    pub states: BTreeMap<u64, ModelState>,
}

impl ArbitrationModel {
    pub fn deploy(&mut self, policy: Policy) -> Result<u64, &'static str> {
        if self.active.is_some() && policy == Policy::Reject {
            return Err("hardware-busy");
        }
        let id = self.next;
        self.next += 1;
        if self.active.is_some() {
            self.queue.push_back(id);
            self.states.insert(id, ModelState::Pending);
        } else {
            self.active = Some(id);
            self.states.insert(id, ModelState::Active);
        }
        Ok(id)
    }

    pub fn undeploy(&mut self, id: u64) -> Result<(), &'static str> {
        match self.states.get(&id).copied() {
            None => Err("unknown-deployment"),
            Some(ModelState::Stopped) => Err("not-active"),
            Some(ModelState::Pending) => {
                self.queue.retain(|&q| q != id);
                self.states.insert(id, ModelState::Stopped);
                Ok(())
            }
            Some(ModelState::Active) => {
                self.states.insert(id, ModelState::Stopped);
                self.active = self.queue.pop_front();
                if let Some(next) = self.active {
                    self.states.insert(next, ModelState::Active);
                }
                Ok(())
            }
        }
    }

    pub fn active(&self) -> Option<u64> {
        self.active
    }

    pub fn queue(&self) -> Vec<u64> {
        self.queue.iter().copied().collect()
    }
}

pub fn identity_manifest(module_id: &str, hardware_type: &str) -> ModuleManifest {
    ModuleManifest {
        module_id: module_id.into(),
        display_name: format!("{module_id} module"),
        implementations: vec![Implementation {
            hardware_type: hardware_type.into(),
            image: HardwareImage::new("identity"),
            behavior: ModuleBehavior::Identity,
        }],
        config: BTreeMap::new(),
    }
}

pub fn modem_manifest(module_id: &str, hardware_type: &str) -> ModuleManifest {
    ModuleManifest {
        module_id: module_id.into(),
        display_name: format!("{module_id} modem"),
        implementations: vec![Implementation {
            hardware_type: hardware_type.into(),
            image: HardwareImage::new("modem-stub"),
            behavior: ModuleBehavior::Modem,
        }],
        config: BTreeMap::new(),
    }
}

fn to_model(s: DeploymentState) -> Option<ModelState> {
    match s {
        DeploymentState::Pending => Some(ModelState::Pending),
        DeploymentState::Active => Some(ModelState::Active),
        DeploymentState::Stopped => Some(ModelState::Stopped),
        DeploymentState::Stopping => None,
    }
}

/// Replay one interleaving on a fresh platform and on the model, comparing
/// after every step.
pub fn check_interleaving(steps: &[Step], policies: &[Policy]) -> Result<(), String> {
    let mut platform = Platform::new(PlatformConfig::default(), Box::new(MemoryPublisher::new()));
    platform
        .register_ham(Box::new(SimFpga::new("sim0")))
        .map_err(|e| e.to_string())?;
    platform
        .load_module(identity_manifest("m", "sim-fpga-v1"))
        .map_err(|e| e.to_string())?;
    let mut model = ArbitrationModel::default();
    let mut ids: Vec<Option<u64>> = vec![None; policies.len()];

    for (k, step) in steps.iter().enumerate() {
        let ctx = || format!("step {k} {step:?} of {steps:?} with {policies:?}");
        match *step {
            Step::Deploy(i) => {
                let got = platform.deploy("m", "sim0", policies[i]);
                let want = model.deploy(policies[i]);
                match (got, want) {
                    (Ok(id), Ok(n)) if id == format!("d{n}") => ids[i] = Some(n),
                    (Err(e), Err(code)) if e.code() == code => {}
                    (got, want) => return Err(format!("{}: got {got:?}, model {want:?}", ctx())),
                }
            }
            Step::Undeploy(i) => {
                let Some(n) = ids[i] else { continue };
                let got = platform.undeploy(&format!("d{n}")).map_err(|e| e.code());
                let want = model.undeploy(n);
                if got != want {
                    return Err(format!("{}: got {got:?}, model {want:?}", ctx()));
                }
            }
        }

        let status = platform.status();
        let active: Vec<_> = status
            .deployments
            .iter()
            .filter(|d| d.state == DeploymentState::Active && d.ham_id == "sim0")
            .collect();
        if active.len() > 1 {
            return Err(format!("{}: two active deployments on one HAM", ctx()));
        }
        for (&n, &want) in &model.states {
            let got = status
                .deployment(&format!("d{n}"))
                .and_then(|d| to_model(d.state));
            if got != Some(want) {
                return Err(format!("{}: d{n} is {got:?}, model {want:?}", ctx()));
            }
        }
        let ham = &status.hams[0];
        if ham.active_deployment != model.active().map(|n| format!("d{n}")) {
            return Err(format!(
                "{}: active {:?} vs model {:?}",
                ctx(),
                ham.active_deployment,
                model.active()
            ));
        }
        let queued: Vec<String> = model.queue().iter().map(|n| format!("d{n}")).collect();
        if ham.queued != queued || status.queue_depth != queued.len() {
            return Err(format!(
                "{}: queue {:?} vs model {queued:?}",
                ctx(),
                ham.queued
            ));
        }
    }
    Ok(())
}

/// Every interleaving of `n` requests under every per-request policy mix.
/// Returns how many scenarios ran.
pub fn run_arbitration_suite(n: usize) -> Result<usize, String> {
    let orders = interleavings(n);
    let mut count = 0;
    for mask in 0..(1u32 << n) {
        let policies: Vec<Policy> = (0..n)
            .map(|i| {
                if mask & (1 << i) != 0 {
                    Policy::Queue
                } else {
                    Policy::Reject
                }
            })
            .collect();
        for steps in &orders {
            check_interleaving(steps, &policies)?;
            count += 1;
        }
    }
    Ok(count)
}

// ---------------------------------------------------------------------------
// AT command fixtures

pub struct AtFixture {
    pub line: String,
    pub commands: Option<Vec<AtCommand>>,
}

fn fx(line: &str, commands: Option<Vec<AtCommand>>) -> AtFixture {
    AtFixture {
        line: line.to_string(),
        commands,
    }
}

/// Reference grammar table. `None` means the line is not AT-prefixed.
pub fn at_fixtures() -> Vec<AtFixture> {
    use AtCommand::*;
    let dial = |s: &str| Dial(s.to_string());
    let unknown = |s: &str| Unknown(s.to_string());
    vec![
        fx("AT", Some(vec![])),
        fx("at", Some(vec![])),
        fx("At", Some(vec![])),
        fx("ATD5551234", Some(vec![dial("5551234")])),
        fx("atd5551234", Some(vec![dial("5551234")])),
        fx("ATDT5551234", Some(vec![dial("5551234")])),
        fx("ATDP 555-1234", Some(vec![dial("5551234")])),
        fx("ATD (555) 123-4567", Some(vec![dial("5551234567")])),
        fx("ATD*70#", Some(vec![dial("*70#")])),
        fx("ATD", Some(vec![dial("")])),
        fx("ATH", Some(vec![Hangup])),
        fx("ATH0", Some(vec![Hangup])),
        fx("ATE0", Some(vec![Echo(false)])),
        fx("ATE1", Some(vec![Echo(true)])),
        fx("ATE0H0", Some(vec![Echo(false), Hangup])),
        fx("AT E1 H", Some(vec![Echo(true), Hangup])),
        fx("ATZ", Some(vec![Reset])),
        fx("ATZ0", Some(vec![Reset])),
        fx("ATHD42", Some(vec![Hangup, dial("42")])),
        fx("ATI", Some(vec![unknown("I")])),
        fx("ATX4", Some(vec![unknown("X4")])),
        fx("ATE0Q1", Some(vec![unknown("Q1")])),
        fx("ATH1", Some(vec![unknown("H1")])),
        fx("ATE2", Some(vec![unknown("E2")])),
        fx("hello", None),
        fx("A", None),
    ]
}

/// Independent expectation of the final result code for a parsed line,
/// with the default all-loopback dial plan.
pub fn expected_result(commands: &Option<Vec<AtCommand>>) -> ResultCode {
    let Some(commands) = commands else {
        return ResultCode::Error;
    };
    for c in commands {
        match c {
            AtCommand::Dial(s) if s.is_empty() => return ResultCode::Error,
            AtCommand::Dial(_) => return ResultCode::Connect,
            AtCommand::Unknown(_) => return ResultCode::Error,
            _ => {}
        }
    }
    ResultCode::Ok
}

fn framed(code: &str) -> Vec<u8> {
    format!("\r\n{code}\r\n").into_bytes()
}

/// Check every fixture through the parser and through a fresh modem.
/// Returns how many lines were checked.
pub fn run_at_fixtures() -> Result<usize, String> {
    let fixtures = at_fixtures();
    for f in &fixtures {
        let parsed = proteus::modem::parse_at_line(&f.line).ok();
        if parsed != f.commands {
            return Err(format!(
                "{:?}: parsed {parsed:?}, table {:?}",
                f.line, f.commands
            ));
        }
        let t0 = Instant::now();
        let mut m = ModemState::new(DialPlan::default(), t0);
        let mut input = f.line.clone().into_bytes();
        input.push(b'\r');
        let out = m.feed(&input, t0);
        let mut want = input.clone();
        want.extend(framed(expected_result(&f.commands).as_str()));
        if out.to_app != want {
            return Err(format!(
                "{:?}: modem wrote {:?}, expected {:?}",
                f.line,
                String::from_utf8_lossy(&out.to_app),
                String::from_utf8_lossy(&want)
            ));
        }
    }

    // Overlong line: one byte past the limit is rejected, the limit is not.
    let t0 = Instant::now();
    let mut m = ModemState::new(DialPlan::default(), t0).tap_echo_off(t0);
    let mut long = b"AT".to_vec();
    long.extend(std::iter::repeat_n(b' ', proteus::modem::LINE_LIMIT - 1));
    long.push(b'\r');
    if m.feed(&long, t0).to_app != framed("ERROR") {
        return Err("overlong line not rejected".into());
    }
    let mut fits = b"AT".to_vec();
    fits.extend(std::iter::repeat_n(b' ', proteus::modem::LINE_LIMIT - 2));
    fits.push(b'\r');
    if m.feed(&fits, t0).to_app != framed("OK") {
        return Err("line at the limit rejected".into());
    }
    Ok(fixtures.len() + 2)
}

trait EchoOff {
    fn tap_echo_off(self, now: Instant) -> Self;
}

impl EchoOff for ModemState {
    fn tap_echo_off(mut self, now: Instant) -> Self {
        self.feed(b"ATE0\r", now);
        self
    }
}

/// `+++` escape scenarios driven by an injected clock.
pub fn run_escape_scenarios() -> Result<usize, String> {
    let guard = Duration::from_secs(1);
    let ms = Duration::from_millis;
    let connect = || {
        let t0 = Instant::now();
        let mut m = ModemState::new(DialPlan::default(), t0).tap_echo_off(t0);
        let out = m.feed(b"ATD1\r", t0);
        assert_eq!(out.to_app, framed("CONNECT"));
        (m, t0)
    };
    let in_data = |m: &ModemState| m.mode() == proteus::modem::Mode::Data;

    // Silence, +++, silence: back to command mode with OK, carrier kept.
    let (mut m, t0) = connect();
    let t1 = t0 + guard + ms(50);
    let mut out = m.feed(b"+++", t1);
    out.merge(m.tick(t1 + guard - ms(10)));
    if !in_data(&m) || !out.to_app.is_empty() {
        return Err("escape completed before trailing guard elapsed".into());
    }
    out.merge(m.tick(t1 + guard + ms(10)));
    if in_data(&m) || out.to_app != framed("OK") || !m.has_carrier() {
        return Err(format!(
            "escape not honored: {:?}",
            String::from_utf8_lossy(&out.to_app)
        ));
    }

    // No leading silence: pluses are data and loop back.
    let (mut m, t0) = connect();
    let t1 = t0 + ms(200);
    m.feed(b"+++", t1);
    m.tick(t1 + guard * 3);
    if !in_data(&m) {
        return Err("escape honored without leading guard".into());
    }
    if m.carrier_pump(64).to_app != b"+++" {
        return Err("unescaped pluses not forwarded to carrier".into());
    }

    // Data inside the trailing guard cancels the escape.
    let (mut m, t0) = connect();
    let t1 = t0 + guard + ms(50);
    m.feed(b"+++", t1);
    m.feed(b"x", t1 + ms(500));
    m.tick(t1 + guard * 3);
    if !in_data(&m) {
        return Err("escape honored despite data within trailing guard".into());
    }
    if m.carrier_pump(64).to_app != b"+++x" {
        return Err("held pluses not flushed after cancelled escape".into());
    }

    // After a real escape, ATH drops the carrier.
    let (mut m, t0) = connect();
    let t1 = t0 + guard + ms(1);
    m.feed(b"+++", t1);
    m.tick(t1 + guard + ms(1));
    let out = m.feed(b"ATH\r", t1 + guard * 2);
    if out.to_app != framed("OK") || m.has_carrier() {
        return Err("ATH after escape did not hang up".into());
    }
    Ok(4)
}

// ---------------------------------------------------------------------------
// Process-level harness

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_proteusctl")
}

pub struct TestDaemon {
    pub dir: tempfile::TempDir,
    pub socket: PathBuf,
    child: Option<Child>,
}

impl TestDaemon {
    pub fn start(extra: &[&str]) -> io::Result<Self> {
        let dir = tempfile::tempdir()?;
        let socket = dir.path().join("ctl.sock");
        let child = Command::new(bin())
            .arg("--socket")
            .arg(&socket)
            .arg("daemon")
            .arg("--runtime-dir")
            .arg(dir.path())
            .args(extra)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()?;
        let daemon = Self {
            dir,
            socket,
            child: Some(child),
        };
        let deadline = Instant::now() + Duration::from_secs(5);
        while UnixStream::connect(&daemon.socket).is_err() {
            if Instant::now() > deadline {
                return Err(io::Error::new(
                    io::ErrorKind::TimedOut,
                    "daemon did not start",
                ));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        Ok(daemon)
    }

    pub fn link_dir(&self) -> PathBuf {
        self.dir.path().join("proteus")
    }

    pub fn ctl(&self, args: &[&str]) -> Output {
        Command::new(bin())
            .arg("--socket")
            .arg(&self.socket)
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .expect("run proteusctl")
    }

    pub fn client(&self) -> proteus::control::Client {
        proteus::control::Client::connect(&self.socket).expect("connect to daemon")
    }

    /// Stop via the control socket and wait for exit.
    pub fn stop(mut self) -> io::Result<()> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> io::Result<()> {
        let Some(mut child) = self.child.take() else {
            return Ok(());
        };
        if let Ok(mut c) = proteus::control::Client::connect(&self.socket) {
            let _ = c.request(&proteus::control::ControlRequest::Shutdown);
        }
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            if child.try_wait()?.is_some() {
                return Ok(());
            }
            if Instant::now() > deadline {
                child.kill()?;
                child.wait()?;
                return Err(io::Error::new(
                    io::ErrorKind::TimedOut,
                    "daemon did not stop",
                ));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

impl Drop for TestDaemon {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Value of a `key: value` line in CLI output.
pub fn field(out: &str, key: &str) -> Option<String> {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")).map(str::to_string))
}

pub fn write_module(dir: &Path, file: &str, text: &str) -> PathBuf {
    let path = dir.join(file);
    std::fs::write(&path, text).unwrap();
    path
}

pub const MODEM_TOML: &str = r#"
module_id = "modem"
display_name = "Virtual Modem"

[[implementations]]
hardware_type = "sim-fpga-v1"
image = "modem-stub"
behavior = "modem"
"#;

// ---------------------------------------------------------------------------
// Terminal-side helpers

/// Open an endpoint the way a terminal program would.
pub fn open_terminal(path: &Path) -> io::Result<File> {
    OpenOptions::new()
        .read(true)
        .write(true)
        .custom_flags(libc::O_NOCTTY)
        .open(path)
}

/// Wait up to `timeout` for the fd to become readable.
pub fn wait_readable(f: &File, timeout: Duration) -> bool {
    let mut pfd = libc::pollfd {
        fd: f.as_raw_fd(),
        events: libc::POLLIN,
        revents: 0,
    };
    let ms = timeout.as_millis().min(i32::MAX as u128) as i32;
    // SAFETY: one valid pollfd.
    let n = unsafe { libc::poll(&mut pfd, 1, ms) };
    n > 0
}

/// Read until `needle` appears or the deadline passes.
pub fn read_until(f: &mut File, needle: &[u8], timeout: Duration) -> io::Result<Vec<u8>> {
    let deadline = Instant::now() + timeout;
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    while !buf.windows(needle.len().max(1)).any(|w| w == needle) {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() || !wait_readable(f, left) {
            return Err(io::Error::new(
                io::ErrorKind::TimedOut,
                format!("timed out; got {:?}", String::from_utf8_lossy(&buf)),
            ));
        }
        let n = f.read(&mut chunk)?;
        if n == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    Ok(buf)
}

/// Read exactly `n` bytes or fail at the deadline.
pub fn read_exact_timeout(f: &mut File, n: usize, timeout: Duration) -> io::Result<Vec<u8>> {
    let deadline = Instant::now() + timeout;
    let mut buf = vec![0u8; n];
    let mut got = 0;
    while got < n {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() || !wait_readable(f, left) {
            return Err(io::Error::new(
                io::ErrorKind::TimedOut,
                format!("timed out after {got} of {n} bytes"),
            ));
        }
        match f.read(&mut buf[got..])? {
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            k => got += k,
        }
    }
    Ok(buf)
}

/// `/dev/pts` entries, for orphan checks.
pub fn pts_nodes() -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir("/dev/pts")
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n != "ptmx")
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}
