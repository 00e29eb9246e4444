//! Hayes-style virtual modem.
//!
//! [`ModemState`] sits on the platform side of a deployment's channel. In
//! command mode it assembles CR-terminated lines, echoes input, and answers
//! with CRLF-framed verbose result codes. A successful dial switches to data
//! mode, where bytes flow to a [`Carrier`] until the `+++` escape (framed by
//! guard-time silence) or loss of carrier returns it to command mode.

pub mod carrier;
pub mod dial_plan;
pub mod parser;

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use carrier::Carrier;
pub use dial_plan::{CarrierTarget, DefaultRoute, DialPlan, Route};
pub use parser::{parse_at_line, AtCommand, ParseError};

pub const LINE_LIMIT: usize = 256;
pub const DEFAULT_GUARD_TIME: Duration = Duration::from_secs(1);

const CR: u8 = b'\r';
const LF: u8 = b'\n';
const BS: u8 = 0x08;
const DEL: u8 = 0x7f;
const ESCAPE: u8 = b'+';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Command,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResultCode {
    Ok,
    Connect,
    NoCarrier,
    Error,
}

impl ResultCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ResultCode::Ok => "OK",
            ResultCode::Connect => "CONNECT",
            ResultCode::NoCarrier => "NO CARRIER",
            ResultCode::Error => "ERROR",
        }
    }

    /// Verbose framing: CR LF code CR LF.
    pub fn framed(self) -> Vec<u8> {
        format!("\r\n{}\r\n", self.as_str()).into_bytes()
    }
}

impl fmt::Display for ResultCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModemEvent {
    CommandParsed {
        line: String,
        commands: Vec<AtCommand>,
        result: ResultCode,
    },
    Connected(CarrierTarget),
    CarrierLost,
    Escaped,
}

/// Everything one modem step produced.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ModemOutput {
    pub to_app: Vec<u8>,
    /// Bytes forwarded to the carrier during this step.
    pub to_carrier: Vec<u8>,
    pub events: Vec<ModemEvent>,
}

impl ModemOutput {
    fn result(&mut self, code: ResultCode) {
        self.to_app.extend_from_slice(&code.framed());
    }

    pub fn merge(&mut self, other: ModemOutput) {
        self.to_app.extend(other.to_app);
        self.to_carrier.extend(other.to_carrier);
        self.events.extend(other.events);
    }
}

/// Progress through a possible `+++` escape.
#[derive(Debug, Clone, Copy)]
struct EscapeGuard {
    pluses: u8,
    last_plus: Instant,
    /// Time of the most recent non-escape data byte (or of entering data mode).
    last_activity: Instant,
}

pub struct ModemState {
    mode: Mode,
    echo: bool,
    line: Vec<u8>,
    overflowed: bool,
    carrier: Option<Carrier>,
    guard: EscapeGuard,
    guard_time: Duration,
    dial_plan: DialPlan,
}

impl ModemState {
    pub fn new(dial_plan: DialPlan, now: Instant) -> Self {
        Self {
            mode: Mode::Command,
            echo: true,
            line: Vec::new(),
            overflowed: false,
            carrier: None,
            guard: EscapeGuard {
                pluses: 0,
                last_plus: now,
                last_activity: now,
            },
            guard_time: DEFAULT_GUARD_TIME,
            dial_plan,
        }
    }

    pub fn with_guard_time(mut self, guard_time: Duration) -> Self {
        self.guard_time = guard_time;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn echo(&self) -> bool {
        self.echo
    }

    pub fn line_buffer(&self) -> &[u8] {
        &self.line
    }

    pub fn carrier(&self) -> Option<&Carrier> {
        self.carrier.as_ref()
    }

    pub fn has_carrier(&self) -> bool {
        self.carrier.is_some()
    }

    pub fn dial_plan(&self) -> &DialPlan {
        &self.dial_plan
    }

    /// Consume application bytes.
    pub fn feed(&mut self, input: &[u8], now: Instant) -> ModemOutput {
        let mut out = self.tick(now);
        let mut rest = input;
        while !rest.is_empty() {
            let used = match self.mode {
                Mode::Command => self.feed_command(rest, now, &mut out),
                Mode::Data => self.feed_data(rest, now, &mut out),
            };
            rest = &rest[used..];
        }
        out
    }

    /// Advance timers: completes or abandons a pending `+++` escape.
    pub fn tick(&mut self, now: Instant) -> ModemOutput {
        let mut out = ModemOutput::default();
        if self.mode != Mode::Data || self.guard.pluses == 0 {
            return out;
        }
        if now.duration_since(self.guard.last_plus) < self.guard_time {
            return out;
        }
        if self.guard.pluses == 3 {
            self.guard.pluses = 0;
            self.mode = Mode::Command;
            self.line.clear();
            self.overflowed = false;
            out.result(ResultCode::Ok);
            out.events.push(ModemEvent::Escaped);
        } else {
            // Pluses too far apart: they were data after all.
            self.flush_held_pluses(&mut out);
        }
        out
    }

    /// Deliver up to `max` carrier bytes toward the application and notice
    /// carrier loss.
    pub fn carrier_pump(&mut self, max: usize) -> ModemOutput {
        let mut out = ModemOutput::default();
        let Some(carrier) = self.carrier.as_mut() else {
            return out;
        };
        if self.mode == Mode::Data {
            out.to_app = carrier.recv(max);
        }
        let lost = if self.mode == Mode::Data {
            carrier.finished()
        } else {
            carrier.pending();
            !carrier.connected()
        };
        if lost && out.to_app.len() < max {
            self.carrier = None;
            self.enter_command_mode();
            out.result(ResultCode::NoCarrier);
            out.events.push(ModemEvent::CarrierLost);
        }
        out
    }

    /// Run one parsed command and return its result code.
    pub fn execute(&mut self, cmd: &AtCommand) -> (ResultCode, Option<ModemEvent>) {
        match cmd {
            AtCommand::Dial(number) => {
                if number.is_empty() {
                    return (ResultCode::Error, None);
                }
                self.carrier = None;
                match self.dial_plan.resolve(number) {
                    Route::NoCarrier => (ResultCode::NoCarrier, None),
                    Route::Carrier(target) => match Carrier::connect(&target) {
                        Ok(carrier) => {
                            self.carrier = Some(carrier);
                            self.mode = Mode::Data;
                            (ResultCode::Connect, Some(ModemEvent::Connected(target)))
                        }
                        Err(e) => {
                            log::info!("dial {number} via {target} failed: {e}");
                            (ResultCode::NoCarrier, None)
                        }
                    },
                }
            }
            AtCommand::Hangup => {
                self.carrier = None;
                (ResultCode::Ok, None)
            }
            AtCommand::Echo(on) => {
                self.echo = *on;
                (ResultCode::Ok, None)
            }
            AtCommand::Reset => {
                self.carrier = None;
                self.echo = true;
                (ResultCode::Ok, None)
            }
            AtCommand::Unknown(_) => (ResultCode::Error, None),
        }
    }

    fn enter_command_mode(&mut self) {
        self.mode = Mode::Command;
        self.guard.pluses = 0;
    }

    fn feed_command(&mut self, input: &[u8], now: Instant, out: &mut ModemOutput) -> usize {
        for (i, &b) in input.iter().enumerate() {
            if self.echo {
                out.to_app.push(b);
            }
            match b {
                CR => {
                    self.finish_line(out);
                    if self.mode == Mode::Data {
                        self.guard = EscapeGuard {
                            pluses: 0,
                            last_plus: now,
                            last_activity: now,
                        };
                        return i + 1;
                    }
                }
                LF => {}
                BS | DEL => {
                    self.line.pop();
                }
                _ if self.overflowed => {}
                _ if self.line.len() >= LINE_LIMIT => {
                    self.line.clear();
                    self.overflowed = true;
                }
                _ => self.line.push(b),
            }
        }
        input.len()
    }

    fn finish_line(&mut self, out: &mut ModemOutput) {
        let raw = std::mem::take(&mut self.line);
        if std::mem::take(&mut self.overflowed) {
            out.result(ResultCode::Error);
            out.events.push(ModemEvent::CommandParsed {
                line: String::from_utf8_lossy(&raw).into_owned(),
                commands: Vec::new(),
                result: ResultCode::Error,
            });
            return;
        }
        let text = String::from_utf8_lossy(&raw).into_owned();
        if text.trim().is_empty() {
            return;
        }
        let (commands, result) = match parse_at_line(&text) {
            Err(ParseError::NotAtPrefixed) => (Vec::new(), ResultCode::Error),
            Ok(commands) => {
                let mut result = ResultCode::Ok;
                let mut extra = Vec::new();
                for cmd in &commands {
                    let (code, event) = self.execute(cmd);
                    result = code;
                    extra.extend(event);
                    if code != ResultCode::Ok {
                        break;
                    }
                }
                out.events.extend(extra);
                (commands, result)
            }
        };
        out.result(result);
        out.events.push(ModemEvent::CommandParsed {
            line: text.trim().to_string(),
            commands,
            result,
        });
    }

    fn flush_held_pluses(&mut self, out: &mut ModemOutput) {
        let held = std::mem::take(&mut self.guard.pluses);
        if held > 0 {
            let bytes = vec![ESCAPE; held as usize];
            self.send_carrier(&bytes, out);
        }
    }

    fn send_carrier(&mut self, bytes: &[u8], out: &mut ModemOutput) {
        if let Some(c) = self.carrier.as_mut() {
            c.send(bytes);
        }
        out.to_carrier.extend_from_slice(bytes);
    }

    fn feed_data(&mut self, input: &[u8], now: Instant, out: &mut ModemOutput) -> usize {
        let mut plain_start = 0;
        for (i, &b) in input.iter().enumerate() {
            let candidate = b == ESCAPE
                && if self.guard.pluses == 0 {
                    now.duration_since(self.guard.last_activity) >= self.guard_time
                } else {
                    self.guard.pluses < 3
                };
            if candidate {
                if self.guard.pluses == 0 {
                    let chunk = &input[plain_start..i];
                    self.send_carrier(chunk, out);
                }
                self.guard.pluses += 1;
                self.guard.last_plus = now;
                plain_start = i + 1;
            } else {
                if self.guard.pluses > 0 {
                    self.flush_held_pluses(out);
                    plain_start = i;
                }
                self.guard.last_activity = now;
            }
        }
        if self.guard.pluses == 0 {
            let chunk = &input[plain_start..];
            self.send_carrier(chunk, out);
        }
        input.len()
    }
}

impl fmt::Debug for ModemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModemState")
            .field("mode", &self.mode)
            .field("echo", &self.echo)
            .field("line", &String::from_utf8_lossy(&self.line))
            .field("carrier", &self.carrier)
            .field("pluses", &self.guard.pluses)
            .finish()
    }
}
