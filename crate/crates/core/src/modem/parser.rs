//! AT command line parser.
//!
//! Grammar (case-insensitive):
//!
//! ```text
//! line    := "AT" command*
//! command := "D" dial-rest        ; consumes the rest of the line
//!          | "H" ["0"]
//!          | "E" ["0" | "1"]
//!          | "Z" ["0"]
//! ```
//!
//! Spaces between commands are ignored. Anything else turns the whole line
//! into a single [`AtCommand::Unknown`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AtCommand {
    Dial(String),
    Hangup,
    Echo(bool),
    Reset,
    Unknown(String),
}

impl fmt::Display for AtCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtCommand::Dial(s) => write!(f, "D{s}"),
            AtCommand::Hangup => f.write_str("H0"),
            AtCommand::Echo(on) => write!(f, "E{}", u8::from(*on)),
            AtCommand::Reset => f.write_str("Z"),
            AtCommand::Unknown(s) => write!(f, "?{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line does not start with AT")]
    NotAtPrefixed,
}

/// Normalize a dial string: drop a leading tone/pulse modifier and the
/// punctuation people type into phone numbers.
fn dial_string(rest: &str) -> String {
    let rest = rest.trim_start();
    let rest = match rest.as_bytes().first() {
        Some(b'T' | b't' | b'P' | b'p') => &rest[1..],
        _ => rest,
    };
    rest.chars()
        .filter(|c| !matches!(c, ' ' | '-' | '(' | ')' | '.'))
        .collect()
}

pub fn parse_at_line(line: &str) -> Result<Vec<AtCommand>, ParseError> {
    let line = line.trim();
    let prefix = line.get(..2).ok_or(ParseError::NotAtPrefixed)?;
    if !prefix.eq_ignore_ascii_case("AT") {
        return Err(ParseError::NotAtPrefixed);
    }
    let body = &line[2..];
    let bytes = body.as_bytes();
    let mut commands = Vec::new();
    let mut i = 0;

    let unknown = |from: usize| vec![AtCommand::Unknown(body[from..].to_string())];

    while i < bytes.len() {
        let start = i;
        let c = bytes[i].to_ascii_uppercase();
        let next = bytes.get(i + 1).copied();
        i += 1;
        match c {
            b' ' => {}
            b'D' => {
                commands.push(AtCommand::Dial(dial_string(&body[i..])));
                return Ok(commands);
            }
            b'H' => match next {
                Some(b'0') => {
                    i += 1;
                    commands.push(AtCommand::Hangup);
                }
                Some(d) if d.is_ascii_digit() => return Ok(unknown(start)),
                _ => commands.push(AtCommand::Hangup),
            },
            b'E' => match next {
                Some(b'0') => {
                    i += 1;
                    commands.push(AtCommand::Echo(false));
                }
                Some(b'1') => {
                    i += 1;
                    commands.push(AtCommand::Echo(true));
                }
                Some(d) if d.is_ascii_digit() => return Ok(unknown(start)),
                _ => commands.push(AtCommand::Echo(false)),
            },
            b'Z' => match next {
                Some(b'0') => {
                    i += 1;
                    commands.push(AtCommand::Reset);
                }
                Some(d) if d.is_ascii_digit() => return Ok(unknown(start)),
                _ => commands.push(AtCommand::Reset),
            },
            _ => return Ok(unknown(start)),
        }
    }
    Ok(commands)
}
