use std::io::{self, BufRead, BufReader, Write};
use std::os::unix::net::UnixStream;
use std::path::Path;

use thiserror::Error;

use super::protocol::{decode, encode, ControlRequest, ControlResponse, Payload};
use crate::trace::TraceEvent;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach daemon: {0}")]
    Io(#[from] io::Error),
    #[error("bad response from daemon: {0}")]
    Protocol(#[from] serde_json::Error),
    #[error("daemon closed the connection")]
    Closed,
    #[error("unexpected response: {0:?}")]
    Unexpected(Box<ControlResponse>),
}

pub struct Client {
    reader: BufReader<UnixStream>,
    writer: UnixStream,
}

impl Client {
    pub fn connect(path: &Path) -> Result<Self, ClientError> {
        let stream = UnixStream::connect(path)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    fn read_line(&mut self) -> Result<String, ClientError> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ClientError::Closed);
        }
        Ok(line)
    }

    pub fn request(&mut self, req: &ControlRequest) -> Result<ControlResponse, ClientError> {
        self.writer.write_all(encode(req).as_bytes())?;
        let line = self.read_line()?;
        Ok(decode(&line)?)
    }

    /// Subscribe to the trace stream: returns retained history and an
    /// iterator over events that follow it.
    pub fn follow_trace(mut self) -> Result<(Vec<TraceEvent>, TraceStream), ClientError> {
        match self.request(&ControlRequest::Trace { follow: true })? {
            ControlResponse::Ok(Payload::Trace { events }) => Ok((events, TraceStream(self))),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }
}

pub struct TraceStream(Client);

impl Iterator for TraceStream {
    type Item = Result<TraceEvent, ClientError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.0.read_line() {
            Ok(line) => Some(decode(&line).map_err(ClientError::from)),
            Err(ClientError::Closed) => None,
            Err(e) => Some(Err(e)),
        }
    }
}
