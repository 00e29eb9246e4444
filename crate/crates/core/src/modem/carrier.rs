//! Data-mode carriers.
//!
//! A TCP carrier moves bytes on its own reader and writer threads and talks to
//! the modem only through channels, so the platform loop never blocks on the
//! network.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::thread;
use std::time::Duration;

use super::dial_plan::CarrierTarget;

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);

enum Inbound {
    Data(Vec<u8>),
    Closed,
}

pub struct TcpCarrier {
    stream: TcpStream,
    outbound: Option<Sender<Vec<u8>>>,
    inbound: Receiver<Inbound>,
}

impl TcpCarrier {
    pub fn connect(host: &str, port: u16, timeout: Duration) -> io::Result<Self> {
        let mut last_err = io::Error::new(io::ErrorKind::NotFound, "no address resolved");
        for addr in (host, port).to_socket_addrs()? {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(stream) => return Self::from_stream(stream),
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    fn from_stream(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let mut reader = stream.try_clone()?;
        let mut writer = stream.try_clone()?;
        let (in_tx, in_rx) = mpsc::channel();
        let (out_tx, out_rx) = mpsc::channel::<Vec<u8>>();

        thread::Builder::new()
            .name("carrier-rx".into())
            .spawn(move || {
                let mut buf = [0u8; 4096];
                loop {
                    match reader.read(&mut buf) {
                        Ok(0) | Err(_) => {
                            let _ = in_tx.send(Inbound::Closed);
                            return;
                        }
                        Ok(n) => {
                            if in_tx.send(Inbound::Data(buf[..n].to_vec())).is_err() {
                                return;
                            }
                        }
                    }
                }
            })?;
        thread::Builder::new()
            .name("carrier-tx".into())
            .spawn(move || {
                for chunk in out_rx {
                    if writer.write_all(&chunk).is_err() {
                        return;
                    }
                }
                let _ = writer.shutdown(Shutdown::Write);
            })?;

        Ok(Self {
            stream,
            outbound: Some(out_tx),
            inbound: in_rx,
        })
    }
}

impl Drop for TcpCarrier {
    fn drop(&mut self) {
        self.outbound.take();
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

enum Link {
    Loopback,
    Tcp(TcpCarrier),
}

/// An established carrier plus bytes received but not yet delivered.
pub struct Carrier {
    target: CarrierTarget,
    link: Link,
    rx: VecDeque<u8>,
    remote_closed: bool,
}

impl Carrier {
    pub fn connect(target: &CarrierTarget) -> io::Result<Self> {
        let link = match target {
            CarrierTarget::Loopback => Link::Loopback,
            CarrierTarget::Tcp { host, port } => {
                Link::Tcp(TcpCarrier::connect(host, *port, CONNECT_TIMEOUT)?)
            }
        };
        Ok(Self {
            target: target.clone(),
            link,
            rx: VecDeque::new(),
            remote_closed: false,
        })
    }

    pub fn target(&self) -> &CarrierTarget {
        &self.target
    }

    pub fn connected(&self) -> bool {
        !self.remote_closed
    }

    pub fn send(&mut self, data: &[u8]) {
        if data.is_empty() {
            return;
        }
        match &mut self.link {
            Link::Loopback => self.rx.extend(data),
            Link::Tcp(tcp) => {
                if let Some(tx) = &tcp.outbound {
                    if tx.send(data.to_vec()).is_err() {
                        self.remote_closed = true;
                    }
                }
            }
        }
    }

    fn poll_link(&mut self) {
        let Link::Tcp(tcp) = &mut self.link else {
            return;
        };
        loop {
            match tcp.inbound.try_recv() {
                Ok(Inbound::Data(d)) => self.rx.extend(d),
                Ok(Inbound::Closed) | Err(TryRecvError::Disconnected) => {
                    self.remote_closed = true;
                    return;
                }
                Err(TryRecvError::Empty) => return,
            }
        }
    }

    /// Take up to `max` received bytes.
    pub fn recv(&mut self, max: usize) -> Vec<u8> {
        self.poll_link();
        let n = self.rx.len().min(max);
        self.rx.drain(..n).collect()
    }

    pub fn pending(&mut self) -> usize {
        self.poll_link();
        self.rx.len()
    }

    /// Remote side gone and every received byte delivered.
    pub fn finished(&mut self) -> bool {
        self.poll_link();
        self.remote_closed && self.rx.is_empty()
    }
}

impl std::fmt::Debug for Carrier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Carrier")
            .field("target", &self.target)
            .field("buffered", &self.rx.len())
            .field("remote_closed", &self.remote_closed)
            .finish()
    }
}
