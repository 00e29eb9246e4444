//! Paired bounded byte rings shared by exactly two handles.
//!
//! A [`DuplexChannel`] is created as a pair of [`ChannelHandle`]s: one for the
//! native application side and one for the platform side. Each direction is a
//! single-producer/single-consumer ring with monotonic read and write counters,
//! so full and empty are always distinguishable and wraparound is a mask.
//!
//! ```text
//!   Application handle                       Platform handle
//!   write ──► [ app_to_platform ring ] ──► read
//!   read  ◄── [ platform_to_app ring ] ◄── write
//! ```
//!
//! Reads and writes never block. A write accepts the longest prefix that fits.
//! Closing a handle disconnects the peer's writes while leaving buffered bytes
//! readable; once drained the peer reads [`ChannelError::EndOfStream`].

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU8, AtomicUsize, Ordering};
use std::sync::Arc;

use thiserror::Error;

/// Default per-direction capacity in bytes.
pub const DEFAULT_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("invalid capacity {0}: must be a power of two and at least 2")]
    InvalidCapacity(usize),
    #[error("handle is closed")]
    ClosedHandle,
    #[error("peer handle disconnected")]
    PeerDisconnected,
    #[error("end of stream")]
    EndOfStream,
}

/// Which end of the channel a handle belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Application,
    Platform,
}

impl Side {
    pub fn peer(self) -> Side {
        match self {
            Side::Application => Side::Platform,
            Side::Platform => Side::Application,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Application => f.write_str("application"),
            Side::Platform => f.write_str("platform"),
        }
    }
}

/// Bounded SPSC byte ring.
///
/// `write_pos` is only advanced by the producer and `read_pos` only by the
/// consumer. Byte cells are relaxed atomics; the Release/Acquire pair on the
/// counters publishes them.
pub struct RingBuffer {
    storage: Box<[AtomicU8]>,
    mask: usize,
    read_pos: AtomicUsize,
    write_pos: AtomicUsize,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Result<Self, ChannelError> {
        if capacity < 2 || !capacity.is_power_of_two() {
            return Err(ChannelError::InvalidCapacity(capacity));
        }
        Ok(Self {
            storage: (0..capacity).map(|_| AtomicU8::new(0)).collect(),
            mask: capacity - 1,
            read_pos: AtomicUsize::new(0),
            write_pos: AtomicUsize::new(0),
        })
    }

    pub fn capacity(&self) -> usize {
        self.storage.len()
    }

    /// Bytes currently buffered.
    pub fn len(&self) -> usize {
        let w = self.write_pos.load(Ordering::Acquire);
        let r = self.read_pos.load(Ordering::Acquire);
        w.wrapping_sub(r)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn free(&self) -> usize {
        self.capacity() - self.len()
    }

    /// Total bytes ever enqueued.
    pub fn write_pos(&self) -> usize {
        self.write_pos.load(Ordering::Acquire)
    }

    /// Total bytes ever dequeued.
    pub fn read_pos(&self) -> usize {
        self.read_pos.load(Ordering::Acquire)
    }

    // Producer side only.
    fn push(&self, data: &[u8]) -> usize {
        let w = self.write_pos.load(Ordering::Relaxed);
        let r = self.read_pos.load(Ordering::Acquire);
        let free = self.capacity() - w.wrapping_sub(r);
        let n = free.min(data.len());
        for (i, b) in data[..n].iter().enumerate() {
            self.storage[w.wrapping_add(i) & self.mask].store(*b, Ordering::Relaxed);
        }
        self.write_pos.store(w.wrapping_add(n), Ordering::Release);
        n
    }

    // Consumer side only.
    fn pop(&self, out: &mut [u8]) -> usize {
        let r = self.read_pos.load(Ordering::Relaxed);
        let w = self.write_pos.load(Ordering::Acquire);
        let n = w.wrapping_sub(r).min(out.len());
        for (i, slot) in out[..n].iter_mut().enumerate() {
            *slot = self.storage[r.wrapping_add(i) & self.mask].load(Ordering::Relaxed);
        }
        self.read_pos.store(r.wrapping_add(n), Ordering::Release);
        n
    }
}

impl fmt::Debug for RingBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RingBuffer")
            .field("capacity", &self.capacity())
            .field("read_pos", &self.read_pos())
            .field("write_pos", &self.write_pos())
            .finish()
    }
}

/// Shared state behind both handles.
#[derive(Debug)]
pub struct DuplexChannel {
    app_to_platform: RingBuffer,
    platform_to_app: RingBuffer,
    app_open: AtomicBool,
    platform_open: AtomicBool,
}

impl DuplexChannel {
    fn inbound(&self, side: Side) -> &RingBuffer {
        match side {
            Side::Application => &self.platform_to_app,
            Side::Platform => &self.app_to_platform,
        }
    }

    fn outbound(&self, side: Side) -> &RingBuffer {
        match side {
            Side::Application => &self.app_to_platform,
            Side::Platform => &self.platform_to_app,
        }
    }

    fn open_flag(&self, side: Side) -> &AtomicBool {
        match side {
            Side::Application => &self.app_open,
            Side::Platform => &self.platform_open,
        }
    }
}

/// Snapshot returned by [`ChannelHandle::poll`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PollState {
    pub readable: usize,
    pub writable: usize,
    pub peer_open: bool,
}

/// One of the two handles onto a [`DuplexChannel`].
///
/// Handles are not `Clone`: a channel has exactly one application handle and
/// one platform handle for its whole life. Dropping a handle closes it.
pub struct ChannelHandle {
    side: Side,
    channel: Arc<DuplexChannel>,
}

/// Create a channel and return `(application, platform)` handles.
pub fn create_duplex(capacity: usize) -> Result<(ChannelHandle, ChannelHandle), ChannelError> {
    let channel = Arc::new(DuplexChannel {
        app_to_platform: RingBuffer::new(capacity)?,
        platform_to_app: RingBuffer::new(capacity)?,
        app_open: AtomicBool::new(true),
        platform_open: AtomicBool::new(true),
    });
    let app = ChannelHandle {
        side: Side::Application,
        channel: channel.clone(),
    };
    let platform = ChannelHandle {
        side: Side::Platform,
        channel,
    };
    Ok((app, platform))
}

impl ChannelHandle {
    pub fn side(&self) -> Side {
        self.side
    }

    pub fn capacity(&self) -> usize {
        self.channel.outbound(self.side).capacity()
    }

    pub fn is_open(&self) -> bool {
        self.channel.open_flag(self.side).load(Ordering::Acquire)
    }

    pub fn peer_open(&self) -> bool {
        self.channel
            .open_flag(self.side.peer())
            .load(Ordering::Acquire)
    }

    /// Enqueue as much of `data` as fits and return the accepted count.
    pub fn write(&mut self, data: &[u8]) -> Result<usize, ChannelError> {
        if !self.is_open() {
            return Err(ChannelError::ClosedHandle);
        }
        if !self.peer_open() {
            return Err(ChannelError::PeerDisconnected);
        }
        Ok(self.channel.outbound(self.side).push(data))
    }

    /// Copy up to `buf.len()` inbound bytes into `buf`.
    ///
    /// Returns `Ok(0)` when nothing is buffered and the peer is still open.
    pub fn read_into(&mut self, buf: &mut [u8]) -> Result<usize, ChannelError> {
        if !self.is_open() {
            return Err(ChannelError::ClosedHandle);
        }
        let ring = self.channel.inbound(self.side);
        // Sample the peer flag before popping so a close racing with the
        // final write cannot hide bytes behind an EndOfStream.
        let peer_open = self.peer_open();
        let n = ring.pop(buf);
        if n == 0 && !buf.is_empty() && !peer_open && ring.is_empty() {
            return Err(ChannelError::EndOfStream);
        }
        Ok(n)
    }

    /// Read up to `max` bytes; an empty vector means no data yet.
    pub fn read(&mut self, max: usize) -> Result<Vec<u8>, ChannelError> {
        let avail = self.channel.inbound(self.side).len().min(max);
        let mut buf = vec![0u8; avail.max(usize::from(max > 0))];
        let n = self.read_into(&mut buf)?;
        buf.truncate(n);
        Ok(buf)
    }

    pub fn poll(&self) -> PollState {
        PollState {
            readable: self.channel.inbound(self.side).len(),
            writable: self.channel.outbound(self.side).free(),
            peer_open: self.peer_open(),
        }
    }

    /// Counters of the outbound ring as `(read_pos, write_pos)`.
    pub fn outbound_counters(&self) -> (usize, usize) {
        let ring = self.channel.outbound(self.side);
        (ring.read_pos(), ring.write_pos())
    }

    /// Counters of the inbound ring as `(read_pos, write_pos)`.
    pub fn inbound_counters(&self) -> (usize, usize) {
        let ring = self.channel.inbound(self.side);
        (ring.read_pos(), ring.write_pos())
    }

    /// Close this handle. Idempotent.
    pub fn close(&mut self) {
        self.channel
            .open_flag(self.side)
            .store(false, Ordering::Release);
    }
}

impl Drop for ChannelHandle {
    fn drop(&mut self) {
        self.close();
    }
}

impl fmt::Debug for ChannelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChannelHandle")
            .field("side", &self.side)
            .field("open", &self.is_open())
            .field("peer_open", &self.peer_open())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    #[test]
    fn fresh_channel_is_empty() {
        let (app, platform) = create_duplex(DEFAULT_CAPACITY).unwrap();
        assert!(app.is_open() && platform.is_open());
        assert_eq!(app.poll().readable, 0);
        assert_eq!(platform.poll().readable, 0);
        assert_eq!(app.poll().writable, DEFAULT_CAPACITY);
        assert_eq!(app.outbound_counters(), (0, 0));
    }

    #[test]
    fn rejects_bad_capacity() {
        for cap in [0, 1, 3, 6, 4095] {
            assert_eq!(
                create_duplex(cap).unwrap_err(),
                ChannelError::InvalidCapacity(cap)
            );
        }
        assert!(create_duplex(2).is_ok());
    }

    #[test]
    fn capacity_two_bounds_writes() {
        let (mut app, _platform) = create_duplex(2).unwrap();
        // Oracle: a bounded queue of two slots.
        let mut oracle: VecDeque<u8> = VecDeque::with_capacity(2);
        let offer = |q: &mut VecDeque<u8>, b: u8| {
            if q.len() < 2 {
                q.push_back(b);
                1
            } else {
                0
            }
        };
        assert_eq!(app.write(b"a").unwrap(), offer(&mut oracle, b'a'));
        assert_eq!(app.write(b"b").unwrap(), offer(&mut oracle, b'b'));
        assert_eq!(app.write(b"c").unwrap(), offer(&mut oracle, b'c'));
        assert_eq!(app.write(b"c").unwrap(), 0);
    }

    #[test]
    fn partial_write_when_nearly_full() {
        let (mut app, mut platform) = create_duplex(8).unwrap();
        assert_eq!(app.write(b"1234567").unwrap(), 7);
        assert_eq!(app.write(b"abcde").unwrap(), 1);
        assert_eq!(platform.read(100).unwrap(), b"1234567a");
        assert_eq!(app.write(b"").unwrap(), 0);
    }

    #[test]
    fn pass_through_and_empty_read() {
        let (mut app, mut platform) = create_duplex(16).unwrap();
        assert_eq!(platform.read(10).unwrap(), b"");
        assert_eq!(app.write(b"ATD").unwrap(), 3);
        assert_eq!(platform.read(10).unwrap(), b"ATD");
        assert_eq!(platform.write(b"OK").unwrap(), 2);
        assert_eq!(app.read(1).unwrap(), b"O");
        assert_eq!(app.read(1).unwrap(), b"K");
    }

    #[test]
    fn wraps_around() {
        let (mut app, mut platform) = create_duplex(4).unwrap();
        for round in 0..50u8 {
            let chunk = [round, round.wrapping_add(1), round.wrapping_add(2)];
            assert_eq!(app.write(&chunk).unwrap(), 3);
            assert_eq!(platform.read(8).unwrap(), chunk);
        }
        assert_eq!(app.outbound_counters(), (150, 150));
    }

    #[test]
    fn close_drains_then_eof() {
        let (mut app, mut platform) = create_duplex(16).unwrap();
        app.write(b"bye").unwrap();
        app.close();
        assert!(!platform.poll().peer_open);
        assert_eq!(platform.write(b"x"), Err(ChannelError::PeerDisconnected));
        assert_eq!(platform.read(2).unwrap(), b"by");
        assert_eq!(platform.read(2).unwrap(), b"e");
        assert_eq!(platform.read(2), Err(ChannelError::EndOfStream));
        assert_eq!(app.write(b"x"), Err(ChannelError::ClosedHandle));
        assert_eq!(app.read(1), Err(ChannelError::ClosedHandle));
    }

    #[test]
    fn double_close_is_noop() {
        let (mut app, platform) = create_duplex(16).unwrap();
        app.close();
        let before = (platform.poll(), app.is_open());
        app.close();
        assert_eq!(before, (platform.poll(), app.is_open()));
    }

    #[test]
    fn drop_closes_handle() {
        let (app, mut platform) = create_duplex(16).unwrap();
        drop(app);
        assert_eq!(platform.write(b"x"), Err(ChannelError::PeerDisconnected));
        assert_eq!(platform.read(1), Err(ChannelError::EndOfStream));
    }

    #[test]
    fn directions_never_cross() {
        let (mut app, mut platform) = create_duplex(16).unwrap();
        app.write(b"up").unwrap();
        assert_eq!(app.read(10).unwrap(), b"");
        platform.write(b"down").unwrap();
        assert_eq!(platform.read(10).unwrap(), b"up");
        assert_eq!(app.read(10).unwrap(), b"down");
    }

    #[test]
    fn cross_thread_transfer_is_lossless() {
        let (mut app, mut platform) = create_duplex(64).unwrap();
        let payload: Vec<u8> = (0..200_000u32).map(|i| (i * 31 % 251) as u8).collect();
        let expected = payload.clone();
        let writer = std::thread::spawn(move || {
            let mut off = 0;
            while off < payload.len() {
                off += app.write(&payload[off..]).unwrap();
                std::thread::yield_now();
            }
        });
        let mut got = Vec::with_capacity(expected.len());
        let mut buf = [0u8; 37];
        loop {
            match platform.read_into(&mut buf) {
                Ok(0) => std::thread::yield_now(),
                Ok(n) => got.extend_from_slice(&buf[..n]),
                Err(ChannelError::EndOfStream) => break,
                Err(e) => panic!("{e}"),
            }
        }
        writer.join().unwrap();
        assert_eq!(got, expected);
    }
}
