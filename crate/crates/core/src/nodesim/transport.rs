//! Link abstraction between the node and the ingestion service.
//!
//! Simulated transports never sleep: a lost frame or ACK surfaces as an
//! immediate [`LinkError::Timeout`] and the caller accounts the simulated wait.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::wire::TERMINATOR;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error("connection refused")]
    Refused,
    #[error("timed out waiting for a reply")]
    Timeout,
    #[error("connection closed by peer")]
    Closed,
    #[error("i/o error: {0}")]
    Io(String),
}

/// Server-side consumer of one frame; returns the ACK line to send back.
pub trait FrameHandler: Send + Sync {
    fn handle(&self, frame: &[u8]) -> Vec<u8>;
}

impl<H: FrameHandler + ?Sized> FrameHandler for Arc<H> {
    fn handle(&self, frame: &[u8]) -> Vec<u8> {
        (**self).handle(frame)
    }
}

pub trait Connection: Send {
    /// Writes one complete frame.
    fn send(&mut self, frame: &[u8]) -> Result<(), LinkError>;
    /// Reads one CRLF-terminated line, terminator included.
    fn recv_line(&mut self, timeout_ms: u64) -> Result<Vec<u8>, LinkError>;
}

pub trait Transport: Send {
    fn connect(&mut self) -> Result<Box<dyn Connection>, LinkError>;
}

/// In-process link straight into a handler.
pub struct LoopbackTransport<H> {
    handler: Arc<H>,
}

impl<H: FrameHandler + 'static> LoopbackTransport<H> {
    pub fn new(handler: Arc<H>) -> Self {
        Self { handler }
    }
}

struct LoopbackConnection<H> {
    handler: Arc<H>,
    replies: VecDeque<Vec<u8>>,
}

impl<H: FrameHandler + 'static> Connection for LoopbackConnection<H> {
    fn send(&mut self, frame: &[u8]) -> Result<(), LinkError> {
        let reply = self.handler.handle(frame);
        self.replies.push_back(reply);
        Ok(())
    }

    fn recv_line(&mut self, _timeout_ms: u64) -> Result<Vec<u8>, LinkError> {
        self.replies.pop_front().ok_or(LinkError::Timeout)
    }
}

impl<H: FrameHandler + 'static> Transport for LoopbackTransport<H> {
    fn connect(&mut self) -> Result<Box<dyn Connection>, LinkError> {
        Ok(Box::new(LoopbackConnection {
            handler: Arc::clone(&self.handler),
            replies: VecDeque::new(),
        }))
    }
}

/// Refuses every connection attempt and counts them.
#[derive(Debug, Default)]
pub struct RefusingTransport {
    pub attempts: u32,
}

impl Transport for RefusingTransport {
    fn connect(&mut self) -> Result<Box<dyn Connection>, LinkError> {
        self.attempts += 1;
        Err(LinkError::Refused)
    }
}

/// Wraps another transport and drops frames and ACKs independently with
/// seeded probabilities. The first `refuse_first` connects are refused.
pub struct LossyTransport<T> {
    inner: T,
    frame_loss: f64,
    ack_loss: f64,
    refuse_first: u32,
    attempts: u32,
    rng: Arc<Mutex<ChaCha8Rng>>,
}

impl<T: Transport> LossyTransport<T> {
    pub fn new(inner: T, frame_loss: f64, ack_loss: f64, seed: u64) -> Self {
        Self {
            inner,
            frame_loss: frame_loss.clamp(0.0, 1.0),
            ack_loss: ack_loss.clamp(0.0, 1.0),
            refuse_first: 0,
            attempts: 0,
            rng: Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed))),
        }
    }

    pub fn refuse_first(mut self, n: u32) -> Self {
        self.refuse_first = n;
        self
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }
}

struct LossyConnection {
    inner: Box<dyn Connection>,
    frame_loss: f64,
    ack_loss: f64,
    /// The last frame was dropped, so no reply is in flight.
    dropped: bool,
    rng: Arc<Mutex<ChaCha8Rng>>,
}

impl LossyConnection {
    fn lose(&self, p: f64) -> bool {
        p > 0.0 && self.rng.lock().expect("rng lock").random_bool(p)
    }
}

impl Connection for LossyConnection {
    fn send(&mut self, frame: &[u8]) -> Result<(), LinkError> {
        self.dropped = self.lose(self.frame_loss);
        if self.dropped {
            return Ok(());
        }
        self.inner.send(frame)
    }

    fn recv_line(&mut self, timeout_ms: u64) -> Result<Vec<u8>, LinkError> {
        if std::mem::take(&mut self.dropped) {
            return Err(LinkError::Timeout);
        }
        let line = self.inner.recv_line(timeout_ms)?;
        if self.lose(self.ack_loss) {
            return Err(LinkError::Timeout);
        }
        Ok(line)
    }
}

impl<T: Transport> Transport for LossyTransport<T> {
    fn connect(&mut self) -> Result<Box<dyn Connection>, LinkError> {
        self.attempts += 1;
        if self.attempts <= self.refuse_first {
            return Err(LinkError::Refused);
        }
        Ok(Box::new(LossyConnection {
            inner: self.inner.connect()?,
            frame_loss: self.frame_loss,
            ack_loss: self.ack_loss,
            dropped: false,
            rng: Arc::clone(&self.rng),
        }))
    }
}

/// Plain TCP client.
#[derive(Debug, Clone)]
pub struct TcpTransport {
    addr: SocketAddr,
    connect_timeout: Duration,
}

impl TcpTransport {
    pub fn new(addr: impl ToSocketAddrs) -> Result<Self, LinkError> {
        let addr = addr
            .to_socket_addrs()
            .map_err(|e| LinkError::Io(e.to_string()))?
            .next()
            .ok_or_else(|| LinkError::Io("address resolved to nothing".into()))?;
        Ok(Self {
            addr,
            connect_timeout: Duration::from_secs(5),
        })
    }
}

struct TcpConnection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    partial: Vec<u8>,
}

fn map_io(e: std::io::Error) -> LinkError {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => LinkError::Timeout,
        ErrorKind::ConnectionRefused => LinkError::Refused,
        ErrorKind::ConnectionReset | ErrorKind::BrokenPipe | ErrorKind::UnexpectedEof => {
            LinkError::Closed
        }
        _ => LinkError::Io(e.to_string()),
    }
}

impl Connection for TcpConnection {
    fn send(&mut self, frame: &[u8]) -> Result<(), LinkError> {
        self.writer.write_all(frame).map_err(map_io)?;
        self.writer.flush().map_err(map_io)
    }

    fn recv_line(&mut self, timeout_ms: u64) -> Result<Vec<u8>, LinkError> {
        self.reader
            .get_ref()
            .set_read_timeout(Some(Duration::from_millis(timeout_ms.max(1))))
            .map_err(map_io)?;
        // bytes of a line cut by a timeout stay in `partial` for the next call
        match self.reader.read_until(b'\n', &mut self.partial) {
            Ok(0) => Err(LinkError::Closed),
            Ok(_) if self.partial.ends_with(TERMINATOR) => Ok(std::mem::take(&mut self.partial)),
            Ok(_) => Err(LinkError::Closed),
            Err(e) => Err(map_io(e)),
        }
    }
}

impl Transport for TcpTransport {
    fn connect(&mut self) -> Result<Box<dyn Connection>, LinkError> {
        let stream =
            TcpStream::connect_timeout(&self.addr, self.connect_timeout).map_err(map_io)?;
        stream.set_nodelay(true).map_err(map_io)?;
        let writer = stream.try_clone().map_err(map_io)?;
        Ok(Box::new(TcpConnection {
            reader: BufReader::new(stream),
            writer,
            partial: Vec::new(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;
    impl FrameHandler for Echo {
        fn handle(&self, frame: &[u8]) -> Vec<u8> {
            frame.to_vec()
        }
    }

    #[test]
    fn loopback_replies_in_order() {
        let mut t = LoopbackTransport::new(Arc::new(Echo));
        let mut c = t.connect().unwrap();
        c.send(b"a\r\n").unwrap();
        c.send(b"b\r\n").unwrap();
        assert_eq!(c.recv_line(10).unwrap(), b"a\r\n");
        assert_eq!(c.recv_line(10).unwrap(), b"b\r\n");
        assert_eq!(c.recv_line(10), Err(LinkError::Timeout));
    }

    #[test]
    fn lossy_total_loss_and_refusals() {
        let mut t = LossyTransport::new(LoopbackTransport::new(Arc::new(Echo)), 1.0, 0.0, 3)
            .refuse_first(2);
        assert!(t.connect().is_err());
        assert!(t.connect().is_err());
        let mut c = t.connect().unwrap();
        c.send(b"x\r\n").unwrap();
        assert_eq!(c.recv_line(10), Err(LinkError::Timeout));
        assert_eq!(t.attempts(), 3);
    }

    #[test]
    fn tcp_line_roundtrip() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            let mut r = BufReader::new(s.try_clone().unwrap());
            let mut line = Vec::new();
            r.read_until(b'\n', &mut line).unwrap();
            (&s).write_all(&line).unwrap();
        });
        let mut t = TcpTransport::new(addr).unwrap();
        let mut c = t.connect().unwrap();
        c.send(b"PING\r\n").unwrap();
        assert_eq!(c.recv_line(2000).unwrap(), b"PING\r\n");
        server.join().unwrap();
        assert_eq!(c.recv_line(2000), Err(LinkError::Closed));
    }
}
