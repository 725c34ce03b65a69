//! Line-framed TCP front end.

use std::io::{BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use bridgemon_core::nodesim::FrameHandler;
use bridgemon_core::wire::{ack_line, AckStatus};

use crate::IngestError;

/// Longest accepted frame, terminator included.
pub const MAX_FRAME_BYTES: usize = 1 << 20;

const POLL: Duration = Duration::from_millis(20);

pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    /// Binds and starts accepting; every connection gets its own thread.
    pub fn start<H: FrameHandler + 'static>(
        bind: impl ToSocketAddrs,
        handler: Arc<H>,
    ) -> Result<Self, IngestError> {
        let listener = TcpListener::bind(bind).map_err(|e| IngestError::Bind(e.to_string()))?;
        let addr = listener
            .local_addr()
            .map_err(|e| IngestError::Bind(e.to_string()))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| IngestError::Bind(e.to_string()))?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let stop = Arc::clone(&stop);
            std::thread::Builder::new()
                .name("ingest-accept".into())
                .spawn(move || accept_loop(listener, handler, stop))
                .map_err(|e| IngestError::Bind(e.to_string()))?
        };
        log::info!("listening on {addr}");
        Ok(Self {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Flag that stops the server when set.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    /// Blocks until the stop flag is set and the accept loop returns.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop<H: FrameHandler + 'static>(
    listener: TcpListener,
    handler: Arc<H>,
    stop: Arc<AtomicBool>,
) {
    let mut conns: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::debug!("connection from {peer}");
                let handler = Arc::clone(&handler);
                let stop = Arc::clone(&stop);
                match std::thread::Builder::new()
                    .name(format!("ingest-{peer}"))
                    .spawn(move || serve_connection(stream, handler, stop))
                {
                    Ok(h) => conns.push(h),
                    Err(e) => log::error!("cannot serve {peer}: {e}"),
                }
                conns.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(POLL);
            }
        }
    }
    for h in conns {
        let _ = h.join();
    }
}

enum Frame {
    Line(Vec<u8>),
    Oversized,
    Eof,
}

/// Reads up to and including `\n`. Oversized lines are consumed and dropped.
fn read_frame(
    r: &mut BufReader<TcpStream>,
    buf: &mut Vec<u8>,
    stop: &AtomicBool,
) -> std::io::Result<Frame> {
    let mut oversized = false;
    loop {
        let limit = (MAX_FRAME_BYTES + 1).saturating_sub(buf.len()) as u64;
        match r.by_ref().take(limit.max(1)).read_until(b'\n', buf) {
            Ok(0) if buf.is_empty() && !oversized => return Ok(Frame::Eof),
            Ok(0) => return Ok(Frame::Eof),
            Ok(_) if buf.ends_with(b"\n") => {
                let line = std::mem::take(buf);
                return Ok(if oversized {
                    Frame::Oversized
                } else {
                    Frame::Line(line)
                });
            }
            Ok(_) => {
                if buf.len() > MAX_FRAME_BYTES {
                    oversized = true;
                    buf.clear();
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if stop.load(Ordering::SeqCst) {
                    return Ok(Frame::Eof);
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
}

fn serve_connection<H: FrameHandler>(stream: TcpStream, handler: Arc<H>, stop: Arc<AtomicBool>) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
    let Ok(mut writer) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        let reply = match read_frame(&mut reader, &mut buf, &stop) {
            Ok(Frame::Line(line)) => handler.handle(&line),
            Ok(Frame::Oversized) => ack_line(AckStatus::Err, 0),
            Ok(Frame::Eof) => return,
            Err(e) => {
                log::debug!("connection dropped: {e}");
                return;
            }
        };
        if writer
            .write_all(&reply)
            .and_then(|_| writer.flush())
            .is_err()
        {
            return;
        }
    }
}
