//! Frame transports: in-process channels and TCP, one connection per site.
//!
//! The coordinator side is a [`Hub`]: every inbound frame, from any site, is
//! queued on a single channel tagged with its connection index, and each
//! connection has its own outbound path.

use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use super::wire;
use super::FederationError;

/// Inbound frame or a connection failure, tagged with its connection index.
pub(crate) type Inbound = (usize, Result<Vec<u8>, String>);

pub(crate) enum Outbound {
    Channel(Sender<Vec<u8>>),
    Tcp(TcpStream),
}

pub struct Hub {
    inbox: Receiver<Inbound>,
    outs: Vec<Outbound>,
    /// Bytes received per connection.
    pub(crate) bytes_in: Vec<usize>,
    /// Bytes sent per connection.
    pub(crate) bytes_out: Vec<usize>,
    /// Connections that finished the protocol; their hang-ups are expected.
    pub(crate) done: Vec<bool>,
}

impl Hub {
    pub(crate) fn connections(&self) -> usize {
        self.outs.len()
    }

    /// Next inbound frame, or `None` once `deadline` passes.
    pub(crate) fn recv(&mut self, deadline: Instant) -> Result<Option<(usize, Vec<u8>)>, FederationError> {
        loop {
            let wait = deadline.saturating_duration_since(Instant::now());
            return match self.inbox.recv_timeout(wait) {
                Ok((conn, Ok(frame))) => {
                    self.bytes_in[conn] += frame.len();
                    Ok(Some((conn, frame)))
                }
                Ok((conn, Err(_))) if self.done[conn] => continue,
                Ok((conn, Err(e))) => Err(FederationError::Disconnected { conn, message: e }),
                Err(RecvTimeoutError::Timeout) => Ok(None),
                Err(RecvTimeoutError::Disconnected) => Ok(None),
            };
        }
    }

    pub(crate) fn send(&mut self, conn: usize, frame: &[u8]) -> Result<(), FederationError> {
        self.bytes_out[conn] += frame.len();
        match &mut self.outs[conn] {
            Outbound::Channel(tx) => tx
                .send(frame.to_vec())
                .map_err(|_| FederationError::Disconnected {
                    conn,
                    message: "site channel closed".into(),
                }),
            Outbound::Tcp(s) => s.write_all(frame).and_then(|_| s.flush()).map_err(|e| FederationError::Disconnected {
                conn,
                message: e.to_string(),
            }),
        }
    }
}

/// The site's end of a connection.
pub trait SiteLink {
    fn send(&mut self, frame: &[u8]) -> Result<(), FederationError>;
    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, FederationError>;
}

pub struct ChannelSiteLink {
    conn: usize,
    up: Sender<Inbound>,
    down: Receiver<Vec<u8>>,
}

impl SiteLink for ChannelSiteLink {
    fn send(&mut self, frame: &[u8]) -> Result<(), FederationError> {
        self.up.send((self.conn, Ok(frame.to_vec()))).map_err(|_| FederationError::Disconnected {
            conn: self.conn,
            message: "coordinator channel closed".into(),
        })
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, FederationError> {
        self.down.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => FederationError::Timeout {
                site: format!("coordinator (connection {})", self.conn),
                phase: "model push",
            },
            RecvTimeoutError::Disconnected => FederationError::Disconnected {
                conn: self.conn,
                message: "coordinator channel closed".into(),
            },
        })
    }
}

/// In-process hub with `n` channel links.
pub fn channel_hub(n: usize) -> (Hub, Vec<ChannelSiteLink>) {
    let (tx, inbox) = mpsc::channel();
    let mut outs = Vec::with_capacity(n);
    let mut links = Vec::with_capacity(n);
    for conn in 0..n {
        let (dtx, drx) = mpsc::channel();
        outs.push(Outbound::Channel(dtx));
        links.push(ChannelSiteLink {
            conn,
            up: tx.clone(),
            down: drx,
        });
    }
    (
        Hub {
            inbox,
            outs,
            bytes_in: vec![0; n],
            bytes_out: vec![0; n],
            done: vec![false; n],
        },
        links,
    )
}

/// Reads exactly one frame; the frame is not decoded.
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let mut prefix = [0u8; 4];
    r.read_exact(&mut prefix)?;
    let total = wire::announced_len(&prefix).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let mut frame = vec![0u8; total];
    frame[..4].copy_from_slice(&prefix);
    r.read_exact(&mut frame[4..])?;
    Ok(frame)
}

pub struct TcpSiteLink {
    stream: TcpStream,
}

impl TcpSiteLink {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, FederationError> {
        let deadline = Instant::now() + timeout;
        // the coordinator may still be starting up
        loop {
            match TcpStream::connect(addr) {
                Ok(stream) => {
                    stream.set_nodelay(true).ok();
                    return Ok(Self { stream });
                }
                Err(e) if Instant::now() >= deadline => return Err(FederationError::Io(e)),
                Err(_) => thread::sleep(Duration::from_millis(50)),
            }
        }
    }
}

impl SiteLink for TcpSiteLink {
    fn send(&mut self, frame: &[u8]) -> Result<(), FederationError> {
        self.stream.write_all(frame)?;
        self.stream.flush()?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, FederationError> {
        self.stream.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        read_frame(&mut self.stream).map_err(|e| match e.kind() {
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => FederationError::Timeout {
                site: format!("coordinator at {}", self.stream.peer_addr().map_or("?".into(), |a| a.to_string())),
                phase: "model push",
            },
            _ => FederationError::Io(e),
        })
    }
}

impl Drop for TcpSiteLink {
    fn drop(&mut self) {
        self.stream.shutdown(Shutdown::Both).ok();
    }
}

/// Accepts `n` site connections on `listener` and starts one reader thread
/// per connection feeding the hub's queue. Connections are indexed in
/// accept order.
pub fn accept_hub(listener: &TcpListener, n: usize, timeout: Duration) -> Result<Hub, FederationError> {
    let deadline = Instant::now() + timeout;
    listener.set_nonblocking(true)?;
    let (tx, inbox) = mpsc::channel();
    let mut outs = Vec::with_capacity(n);
    while outs.len() < n {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true).ok();
                let conn = outs.len();
                let mut reader = stream.try_clone()?;
                let tx = tx.clone();
                thread::spawn(move || loop {
                    match read_frame(&mut reader) {
                        Ok(frame) => {
                            if tx.send((conn, Ok(frame))).is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            let _ = tx.send((conn, Err(e.to_string())));
                            break;
                        }
                    }
                });
                outs.push(Outbound::Tcp(stream));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(FederationError::Timeout {
                        site: format!("{} of {n} sites never connected", n - outs.len()),
                        phase: "connect",
                    });
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
    listener.set_nonblocking(false)?;
    Ok(Hub {
        inbox,
        outs,
        bytes_in: vec![0; n],
        bytes_out: vec![0; n],
        done: vec![false; n],
    })
}
