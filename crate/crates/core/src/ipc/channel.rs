//! Datagram endpoints carrying 48-byte envelopes.
//!
//! Two transports share one interface: `inproc://name` (a process-local
//! queue registry, used when agents run as threads) and Unix datagram
//! sockets (`unix:///path` or a bare absolute path) between processes.

use std::collections::HashMap;
use std::fmt;
use std::io::ErrorKind;
use std::os::unix::net::UnixDatagram;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use crossbeam::channel::{self, RecvTimeoutError, TryRecvError, TrySendError};

use super::envelope::{Envelope, ENVELOPE_LEN};
use crate::error::{HaloError, Result};

const MAX_FRAME: usize = 64 * 1024;
/// Capacity of an in-process queue, in frames.
const INPROC_DEPTH: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Address {
    Inproc(String),
    Unix(PathBuf),
}

impl Address {
    pub fn parse(s: &str) -> Result<Address> {
        let s = s.trim();
        if let Some(name) = s.strip_prefix("inproc://") {
            if name.is_empty() {
                return Err(HaloError::BadArgument("empty inproc name".into()));
            }
            return Ok(Address::Inproc(name.to_string()));
        }
        let path = s
            .strip_prefix("unix://")
            .or_else(|| s.strip_prefix("ipc://"))
            .unwrap_or(s);
        if path.starts_with('/') && path.len() > 1 {
            Ok(Address::Unix(PathBuf::from(path)))
        } else {
            Err(HaloError::BadArgument(format!(
                "endpoint {s:?}: expected inproc://name, unix:///path or an absolute path"
            )))
        }
    }

    /// Address named `name` in the same namespace (same directory for sockets).
    pub fn sibling(&self, name: &str) -> Address {
        match self {
            Address::Inproc(_) => Address::Inproc(name.to_string()),
            Address::Unix(p) => Address::Unix(
                p.parent()
                    .map(|d| d.join(name))
                    .unwrap_or_else(|| PathBuf::from("/").join(name)),
            ),
        }
    }

    /// True if an endpoint is currently bound and accepting at this address.
    pub fn is_live(&self) -> bool {
        match self {
            Address::Inproc(n) => inproc_registry().lock().unwrap().contains_key(n),
            Address::Unix(p) => unix_is_live(p),
        }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::Inproc(n) => write!(f, "inproc://{n}"),
            Address::Unix(p) => write!(f, "unix://{}", p.display()),
        }
    }
}

impl std::str::FromStr for Address {
    type Err = HaloError;
    fn from_str(s: &str) -> Result<Address> {
        Address::parse(s)
    }
}

type Frame = Vec<u8>;

fn inproc_registry() -> &'static Mutex<HashMap<String, channel::Sender<Frame>>> {
    static R: OnceLock<Mutex<HashMap<String, channel::Sender<Frame>>>> = OnceLock::new();
    R.get_or_init(Default::default)
}

fn unix_is_live(p: &Path) -> bool {
    UnixDatagram::unbound()
        .and_then(|s| s.connect(p))
        .is_ok()
}

enum RecvSide {
    Inproc(channel::Receiver<Frame>),
    Unix(UnixDatagram),
}

/// A bound receiving endpoint. Unbinds on drop.
pub struct Endpoint {
    addr: Address,
    rx: RecvSide,
    buf: Vec<u8>,
}

impl Endpoint {
    pub fn bind(addr: &Address) -> Result<Endpoint> {
        let rx = match addr {
            Address::Inproc(name) => {
                let mut reg = inproc_registry().lock().unwrap();
                if reg.contains_key(name) {
                    return Err(HaloError::NoResource(format!("{addr} already bound")));
                }
                let (tx, rx) = channel::bounded(INPROC_DEPTH);
                reg.insert(name.clone(), tx);
                RecvSide::Inproc(rx)
            }
            Address::Unix(path) => {
                if path.exists() {
                    if unix_is_live(path) {
                        return Err(HaloError::NoResource(format!("{addr} already bound")));
                    }
                    let _ = std::fs::remove_file(path);
                }
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                RecvSide::Unix(UnixDatagram::bind(path).map_err(|e| {
                    HaloError::NoResource(format!("bind {}: {e}", path.display()))
                })?)
            }
        };
        Ok(Endpoint {
            addr: addr.clone(),
            rx,
            buf: vec![0; MAX_FRAME],
        })
    }

    pub fn address(&self) -> &Address {
        &self.addr
    }

    /// Receives one raw frame. `Ok(None)` on timeout; `None` timeout blocks.
    pub fn recv_frame(&mut self, timeout: Option<Duration>) -> Result<Option<Vec<u8>>> {
        match &self.rx {
            RecvSide::Inproc(rx) => match timeout {
                None => rx
                    .recv()
                    .map(Some)
                    .map_err(|_| HaloError::NoResource("endpoint closed".into())),
                Some(t) if t.is_zero() => match rx.try_recv() {
                    Ok(f) => Ok(Some(f)),
                    Err(TryRecvError::Empty) => Ok(None),
                    Err(TryRecvError::Disconnected) => {
                        Err(HaloError::NoResource("endpoint closed".into()))
                    }
                },
                Some(t) => match rx.recv_timeout(t) {
                    Ok(f) => Ok(Some(f)),
                    Err(RecvTimeoutError::Timeout) => Ok(None),
                    Err(RecvTimeoutError::Disconnected) => {
                        Err(HaloError::NoResource("endpoint closed".into()))
                    }
                },
            },
            RecvSide::Unix(sock) => {
                // zero is not a valid socket timeout
                let t = timeout.map(|t| t.max(Duration::from_micros(1)));
                sock.set_read_timeout(t)?;
                match sock.recv(&mut self.buf) {
                    Ok(n) => Ok(Some(self.buf[..n].to_vec())),
                    Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                        Ok(None)
                    }
                    Err(e) if e.kind() == ErrorKind::Interrupted => Ok(None),
                    Err(e) => Err(e.into()),
                }
            }
        }
    }

    /// Receives and decodes one envelope. A malformed frame is an
    /// `ERR_SERIALIZATION` error; the endpoint stays usable.
    pub fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<Envelope>> {
        match self.recv_frame(timeout)? {
            Some(f) => Envelope::decode(&f).map(Some),
            None => Ok(None),
        }
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        match &self.addr {
            Address::Inproc(n) => {
                inproc_registry().lock().unwrap().remove(n);
            }
            Address::Unix(p) => {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

#[derive(Clone)]
enum SendSide {
    Inproc(channel::Sender<Frame>),
    Unix {
        blocking: Arc<UnixDatagram>,
        nonblocking: Arc<UnixDatagram>,
    },
}

/// Sending handle to one address. Cheap to clone.
#[derive(Clone)]
pub struct Sender {
    addr: Address,
    tx: SendSide,
}

impl fmt::Debug for Sender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sender({})", self.addr)
    }
}

impl Sender {
    /// Fails with `ERR_NO_RESOURCE` if an inproc address is not bound.
    /// Socket addresses are resolved on each send.
    pub fn connect(addr: &Address) -> Result<Sender> {
        let tx = match addr {
            Address::Inproc(n) => SendSide::Inproc(
                inproc_registry()
                    .lock()
                    .unwrap()
                    .get(n)
                    .cloned()
                    .ok_or_else(|| HaloError::NoResource(format!("{addr} is not bound")))?,
            ),
            Address::Unix(_) => {
                let nb = UnixDatagram::unbound()?;
                nb.set_nonblocking(true)?;
                SendSide::Unix {
                    blocking: Arc::new(UnixDatagram::unbound()?),
                    nonblocking: Arc::new(nb),
                }
            }
        };
        Ok(Sender {
            addr: addr.clone(),
            tx,
        })
    }

    pub fn address(&self) -> &Address {
        &self.addr
    }

    pub fn send_frame(&self, frame: &[u8]) -> Result<()> {
        match &self.tx {
            SendSide::Inproc(tx) => tx
                .send(frame.to_vec())
                .map_err(|_| HaloError::NoResource(format!("{} closed", self.addr))),
            SendSide::Unix { blocking, .. } => {
                let Address::Unix(p) = &self.addr else {
                    unreachable!()
                };
                blocking
                    .send_to(frame, p)
                    .map(|_| ())
                    .map_err(|e| HaloError::NoResource(format!("send to {}: {e}", self.addr)))
            }
        }
    }

    /// Non-blocking send. `Ok(false)` means the peer queue is full.
    pub fn try_send_frame(&self, frame: &[u8]) -> Result<bool> {
        match &self.tx {
            SendSide::Inproc(tx) => match tx.try_send(frame.to_vec()) {
                Ok(()) => Ok(true),
                Err(TrySendError::Full(_)) => Ok(false),
                Err(TrySendError::Disconnected(_)) => {
                    Err(HaloError::NoResource(format!("{} closed", self.addr)))
                }
            },
            SendSide::Unix { nonblocking, .. } => {
                let Address::Unix(p) = &self.addr else {
                    unreachable!()
                };
                match nonblocking.send_to(frame, p) {
                    Ok(_) => Ok(true),
                    Err(e) if e.kind() == ErrorKind::WouldBlock => Ok(false),
                    Err(e) => Err(HaloError::NoResource(format!("send to {}: {e}", self.addr))),
                }
            }
        }
    }

    pub fn send(&self, env: &Envelope) -> Result<()> {
        self.send_frame(&env.encode())
    }

    pub fn try_send(&self, env: &Envelope) -> Result<bool> {
        self.try_send_frame(&env.encode())
    }
}

/// Frame length on the wire.
pub const FRAME_LEN: usize = ENVELOPE_LEN;
