//! Datagram transports: a UDP socket, and an in-process network with
//! seeded loss injection and a wiretap for tests.

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Largest datagram any transport accepts.
pub const MAX_DATAGRAM: usize = 65_507;

pub trait Transport: Send + Sync {
    fn send_to(&self, addr: SocketAddr, bytes: &[u8]) -> io::Result<()>;
    /// Waits up to `timeout` for one datagram.
    fn recv(&self, timeout: Duration) -> io::Result<Option<(SocketAddr, Vec<u8>)>>;
    fn local_addr(&self) -> SocketAddr;
}

#[derive(Debug)]
pub struct UdpTransport {
    socket: UdpSocket,
    addr: SocketAddr,
}

impl UdpTransport {
    pub fn bind(addr: SocketAddr) -> io::Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        let addr = socket.local_addr()?;
        Ok(Self { socket, addr })
    }
}

impl Transport for UdpTransport {
    fn send_to(&self, addr: SocketAddr, bytes: &[u8]) -> io::Result<()> {
        self.socket.send_to(bytes, addr).map(|_| ())
    }

    fn recv(&self, timeout: Duration) -> io::Result<Option<(SocketAddr, Vec<u8>)>> {
        self.socket.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let mut buf = vec![0u8; MAX_DATAGRAM];
        match self.socket.recv_from(&mut buf) {
            Ok((n, from)) => {
                buf.truncate(n);
                Ok(Some((from, buf)))
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(None),
            // ICMP port-unreachable from an earlier send surfaces here on some platforms.
            Err(e) if e.kind() == io::ErrorKind::ConnectionReset => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

type Datagram = (SocketAddr, Vec<u8>);

struct SimInner {
    ports: HashMap<SocketAddr, SyncSender<Datagram>>,
    rng: StdRng,
    loss: f64,
    wiretap: Option<Vec<Datagram>>,
    delivered: u64,
    dropped: u64,
}

/// In-process datagram network. Delivery is immediate; each datagram is
/// dropped independently with the configured probability, drawn from a
/// seeded generator.
#[derive(Clone)]
pub struct SimNetwork {
    inner: Arc<Mutex<SimInner>>,
}

impl std::fmt::Debug for SimNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.lock().expect("sim lock poisoned");
        f.debug_struct("SimNetwork")
            .field("ports", &inner.ports.len())
            .field("loss", &inner.loss)
            .finish()
    }
}

impl SimNetwork {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Arc::new(Mutex::new(SimInner {
                ports: HashMap::new(),
                rng: StdRng::seed_from_u64(seed),
                loss: 0.0,
                wiretap: None,
                delivered: 0,
                dropped: 0,
            })),
        }
    }

    pub fn set_loss(&self, loss: f64) {
        self.inner.lock().expect("sim lock poisoned").loss = loss;
    }

    /// Starts recording every datagram sent on the network.
    pub fn enable_wiretap(&self) {
        self.inner.lock().expect("sim lock poisoned").wiretap = Some(Vec::new());
    }

    pub fn take_wiretap(&self) -> Vec<Datagram> {
        let mut inner = self.inner.lock().expect("sim lock poisoned");
        inner.wiretap.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// (delivered, dropped) datagram counts.
    pub fn stats(&self) -> (u64, u64) {
        let inner = self.inner.lock().expect("sim lock poisoned");
        (inner.delivered, inner.dropped)
    }

    /// Binds `addr`, or a fresh loopback port when the port is zero.
    pub fn bind(&self, addr: SocketAddr) -> io::Result<SimTransport> {
        let mut inner = self.inner.lock().expect("sim lock poisoned");
        let addr = if addr.port() == 0 {
            (1024..=u16::MAX)
                .map(|p| SocketAddr::new(addr.ip(), p))
                .find(|a| !inner.ports.contains_key(a))
                .ok_or_else(|| io::Error::new(io::ErrorKind::AddrInUse, "no free simulated port"))?
        } else {
            addr
        };
        if inner.ports.contains_key(&addr) {
            return Err(io::Error::new(io::ErrorKind::AddrInUse, "simulated port in use"));
        }
        let (tx, rx) = mpsc::sync_channel(16_384);
        inner.ports.insert(addr, tx);
        Ok(SimTransport {
            net: self.clone(),
            addr,
            rx: Mutex::new(rx),
        })
    }
}

pub struct SimTransport {
    net: SimNetwork,
    addr: SocketAddr,
    rx: Mutex<Receiver<Datagram>>,
}

impl std::fmt::Debug for SimTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimTransport").field("addr", &self.addr).finish()
    }
}

impl Transport for SimTransport {
    fn send_to(&self, addr: SocketAddr, bytes: &[u8]) -> io::Result<()> {
        if bytes.len() > MAX_DATAGRAM {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "datagram too large"));
        }
        let mut inner = self.net.inner.lock().expect("sim lock poisoned");
        if let Some(tap) = inner.wiretap.as_mut() {
            tap.push((addr, bytes.to_vec()));
        }
        let loss = inner.loss;
        if loss > 0.0 && inner.rng.gen_bool(loss.min(1.0)) {
            inner.dropped += 1;
            return Ok(());
        }
        if let Some(tx) = inner.ports.get(&addr) {
            if tx.try_send((self.addr, bytes.to_vec())).is_ok() {
                inner.delivered += 1;
                return Ok(());
            }
        }
        inner.dropped += 1;
        Ok(())
    }

    fn recv(&self, timeout: Duration) -> io::Result<Option<(SocketAddr, Vec<u8>)>> {
        let rx = self.rx.lock().expect("sim lock poisoned");
        match rx.recv_timeout(timeout) {
            Ok(d) => Ok(Some(d)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(io::Error::new(io::ErrorKind::NotConnected, "unbound")),
        }
    }

    fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for SimTransport {
    fn drop(&mut self) {
        if let Ok(mut inner) = self.net.inner.lock() {
            inner.ports.remove(&self.addr);
        }
    }
}
