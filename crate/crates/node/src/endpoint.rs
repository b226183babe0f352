//! Message endpoint over a datagram transport.
//!
//! Every message travels as its own lock-step transfer (see
//! `datavault_core::transfer`). Every transfer frame is sealed to the
//! recipient's transport key and signed by the sender, so the transport
//! only ever carries ciphertext. Discovery announces are the one exception:
//! they are signed, not encrypted.
//!
//! One I/O thread owns the socket, the transfer state machines and their
//! timers. Completed messages are routed either to a waiter registered for
//! `(peer, request_id)` or to a per-peer worker thread that runs the
//! [`Inbound`] handler, so handlers for distinct peers run concurrently
//! while one peer's messages are handled in order.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender as ChannelSender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use rand::RngCore;

use datavault_core::transfer::{Frame, Receiver as FrameReceiver, ReceiverEvent, Sender, SenderEvent, TransferConfig, TransferError};
use datavault_core::transit::{self, KIND_SEALED, KIND_SIGNED};
use datavault_core::wire::{self, Message, WireError};
use datavault_core::Fingerprint;

use crate::transport::Transport;

const WORKER_IDLE: Duration = Duration::from_secs(10);
const MAX_POLL_WAIT_MS: u64 = 50;

/// A remote node: its transport key and the address it was last seen at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Peer {
    pub key: VerifyingKey,
    pub addr: SocketAddr,
}

impl Peer {
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&self.key)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error("encoding failed: {0}")]
    Encode(#[from] WireError),
    #[error("transfer failed: {0}")]
    Transfer(#[from] TransferError),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("endpoint is shut down")]
    Shutdown,
    #[error("transport error: {0}")]
    Io(#[from] std::io::Error),
}

/// Handler for messages nobody is waiting for.
pub trait Inbound: Send + Sync {
    fn on_message(&self, ep: &Endpoint, from: Peer, msg: Message);
    /// A complete transfer that did not decode as a message.
    fn on_malformed(&self, ep: &Endpoint, from: Peer, request_id: Option<u64>, err: WireError);
    /// A signed public datagram (discovery announce).
    fn on_announce(&self, ep: &Endpoint, from: SocketAddr, key: VerifyingKey, body: &[u8]);
}

#[derive(Debug, Default)]
pub struct EndpointStats {
    pub datagrams_sent: AtomicU64,
    pub datagrams_received: AtomicU64,
    pub bytes_sent: AtomicU64,
    pub bytes_received: AtomicU64,
    pub retransmissions: AtomicU64,
    pub rejected_datagrams: AtomicU64,
}

type PeerId = [u8; 32];

struct Outgoing {
    sender: Sender,
    peer: Peer,
    done: ChannelSender<Result<(), TransferError>>,
}

struct Incoming {
    receiver: FrameReceiver,
}

#[derive(Default)]
struct Transfers {
    outgoing: HashMap<(PeerId, u64), Outgoing>,
    incoming: HashMap<(PeerId, u64), Incoming>,
}

enum Work {
    Message(Peer, Box<Message>),
    Malformed(Peer, Option<u64>, WireError),
}

struct Shared {
    transport: Arc<dyn Transport>,
    key: SigningKey,
    cfg: TransferConfig,
    inbound: Arc<dyn Inbound>,
    epoch: Instant,
    transfers: Mutex<Transfers>,
    waiters: Mutex<HashMap<(PeerId, u64), ChannelSender<Message>>>,
    workers: Mutex<HashMap<PeerId, ChannelSender<Work>>>,
    stop: AtomicBool,
    io: Mutex<Option<JoinHandle<()>>>,
    stats: EndpointStats,
}

/// Cloneable handle to a running endpoint.
#[derive(Clone)]
pub struct Endpoint {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint")
            .field("addr", &self.local_addr())
            .field("key", &hex::encode(self.public_key().as_bytes()))
            .finish()
    }
}

/// Messages answering a request; these go to a registered waiter if any.
fn is_response(msg: &Message) -> bool {
    matches!(
        msg,
        Message::AccessibleFilesResponse(_)
            | Message::FileResponse(_)
            | Message::FileRequestFailed(_)
            | Message::LogProposal(_)
    )
}

/// Best-effort request id of an undecodable message.
fn salvage_request_id(bytes: &[u8]) -> Option<u64> {
    let len = u32::from_be_bytes(bytes.get(1..5)?.try_into().ok()?) as usize;
    let body = bytes.get(5..5usize.checked_add(len)?)?;
    let v: serde_json::Value = serde_json::from_slice(body).ok()?;
    v.get("request_id")?.as_u64()
}

/// Response subscription for one `(peer, request_id)`.
pub struct Waiter {
    shared: Arc<Shared>,
    key: (PeerId, u64),
    rx: Receiver<Message>,
}

impl Waiter {
    pub fn recv(&self, timeout: Duration) -> Result<Message, EndpointError> {
        match self.rx.recv_timeout(timeout) {
            Ok(m) => Ok(m),
            Err(RecvTimeoutError::Timeout) => Err(EndpointError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(EndpointError::Shutdown),
        }
    }
}

impl Drop for Waiter {
    fn drop(&mut self) {
        if let Ok(mut w) = self.shared.waiters.lock() {
            w.remove(&self.key);
        }
    }
}

impl Endpoint {
    pub fn start(
        transport: Arc<dyn Transport>,
        key: SigningKey,
        cfg: TransferConfig,
        inbound: Arc<dyn Inbound>,
    ) -> std::io::Result<Endpoint> {
        let shared = Arc::new(Shared {
            transport,
            key,
            cfg,
            inbound,
            epoch: Instant::now(),
            transfers: Mutex::new(Transfers::default()),
            waiters: Mutex::new(HashMap::new()),
            workers: Mutex::new(HashMap::new()),
            stop: AtomicBool::new(false),
            io: Mutex::new(None),
            stats: EndpointStats::default(),
        });
        let ep = Endpoint { shared: shared.clone() };
        let io_ep = ep.clone();
        let handle = std::thread::Builder::new()
            .name(format!("endpoint-{}", shared.transport.local_addr()))
            .spawn(move || io_ep.io_loop())?;
        *shared.io.lock().expect("endpoint lock poisoned") = Some(handle);
        Ok(ep)
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.shared.transport.local_addr()
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.shared.key.verifying_key()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&self.public_key())
    }

    pub fn stats(&self) -> &EndpointStats {
        &self.shared.stats
    }

    pub fn transfer_config(&self) -> TransferConfig {
        self.shared.cfg
    }

    pub fn is_running(&self) -> bool {
        !self.shared.stop.load(Ordering::SeqCst)
    }

    /// Stops the I/O thread. In-flight sends fail with `Shutdown`.
    pub fn shutdown(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let handle = self.shared.io.lock().expect("endpoint lock poisoned").take();
        if let Some(h) = handle {
            let _ = h.join();
        }
        self.shared.workers.lock().expect("endpoint lock poisoned").clear();
        self.shared.waiters.lock().expect("endpoint lock poisoned").clear();
        let mut t = self.shared.transfers.lock().expect("endpoint lock poisoned");
        t.outgoing.clear();
        t.incoming.clear();
    }

    fn now_ms(&self) -> u64 {
        self.shared.epoch.elapsed().as_millis() as u64
    }

    fn transmit(&self, peer: &Peer, frame: &Frame) {
        let sealed = match transit::seal(&self.shared.key, &peer.key, &frame.encode(), &mut OsRng) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("cannot seal frame for {}: {e}", peer.addr);
                return;
            }
        };
        self.raw_send(peer.addr, &sealed);
    }

    fn raw_send(&self, addr: SocketAddr, bytes: &[u8]) {
        let stats = &self.shared.stats;
        stats.datagrams_sent.fetch_add(1, Ordering::Relaxed);
        stats.bytes_sent.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        if let Err(e) = self.shared.transport.send_to(addr, bytes) {
            log::debug!("send to {addr} failed: {e}");
        }
    }

    /// Sends a signed, unencrypted datagram (used for discovery).
    pub fn send_public(&self, addr: SocketAddr, body: &[u8]) {
        let signed = transit::sign_public(&self.shared.key, body);
        self.raw_send(addr, &signed);
    }

    /// Sends one message and blocks until the peer acknowledged all of it.
    pub fn send(&self, peer: &Peer, msg: &Message) -> Result<(), EndpointError> {
        let bytes = wire::encode(msg)?;
        self.send_bytes(peer, bytes)
    }

    pub(crate) fn send_bytes(&self, peer: &Peer, bytes: Vec<u8>) -> Result<(), EndpointError> {
        if !self.is_running() {
            return Err(EndpointError::Shutdown);
        }
        let id = OsRng.next_u64();
        let (sender, first) = Sender::start(id, bytes, self.shared.cfg, self.now_ms())?;
        let (tx, rx) = mpsc::channel();
        self.shared.transfers.lock().expect("endpoint lock poisoned").outgoing.insert(
            (peer.key.to_bytes(), id),
            Outgoing {
                sender,
                peer: *peer,
                done: tx,
            },
        );
        self.transmit(peer, &first);
        match rx.recv() {
            Ok(r) => r.map_err(EndpointError::from),
            Err(_) => Err(EndpointError::Shutdown),
        }
    }

    /// Registers for messages answering `request_id` from `peer`. Register
    /// before sending the request so no answer can slip past.
    pub fn subscribe(&self, peer: &Peer, request_id: u64) -> Waiter {
        let (tx, rx) = mpsc::channel();
        let key = (peer.key.to_bytes(), request_id);
        self.shared.waiters.lock().expect("endpoint lock poisoned").insert(key, tx);
        Waiter {
            shared: self.shared.clone(),
            key,
            rx,
        }
    }

    /// Sends a request and waits for the first message answering it.
    pub fn request(&self, peer: &Peer, msg: &Message, timeout: Duration) -> Result<Message, EndpointError> {
        let rid = msg.request_id().unwrap_or_default();
        let waiter = self.subscribe(peer, rid);
        self.send(peer, msg)?;
        waiter.recv(timeout)
    }

    fn io_loop(&self) {
        while self.is_running() {
            let now = self.now_ms();
            let wait = {
                let t = self.shared.transfers.lock().expect("endpoint lock poisoned");
                let max_wait = MAX_POLL_WAIT_MS.min(self.shared.cfg.initial_rto_ms.max(1));
                t.outgoing
                    .values()
                    .map(|o| o.sender.deadline().saturating_sub(now))
                    .min()
                    .unwrap_or(max_wait)
                    .clamp(1, max_wait)
            };
            match self.shared.transport.recv(Duration::from_millis(wait)) {
                Ok(Some((addr, bytes))) => self.on_datagram(addr, &bytes),
                Ok(None) => {}
                Err(e) => {
                    log::warn!("transport receive failed: {e}");
                    std::thread::sleep(Duration::from_millis(wait));
                }
            }
            self.poll_timers();
        }
    }

    fn on_datagram(&self, addr: SocketAddr, bytes: &[u8]) {
        let stats = &self.shared.stats;
        stats.datagrams_received.fetch_add(1, Ordering::Relaxed);
        stats.bytes_received.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        match bytes.first() {
            Some(&KIND_SIGNED) => match transit::open_public(bytes) {
                Ok((key, body)) => self.shared.inbound.on_announce(self, addr, key, &body),
                Err(_) => {
                    stats.rejected_datagrams.fetch_add(1, Ordering::Relaxed);
                }
            },
            Some(&KIND_SEALED) => {
                let frame = transit::open(&self.shared.key, bytes)
                    .ok()
                    .and_then(|(key, plain)| Frame::decode(&plain).ok().map(|f| (key, f)));
                match frame {
                    Some((key, frame)) => self.on_frame(Peer { key, addr }, frame),
                    None => {
                        stats.rejected_datagrams.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
            _ => {
                stats.rejected_datagrams.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    fn on_frame(&self, peer: Peer, frame: Frame) {
        let now = self.now_ms();
        let key = (peer.key.to_bytes(), frame.transfer_id());
        let mut t = self.shared.transfers.lock().expect("endpoint lock poisoned");
        let is_data = matches!(frame, Frame::Data { .. });
        if !is_data {
            if let Some(out) = t.outgoing.get_mut(&key) {
                match out.sender.on_frame(&frame, now) {
                    SenderEvent::Send(f) => {
                        let p = out.peer;
                        drop(t);
                        self.transmit(&p, &f);
                    }
                    SenderEvent::Complete => {
                        let out = t.outgoing.remove(&key).expect("present");
                        let _ = out.done.send(Ok(()));
                    }
                    SenderEvent::Failed(e) => {
                        let out = t.outgoing.remove(&key).expect("present");
                        let _ = out.done.send(Err(e));
                    }
                    SenderEvent::Idle => {}
                }
                return;
            }
        }
        let fresh = matches!(frame, Frame::Data { block: 1, .. });
        let cfg = self.shared.cfg;
        let incoming = match t.incoming.entry(key) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) if fresh => e.insert(Incoming {
                receiver: FrameReceiver::new(key.1, cfg, now),
            }),
            std::collections::hash_map::Entry::Vacant(_) => return,
        };
        let ev = incoming.receiver.on_frame(&frame, now);
        drop(t);
        match ev {
            ReceiverEvent::Send(ack) => self.transmit(&peer, &ack),
            ReceiverEvent::Complete(ack, payload) => {
                self.transmit(&peer, &ack);
                self.deliver(peer, payload);
            }
            ReceiverEvent::Failed(e, abort) => {
                log::debug!("incoming transfer from {} failed: {e}", peer.addr);
                if let Some(f) = abort {
                    self.transmit(&peer, &f);
                }
            }
            ReceiverEvent::Idle => {}
        }
    }

    fn poll_timers(&self) {
        let now = self.now_ms();
        let mut resend = Vec::new();
        {
            let mut t = self.shared.transfers.lock().expect("endpoint lock poisoned");
            let mut finished = Vec::new();
            for (key, out) in t.outgoing.iter_mut() {
                match out.sender.poll(now) {
                    SenderEvent::Send(f) => {
                        self.shared.stats.retransmissions.fetch_add(1, Ordering::Relaxed);
                        resend.push((out.peer, f));
                    }
                    SenderEvent::Failed(e) => finished.push((*key, e)),
                    _ => {}
                }
            }
            for (key, e) in finished {
                if let Some(out) = t.outgoing.remove(&key) {
                    let _ = out.done.send(Err(e));
                }
            }
            let linger = self.shared.cfg.give_up_window_ms();
            t.incoming.retain(|_, inc| {
                let _ = inc.receiver.poll(now);
                !(inc.receiver.is_done() && now.saturating_sub(inc.receiver.last_activity()) > linger)
            });
        }
        for (peer, f) in resend {
            self.transmit(&peer, &f);
        }
    }

    fn deliver(&self, peer: Peer, payload: Vec<u8>) {
        let work = match wire::decode(&payload) {
            Ok(msg) => {
                if is_response(&msg) {
                    if let Some(rid) = msg.request_id() {
                        let waiters = self.shared.waiters.lock().expect("endpoint lock poisoned");
                        if let Some(tx) = waiters.get(&(peer.key.to_bytes(), rid)) {
                            if tx.send(msg.clone()).is_ok() {
                                return;
                            }
                        }
                    }
                }
                Work::Message(peer, Box::new(msg))
            }
            Err(e) => Work::Malformed(peer, salvage_request_id(&payload), e),
        };
        self.dispatch(peer, work);
    }

    fn dispatch(&self, peer: Peer, work: Work) {
        let id = peer.key.to_bytes();
        let mut workers = self.shared.workers.lock().expect("endpoint lock poisoned");
        let work = match workers.get(&id) {
            Some(tx) => match tx.send(work) {
                Ok(()) => return,
                Err(mpsc::SendError(w)) => w,
            },
            None => work,
        };
        let (tx, rx) = mpsc::channel();
        tx.send(work).expect("receiver alive");
        workers.insert(id, tx);
        let ep = self.clone();
        let spawned = std::thread::Builder::new()
            .name(format!("peer-{}", &hex::encode(id)[..8]))
            .spawn(move || ep.worker(id, rx));
        if let Err(e) = spawned {
            log::error!("cannot spawn peer worker: {e}");
            workers.remove(&id);
        }
    }

    fn worker(&self, id: PeerId, rx: Receiver<Work>) {
        loop {
            match rx.recv_timeout(WORKER_IDLE) {
                Ok(work) => self.run(work),
                Err(RecvTimeoutError::Disconnected) => return,
                Err(RecvTimeoutError::Timeout) => {
                    let mut workers = self.shared.workers.lock().expect("endpoint lock poisoned");
                    match rx.try_recv() {
                        Ok(work) => {
                            drop(workers);
                            self.run(work);
                        }
                        Err(_) => {
                            workers.remove(&id);
                            return;
                        }
                    }
                }
            }
        }
    }

    fn run(&self, work: Work) {
        let inbound = self.shared.inbound.clone();
        match work {
            Work::Message(peer, msg) => inbound.on_message(self, peer, *msg),
            Work::Malformed(peer, rid, e) => inbound.on_malformed(self, peer, rid, e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{SimNetwork, UdpTransport};
    use datavault_core::wire::{FailureReason, FileRequestFailed, FileResponse};

    struct Echo;

    impl Inbound for Echo {
        fn on_message(&self, ep: &Endpoint, from: Peer, msg: Message) {
            if let Message::FileResponse(mut r) = msg {
                r.payload.reverse();
                ep.send(&from, &Message::FileResponse(r)).unwrap();
            }
        }
        fn on_malformed(&self, ep: &Endpoint, from: Peer, request_id: Option<u64>, _: WireError) {
            let reply = Message::FileRequestFailed(FileRequestFailed {
                request_id: request_id.unwrap_or(0),
                reason: FailureReason::Malformed,
                detail: None,
            });
            ep.send(&from, &reply).unwrap();
        }
        fn on_announce(&self, _: &Endpoint, _: SocketAddr, _: VerifyingKey, _: &[u8]) {}
    }

    fn response(rid: u64, payload: Vec<u8>) -> Message {
        Message::FileResponse(FileResponse {
            request_id: rid,
            path: datavault_core::VaultPath::parse("f").unwrap(),
            sha256: String::new(),
            payload,
        })
    }

    fn pair(transports: (Arc<dyn Transport>, Arc<dyn Transport>), cfg: TransferConfig) -> (Endpoint, Endpoint) {
        let a = Endpoint::start(transports.0, SigningKey::generate(&mut OsRng), cfg, Arc::new(Echo)).unwrap();
        let b = Endpoint::start(transports.1, SigningKey::generate(&mut OsRng), cfg, Arc::new(Echo)).unwrap();
        (a, b)
    }

    #[test]
    fn udp_round_trip() {
        let ta = Arc::new(UdpTransport::bind("127.0.0.1:0".parse().unwrap()).unwrap());
        let tb = Arc::new(UdpTransport::bind("127.0.0.1:0".parse().unwrap()).unwrap());
        let (a, b) = pair((ta, tb), TransferConfig::default());
        let peer_b = Peer {
            key: b.public_key(),
            addr: b.local_addr(),
        };
        let payload: Vec<u8> = (0..50_000u32).map(|i| i as u8).collect();
        let reply = a.request(&peer_b, &response(9, payload.clone()), Duration::from_secs(10)).unwrap();
        let Message::FileResponse(r) = reply else { panic!("unexpected {reply:?}") };
        let mut expected = payload;
        expected.reverse();
        assert_eq!(r.payload, expected);
        a.shutdown();
        b.shutdown();
        assert!(matches!(a.send(&peer_b, &response(1, vec![])), Err(EndpointError::Shutdown)));
    }

    #[test]
    fn lossy_link_and_wiretap() {
        let net = SimNetwork::new(42);
        net.set_loss(0.1);
        net.enable_wiretap();
        let cfg = TransferConfig {
            initial_rto_ms: 5,
            max_rto_ms: 40,
            ..TransferConfig::default()
        };
        let (a, b) = pair(
            (
                Arc::new(net.bind("10.0.0.1:7000".parse().unwrap()).unwrap()),
                Arc::new(net.bind("10.0.0.2:7000".parse().unwrap()).unwrap()),
            ),
            cfg,
        );
        let peer_b = Peer {
            key: b.public_key(),
            addr: b.local_addr(),
        };
        let marker = b"PLAINTEXT-MARKER-0123456789abcdef";
        let mut payload = vec![7u8; 20_000];
        payload[1000..1000 + marker.len()].copy_from_slice(marker);
        for rid in 0..5 {
            let reply = a.request(&peer_b, &response(rid, payload.clone()), Duration::from_secs(30)).unwrap();
            assert_eq!(reply.request_id(), Some(rid));
        }
        assert!(a.stats().retransmissions.load(Ordering::Relaxed) + b.stats().retransmissions.load(Ordering::Relaxed) > 0);
        let tap = net.take_wiretap();
        assert!(!tap.is_empty());
        for (_, d) in &tap {
            assert!(!d.windows(marker.len()).any(|w| w == marker));
        }
        a.shutdown();
        b.shutdown();
    }

    #[test]
    fn malformed_payload_gets_request_id_back() {
        let net = SimNetwork::new(1);
        let (a, b) = pair(
            (
                Arc::new(net.bind("10.0.0.1:1".parse().unwrap()).unwrap()),
                Arc::new(net.bind("10.0.0.2:1".parse().unwrap()).unwrap()),
            ),
            TransferConfig::default(),
        );
        let peer_b = Peer {
            key: b.public_key(),
            addr: b.local_addr(),
        };
        let body = br#"{"request_id":77,"bogus":true}"#;
        let mut bytes = vec![0x03];
        bytes.extend_from_slice(&(body.len() as u32).to_be_bytes());
        bytes.extend_from_slice(body);
        let waiter = a.subscribe(&peer_b, 77);
        a.send_bytes(&peer_b, bytes).unwrap();
        let reply = waiter.recv(Duration::from_secs(5)).unwrap();
        assert!(matches!(reply, Message::FileRequestFailed(f) if f.reason == FailureReason::Malformed));
        a.shutdown();
        b.shutdown();
    }

    #[test]
    fn dead_peer_times_out() {
        let net = SimNetwork::new(1);
        let cfg = TransferConfig {
            initial_rto_ms: 2,
            max_rto_ms: 4,
            max_retries: 3,
            ..TransferConfig::default()
        };
        let a = Endpoint::start(
            Arc::new(net.bind("10.0.0.1:1".parse().unwrap()).unwrap()),
            SigningKey::generate(&mut OsRng),
            cfg,
            Arc::new(Echo),
        )
        .unwrap();
        let ghost = Peer {
            key: SigningKey::generate(&mut OsRng).verifying_key(),
            addr: "10.0.0.9:1".parse().unwrap(),
        };
        let err = a.send(&ghost, &response(1, vec![1; 10])).unwrap_err();
        assert!(matches!(err, EndpointError::Transfer(TransferError::Timeout)));
        a.shutdown();
    }
}
