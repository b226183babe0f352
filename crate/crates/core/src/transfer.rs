//! Lock-step block transfer in the style of TFTP, without I/O.
//!
//! Frames:
//!
//! ```text
//! DATA  0x01 | transfer_id: u64 BE | block: u32 BE | data (<= block size)
//! ACK   0x02 | transfer_id: u64 BE | block: u32 BE
//! ABORT 0x03 | transfer_id: u64 BE | code: u8
//! ```
//!
//! Blocks are numbered from 1. A block shorter than the block size (possibly
//! empty) ends the transfer. The sender keeps one block in flight and
//! retransmits it when the retransmit timer fires, doubling the timeout each
//! time up to a cap; it gives up after `max_retries` retransmissions of the
//! same block. The receiver accepts blocks strictly in order and re-acks
//! duplicates. All times are milliseconds on a caller-supplied clock.

use alloc::vec::Vec;

use crate::wire::MAX_MESSAGE_LEN;

pub const FRAME_DATA: u8 = 0x01;
pub const FRAME_ACK: u8 = 0x02;
pub const FRAME_ABORT: u8 = 0x03;

pub const BLOCK_SIZE: usize = 1200;
pub const DATA_HEADER_LEN: usize = 13;

/// Abort codes.
pub const ABORT_TOO_LARGE: u8 = 1;
pub const ABORT_CANCELLED: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferConfig {
    pub block_size: usize,
    pub initial_rto_ms: u64,
    pub max_rto_ms: u64,
    pub max_retries: u32,
    /// Largest payload either side will handle.
    pub max_payload: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            block_size: BLOCK_SIZE,
            initial_rto_ms: 500,
            max_rto_ms: 4000,
            max_retries: 10,
            max_payload: MAX_MESSAGE_LEN,
        }
    }
}

impl TransferConfig {
    /// Longest time the sender can spend on one block before giving up.
    pub fn give_up_window_ms(&self) -> u64 {
        let mut rto = self.initial_rto_ms;
        let mut total = 0;
        for _ in 0..=self.max_retries {
            total += rto;
            rto = (rto * 2).min(self.max_rto_ms);
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Data { transfer_id: u64, block: u32, data: Vec<u8> },
    Ack { transfer_id: u64, block: u32 },
    Abort { transfer_id: u64, code: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TransferError {
    #[error("payload exceeds the transfer size cap")]
    PayloadTooLarge,
    #[error("peer stopped acknowledging")]
    Timeout,
    #[error("peer aborted the transfer (code {0})")]
    Aborted(u8),
    #[error("malformed frame")]
    MalformedFrame,
}

impl Frame {
    pub fn transfer_id(&self) -> u64 {
        match self {
            Frame::Data { transfer_id, .. }
            | Frame::Ack { transfer_id, .. }
            | Frame::Abort { transfer_id, .. } => *transfer_id,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DATA_HEADER_LEN + BLOCK_SIZE);
        match self {
            Frame::Data { transfer_id, block, data } => {
                out.push(FRAME_DATA);
                out.extend_from_slice(&transfer_id.to_be_bytes());
                out.extend_from_slice(&block.to_be_bytes());
                out.extend_from_slice(data);
            }
            Frame::Ack { transfer_id, block } => {
                out.push(FRAME_ACK);
                out.extend_from_slice(&transfer_id.to_be_bytes());
                out.extend_from_slice(&block.to_be_bytes());
            }
            Frame::Abort { transfer_id, code } => {
                out.push(FRAME_ABORT);
                out.extend_from_slice(&transfer_id.to_be_bytes());
                out.push(*code);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, TransferError> {
        let bad = TransferError::MalformedFrame;
        let (&tag, rest) = bytes.split_first().ok_or(bad)?;
        let id = u64::from_be_bytes(rest.get(..8).ok_or(bad)?.try_into().map_err(|_| bad)?);
        let rest = &rest[8..];
        match tag {
            FRAME_DATA | FRAME_ACK => {
                let block = u32::from_be_bytes(rest.get(..4).ok_or(bad)?.try_into().map_err(|_| bad)?);
                let data = &rest[4..];
                if tag == FRAME_ACK {
                    if !data.is_empty() {
                        return Err(bad);
                    }
                    return Ok(Frame::Ack { transfer_id: id, block });
                }
                Ok(Frame::Data {
                    transfer_id: id,
                    block,
                    data: data.to_vec(),
                })
            }
            FRAME_ABORT if rest.len() == 1 => Ok(Frame::Abort {
                transfer_id: id,
                code: rest[0],
            }),
            _ => Err(bad),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SenderEvent {
    /// Put this frame on the wire.
    Send(Frame),
    /// The final block was acknowledged.
    Complete,
    Failed(TransferError),
    Idle,
}

#[derive(Debug)]
pub struct Sender {
    id: u64,
    payload: Vec<u8>,
    cfg: TransferConfig,
    block: u32,
    last_block: u32,
    retries: u32,
    rto: u64,
    deadline: u64,
    finished: bool,
    pub retransmissions: u64,
}

impl Sender {
    /// Starts a transfer and returns the first frame to send.
    pub fn start(
        id: u64,
        payload: Vec<u8>,
        cfg: TransferConfig,
        now: u64,
    ) -> Result<(Sender, Frame), TransferError> {
        if payload.len() > cfg.max_payload {
            return Err(TransferError::PayloadTooLarge);
        }
        let last_block = u32::try_from(payload.len() / cfg.block_size + 1)
            .map_err(|_| TransferError::PayloadTooLarge)?;
        let s = Sender {
            id,
            payload,
            cfg,
            block: 1,
            last_block,
            retries: 0,
            rto: cfg.initial_rto_ms,
            deadline: now + cfg.initial_rto_ms,
            finished: false,
            retransmissions: 0,
        };
        let frame = s.data_frame();
        Ok((s, frame))
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn blocks(&self) -> u32 {
        self.last_block
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn deadline(&self) -> u64 {
        self.deadline
    }

    fn data_frame(&self) -> Frame {
        let start = (self.block as usize - 1) * self.cfg.block_size;
        let end = (start + self.cfg.block_size).min(self.payload.len());
        Frame::Data {
            transfer_id: self.id,
            block: self.block,
            data: self.payload[start..end].to_vec(),
        }
    }

    pub fn on_frame(&mut self, frame: &Frame, now: u64) -> SenderEvent {
        if self.finished || frame.transfer_id() != self.id {
            return SenderEvent::Idle;
        }
        match *frame {
            Frame::Ack { block, .. } if block == self.block => {
                if block == self.last_block {
                    self.finished = true;
                    return SenderEvent::Complete;
                }
                self.block += 1;
                self.retries = 0;
                self.rto = self.cfg.initial_rto_ms;
                self.deadline = now + self.rto;
                SenderEvent::Send(self.data_frame())
            }
            Frame::Abort { code, .. } => {
                self.finished = true;
                SenderEvent::Failed(TransferError::Aborted(code))
            }
            _ => SenderEvent::Idle,
        }
    }

    /// Retransmits or gives up once the timer has fired.
    pub fn poll(&mut self, now: u64) -> SenderEvent {
        if self.finished || now < self.deadline {
            return SenderEvent::Idle;
        }
        if self.retries >= self.cfg.max_retries {
            self.finished = true;
            return SenderEvent::Failed(TransferError::Timeout);
        }
        self.retries += 1;
        self.retransmissions += 1;
        self.rto = (self.rto * 2).min(self.cfg.max_rto_ms);
        self.deadline = now + self.rto;
        SenderEvent::Send(self.data_frame())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReceiverEvent {
    Send(Frame),
    /// The last block arrived; the frame is its ack.
    Complete(Frame, Vec<u8>),
    Failed(TransferError, Option<Frame>),
    Idle,
}

/// Receiving side. Once complete it keeps answering retransmissions of the
/// final block so a lost last ack does not strand the sender.
#[derive(Debug)]
pub struct Receiver {
    id: u64,
    cfg: TransferConfig,
    expected: u32,
    buf: Vec<u8>,
    complete: bool,
    failed: bool,
    last_activity: u64,
}

impl Receiver {
    pub fn new(id: u64, cfg: TransferConfig, now: u64) -> Self {
        Self {
            id,
            cfg,
            expected: 1,
            buf: Vec::new(),
            complete: false,
            failed: false,
            last_activity: now,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn is_done(&self) -> bool {
        self.complete || self.failed
    }

    pub fn last_activity(&self) -> u64 {
        self.last_activity
    }

    fn ack(&self, block: u32) -> Frame {
        Frame::Ack {
            transfer_id: self.id,
            block,
        }
    }

    pub fn on_frame(&mut self, frame: &Frame, now: u64) -> ReceiverEvent {
        if self.failed || frame.transfer_id() != self.id {
            return ReceiverEvent::Idle;
        }
        match frame {
            Frame::Data { block, data, .. } => {
                self.last_activity = now;
                if *block < self.expected || (self.complete && *block == self.expected - 1) {
                    return ReceiverEvent::Send(self.ack(*block));
                }
                if self.complete || *block != self.expected {
                    return ReceiverEvent::Idle;
                }
                if data.len() > self.cfg.block_size {
                    self.failed = true;
                    return ReceiverEvent::Failed(TransferError::MalformedFrame, None);
                }
                if self.buf.len() + data.len() > self.cfg.max_payload {
                    self.failed = true;
                    self.buf = Vec::new();
                    let abort = Frame::Abort {
                        transfer_id: self.id,
                        code: ABORT_TOO_LARGE,
                    };
                    return ReceiverEvent::Failed(TransferError::PayloadTooLarge, Some(abort));
                }
                self.buf.extend_from_slice(data);
                self.expected += 1;
                let ack = self.ack(*block);
                if data.len() < self.cfg.block_size {
                    self.complete = true;
                    return ReceiverEvent::Complete(ack, core::mem::take(&mut self.buf));
                }
                ReceiverEvent::Send(ack)
            }
            Frame::Abort { code, .. } => {
                self.failed = true;
                ReceiverEvent::Failed(TransferError::Aborted(*code), None)
            }
            Frame::Ack { .. } => ReceiverEvent::Idle,
        }
    }

    /// Fails an incomplete transfer after the sender's give-up window
    /// passes without data.
    pub fn poll(&mut self, now: u64) -> ReceiverEvent {
        if self.is_done() {
            return ReceiverEvent::Idle;
        }
        if now.saturating_sub(self.last_activity) > self.cfg.give_up_window_ms() {
            self.failed = true;
            return ReceiverEvent::Failed(TransferError::Timeout, None);
        }
        ReceiverEvent::Idle
    }
}

/// Result of [`simulate_link`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkOutcome {
    pub delivered: Option<Vec<u8>>,
    pub sender: Result<(), TransferError>,
    pub retransmissions: u64,
    pub frames_sent: u64,
    pub elapsed_ms: u64,
}

/// Runs one transfer over a simulated link with a virtual clock. Every
/// frame in either direction takes `latency_ms` and is dropped when `drop`
/// returns true.
pub fn simulate_link(
    payload: Vec<u8>,
    cfg: TransferConfig,
    latency_ms: u64,
    mut drop: impl FnMut() -> bool,
) -> LinkOutcome {
    use alloc::collections::VecDeque;
    let mut now = 0u64;
    let mut frames_sent = 0u64;
    let (mut sender, first) = match Sender::start(1, payload, cfg, now) {
        Ok(v) => v,
        Err(e) => {
            return LinkOutcome {
                delivered: None,
                sender: Err(e),
                retransmissions: 0,
                frames_sent: 0,
                elapsed_ms: 0,
            }
        }
    };
    let mut receiver = Receiver::new(1, cfg, now);
    // (arrival time, to_receiver, frame); latency is constant so arrival
    // order equals send order
    let mut in_flight: VecDeque<(u64, bool, Frame)> = VecDeque::new();
    let mut send = |q: &mut VecDeque<(u64, bool, Frame)>, now: u64, to_rx: bool, f: Frame| {
        frames_sent += 1;
        if !drop() {
            q.push_back((now + latency_ms, to_rx, f));
        }
    };
    send(&mut in_flight, now, true, first);
    let mut delivered = None;
    let mut outcome = None;
    while outcome.is_none() {
        let next_arrival = in_flight.front().map(|e| e.0);
        let next = match next_arrival {
            Some(t) if t <= sender.deadline() => t,
            _ => sender.deadline(),
        };
        now = now.max(next);
        if next_arrival == Some(next) {
            let (_, to_rx, frame) = in_flight.pop_front().expect("arrival");
            if to_rx {
                match receiver.on_frame(&frame, now) {
                    ReceiverEvent::Send(f) => send(&mut in_flight, now, false, f),
                    ReceiverEvent::Complete(f, bytes) => {
                        delivered = Some(bytes);
                        send(&mut in_flight, now, false, f);
                    }
                    ReceiverEvent::Failed(_, Some(f)) => send(&mut in_flight, now, false, f),
                    ReceiverEvent::Failed(_, None) | ReceiverEvent::Idle => {}
                }
            } else {
                match sender.on_frame(&frame, now) {
                    SenderEvent::Send(f) => send(&mut in_flight, now, true, f),
                    SenderEvent::Complete => outcome = Some(Ok(())),
                    SenderEvent::Failed(e) => outcome = Some(Err(e)),
                    SenderEvent::Idle => {}
                }
            }
        } else {
            match sender.poll(now) {
                SenderEvent::Send(f) => send(&mut in_flight, now, true, f),
                SenderEvent::Failed(e) => outcome = Some(Err(e)),
                _ => {}
            }
        }
    }
    LinkOutcome {
        delivered,
        sender: outcome.expect("loop exits with an outcome"),
        retransmissions: sender.retransmissions,
        frames_sent,
        elapsed_ms: now,
    }
}

#[cfg(test)]
mod tests;
