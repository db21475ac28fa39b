//! Moving encoded ACL messages between nodes.
//!
//! Two implementations share the [`Transport`] trait: an in-memory bus for
//! tests and desk-scale runs, and TCP with length-prefixed frames. Both count
//! every frame per peer so bandwidth claims can be checked from the outside.

pub mod faults;
pub mod framing;
pub mod memory;
pub mod tcp;

use std::collections::BTreeMap;
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

pub use faults::{FaultAction, FaultDirection, FaultInjector, FaultPoint, FaultRule};
pub use memory::{MemoryEndpoint, MemoryNetwork};
pub use tcp::TcpEndpoint;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("connection refused by {0}")]
    ConnectionRefused(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("injected fault at {0}")]
    InjectedFault(String),
    #[error("transport closed")]
    Closed,
    #[error("invalid address `{0}`")]
    InvalidAddress(String),
    #[error("cannot bind {0}: {1}")]
    Bind(String, String),
    #[error("payload of {0} bytes exceeds the frame limit")]
    FrameTooLarge(usize),
    #[error("i/o error: {0}")]
    Io(String),
}

/// One encoded message in flight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub to: String,
    pub from: String,
    pub payload: Vec<u8>,
}

pub trait Transport: Send + Sync {
    /// The address peers use to reach this endpoint.
    fn local_address(&self) -> &str;

    /// Delivers the envelope, returning the number of bytes put on the wire.
    fn send(&self, envelope: Envelope) -> Result<usize, TransportError>;

    fn counters(&self) -> CountersSnapshot;

    /// Stops accepting traffic. Idempotent.
    fn close(&self);
}

/// Receiving half of an endpoint.
pub struct Inbox {
    rx: Receiver<Envelope>,
}

impl Inbox {
    pub(crate) fn new(rx: Receiver<Envelope>) -> Self {
        Self { rx }
    }

    pub fn recv(&self) -> Result<Envelope, TransportError> {
        self.rx.recv().map_err(|_| TransportError::Closed)
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Envelope, TransportError> {
        self.rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout("receive".into()),
            RecvTimeoutError::Disconnected => TransportError::Closed,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeerCounters {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub messages_received: u64,
    pub bytes_received: u64,
}

impl PeerCounters {
    fn add(&mut self, other: &PeerCounters) {
        self.messages_sent += other.messages_sent;
        self.bytes_sent += other.bytes_sent;
        self.messages_received += other.messages_received;
        self.bytes_received += other.bytes_received;
    }
}

/// Per-peer counters at one point in time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountersSnapshot {
    pub peers: BTreeMap<String, PeerCounters>,
}

impl CountersSnapshot {
    pub fn peer(&self, address: &str) -> PeerCounters {
        self.peers.get(address).copied().unwrap_or_default()
    }

    pub fn total(&self) -> PeerCounters {
        let mut total = PeerCounters::default();
        for c in self.peers.values() {
            total.add(c);
        }
        total
    }

    /// `key=value` lines, one per peer.
    pub fn lines(&self) -> Vec<String> {
        self.peers
            .iter()
            .map(|(peer, c)| {
                format!(
                    "peer={peer} messages-sent={} bytes-sent={} messages-received={} bytes-received={}",
                    c.messages_sent, c.bytes_sent, c.messages_received, c.bytes_received
                )
            })
            .collect()
    }
}

/// Monotonic per-peer counters shared by the sending and receiving paths.
#[derive(Debug, Default)]
pub struct TransportCounters {
    peers: Mutex<BTreeMap<String, PeerCounters>>,
}

impl TransportCounters {
    pub fn record_sent(&self, peer: &str, bytes: usize) {
        let mut peers = self.peers.lock().unwrap();
        let c = peers.entry(peer.to_string()).or_default();
        c.messages_sent += 1;
        c.bytes_sent += bytes as u64;
    }

    pub fn record_received(&self, peer: &str, bytes: usize) {
        let mut peers = self.peers.lock().unwrap();
        let c = peers.entry(peer.to_string()).or_default();
        c.messages_received += 1;
        c.bytes_received += bytes as u64;
    }

    pub fn snapshot(&self) -> CountersSnapshot {
        CountersSnapshot {
            peers: self.peers.lock().unwrap().clone(),
        }
    }
}
