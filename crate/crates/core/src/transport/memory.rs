//! In-process message bus. Delivery is immediate and FIFO per sender/receiver
//! pair; every frame is logged so tests can inspect message order.

use std::collections::HashMap;
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex, RwLock};

use super::framing::{frame_len, MAX_FRAME};
use super::{CountersSnapshot, Envelope, Inbox, Transport, TransportCounters, TransportError};
use crate::acl::{decode_message, AclMessage};

struct Port {
    tx: Sender<Envelope>,
    counters: Arc<TransportCounters>,
}

/// A frame that crossed the bus.
#[derive(Debug, Clone)]
pub struct LogEntry {
    pub from: String,
    pub to: String,
    pub bytes: usize,
    pub payload: Vec<u8>,
}

impl LogEntry {
    pub fn message(&self) -> Option<AclMessage> {
        decode_message(&self.payload).ok()
    }
}

#[derive(Default)]
struct Bus {
    ports: RwLock<HashMap<String, Port>>,
    log: Mutex<Vec<LogEntry>>,
}

#[derive(Clone, Default)]
pub struct MemoryNetwork {
    bus: Arc<Bus>,
}

impl MemoryNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&self, address: &str) -> Result<(MemoryEndpoint, Inbox), TransportError> {
        let mut ports = self.bus.ports.write().unwrap();
        if ports.contains_key(address) {
            return Err(TransportError::Bind(address.to_string(), "address in use".into()));
        }
        let (tx, rx) = mpsc::channel();
        let counters = Arc::new(TransportCounters::default());
        ports.insert(
            address.to_string(),
            Port {
                tx,
                counters: counters.clone(),
            },
        );
        Ok((
            MemoryEndpoint {
                bus: self.bus.clone(),
                address: address.to_string(),
                counters,
            },
            Inbox::new(rx),
        ))
    }

    /// Every frame delivered so far, in delivery order.
    pub fn log(&self) -> Vec<LogEntry> {
        self.bus.log.lock().unwrap().clone()
    }

    /// Decoded messages of the log.
    pub fn messages(&self) -> Vec<AclMessage> {
        self.log().iter().filter_map(LogEntry::message).collect()
    }

    pub fn clear_log(&self) {
        self.bus.log.lock().unwrap().clear();
    }
}

pub struct MemoryEndpoint {
    bus: Arc<Bus>,
    address: String,
    counters: Arc<TransportCounters>,
}

impl Transport for MemoryEndpoint {
    fn local_address(&self) -> &str {
        &self.address
    }

    fn send(&self, envelope: Envelope) -> Result<usize, TransportError> {
        if envelope.payload.len() > MAX_FRAME {
            return Err(TransportError::FrameTooLarge(envelope.payload.len()));
        }
        let bytes = frame_len(envelope.payload.len());
        let ports = self.bus.ports.read().unwrap();
        let port = ports
            .get(&envelope.to)
            .ok_or_else(|| TransportError::ConnectionRefused(envelope.to.clone()))?;
        // log before handing over so the log order matches causality
        let entry = LogEntry {
            from: self.address.clone(),
            to: envelope.to.clone(),
            bytes,
            payload: envelope.payload.clone(),
        };
        self.bus.log.lock().unwrap().push(entry);
        self.counters.record_sent(&envelope.to, bytes);
        port.counters.record_received(&self.address, bytes);
        let to = envelope.to.clone();
        port.tx
            .send(Envelope {
                from: self.address.clone(),
                ..envelope
            })
            .map_err(|_| TransportError::ConnectionRefused(to))?;
        Ok(bytes)
    }

    fn counters(&self) -> CountersSnapshot {
        self.counters.snapshot()
    }

    fn close(&self) {
        self.bus.ports.write().unwrap().remove(&self.address);
    }
}

impl Drop for MemoryEndpoint {
    fn drop(&mut self) {
        self.close();
    }
}
