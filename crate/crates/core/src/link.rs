//! Request/reply correlation on top of a transport.
//!
//! Outgoing messages that expect answers get a fresh `reply-with` token and a
//! waiter; the node's dispatcher hands any message whose `in-reply-to` names a
//! live waiter to that waiter instead of the responder side.

use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::RngCore;

use crate::acl::{AclMessage, AgentIdentifier};
use crate::transport::TransportError;

/// 128 random bits as lowercase hex.
pub fn fresh_id() -> String {
    let mut bytes = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

/// A received message with its size on the wire.
#[derive(Debug, Clone)]
pub struct Delivered {
    pub message: AclMessage,
    pub bytes: usize,
}

#[derive(Default)]
pub struct Waiters {
    slots: Mutex<HashMap<String, Sender<Delivered>>>,
}

impl Waiters {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn register(&self, key: &str) -> Receiver<Delivered> {
        let (tx, rx) = mpsc::channel();
        self.slots.lock().unwrap().insert(key.to_string(), tx);
        rx
    }

    fn remove(&self, key: &str) {
        self.slots.lock().unwrap().remove(key);
    }

    /// Routes a reply to its waiter. Gives the message back when nobody waits for it.
    pub fn deliver(&self, delivered: Delivered) -> Result<(), Box<Delivered>> {
        let Some(key) = delivered.message.in_reply_to.clone() else {
            return Err(Box::new(delivered));
        };
        let slots = self.slots.lock().unwrap();
        match slots.get(&key) {
            Some(tx) => tx.send(delivered).map_err(|e| Box::new(e.0)),
            None => Err(Box::new(delivered)),
        }
    }

    /// Opens a waiter for `msg`, stamping its `reply-with`.
    pub fn prepare(self: &Arc<Self>, msg: &mut AclMessage) -> Pending {
        let key = fresh_id();
        msg.reply_with = Some(key.clone());
        let rx = self.register(&key);
        Pending {
            key,
            rx,
            waiters: self.clone(),
            bytes_sent: 0,
        }
    }
}

/// Replies to one outgoing message. Dropping it stops routing further replies.
pub struct Pending {
    key: String,
    rx: Receiver<Delivered>,
    waiters: Arc<Waiters>,
    pub bytes_sent: usize,
}

impl Pending {
    pub fn recv(&self, timeout: Duration) -> Result<Delivered, TransportError> {
        self.rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout(format!("no reply within {}s", timeout.as_secs_f64())),
            RecvTimeoutError::Disconnected => TransportError::Closed,
        })
    }
}

impl Drop for Pending {
    fn drop(&mut self) {
        self.waiters.remove(&self.key);
    }
}

/// Sending side of an AMM: how protocols reach their peers.
pub trait Link: Send + Sync {
    /// Identifier of the local AMM, with its transport address.
    fn local_amm(&self) -> &AgentIdentifier;

    /// Sends without expecting a reply. Returns bytes put on the wire.
    fn post(&self, msg: AclMessage) -> Result<usize, TransportError>;

    /// Sends `msg` and returns a handle on which its replies arrive.
    fn open(&self, msg: AclMessage) -> Result<Pending, TransportError>;
}
