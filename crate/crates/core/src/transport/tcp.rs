//! TCP transport. One pooled outbound connection per peer keeps sends FIFO;
//! every inbound connection gets a reader thread that pushes decoded frames
//! into the endpoint's inbox.

use std::collections::HashMap;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use tracing::{debug, warn};

use super::framing::{frame_len, read_frame, write_frame, FrameError, MAX_FRAME};
use super::{CountersSnapshot, Envelope, Inbox, Transport, TransportCounters, TransportError};
use crate::acl::decode_message;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);

struct Shared {
    address: String,
    bound: SocketAddr,
    counters: TransportCounters,
    closed: AtomicBool,
    pool: Mutex<HashMap<String, TcpStream>>,
    inbound: Mutex<Vec<TcpStream>>,
}

pub struct TcpEndpoint {
    shared: Arc<Shared>,
}

impl TcpEndpoint {
    /// Binds `address` (`host:port`, port 0 picks a free one) and starts accepting.
    pub fn bind(address: &str) -> Result<(Self, Inbox), TransportError> {
        let listener =
            TcpListener::bind(address).map_err(|e| TransportError::Bind(address.to_string(), e.to_string()))?;
        let bound = listener
            .local_addr()
            .map_err(|e| TransportError::Bind(address.to_string(), e.to_string()))?;
        let advertised = if address.ends_with(":0") {
            bound.to_string()
        } else {
            address.to_string()
        };
        let shared = Arc::new(Shared {
            address: advertised,
            bound,
            counters: TransportCounters::default(),
            closed: AtomicBool::new(false),
            pool: Mutex::new(HashMap::new()),
            inbound: Mutex::new(Vec::new()),
        });
        let (tx, rx) = mpsc::channel();
        let accept_shared = shared.clone();
        thread::Builder::new()
            .name(format!("tcp-accept-{}", shared.address))
            .spawn(move || accept_loop(listener, accept_shared, tx))
            .map_err(|e| TransportError::Io(e.to_string()))?;
        Ok((Self { shared }, Inbox::new(rx)))
    }

    fn connect(&self, to: &str) -> Result<TcpStream, TransportError> {
        let addr = to
            .to_socket_addrs()
            .map_err(|_| TransportError::InvalidAddress(to.to_string()))?
            .next()
            .ok_or_else(|| TransportError::InvalidAddress(to.to_string()))?;
        let stream = TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT).map_err(|e| match e.kind() {
            io::ErrorKind::TimedOut => TransportError::Timeout(format!("connect to {to}")),
            _ => TransportError::ConnectionRefused(to.to_string()),
        })?;
        stream.set_nodelay(true).ok();
        Ok(stream)
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, tx: Sender<Envelope>) {
    for conn in listener.incoming() {
        if shared.closed.load(Ordering::SeqCst) {
            break;
        }
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                warn!(error = %e, "accept failed");
                continue;
            }
        };
        if let Ok(clone) = stream.try_clone() {
            shared.inbound.lock().unwrap().push(clone);
        }
        let reader_shared = shared.clone();
        let reader_tx = tx.clone();
        let spawned = thread::Builder::new()
            .name("tcp-reader".into())
            .spawn(move || read_loop(stream, reader_shared, reader_tx));
        if let Err(e) = spawned {
            warn!(error = %e, "cannot spawn reader thread");
        }
    }
}

fn read_loop(mut stream: TcpStream, shared: Arc<Shared>, tx: Sender<Envelope>) {
    loop {
        let payload = match read_frame(&mut stream) {
            Ok(Some(p)) => p,
            Ok(None) => break,
            Err(FrameError::Io(_)) if shared.closed.load(Ordering::SeqCst) => break,
            Err(e) => {
                warn!(error = %e, "dropping connection with malformed frame");
                break;
            }
        };
        let from = match decode_message(&payload) {
            Ok(msg) => msg.sender.first_address().unwrap_or_default().to_string(),
            Err(e) => {
                warn!(error = %e, "dropping connection carrying an undecodable message");
                break;
            }
        };
        shared.counters.record_received(&from, frame_len(payload.len()));
        let envelope = Envelope {
            to: shared.address.clone(),
            from,
            payload,
        };
        if tx.send(envelope).is_err() {
            break;
        }
    }
    stream.shutdown(Shutdown::Both).ok();
}

impl Transport for TcpEndpoint {
    fn local_address(&self) -> &str {
        &self.shared.address
    }

    fn send(&self, envelope: Envelope) -> Result<usize, TransportError> {
        if self.shared.closed.load(Ordering::SeqCst) {
            return Err(TransportError::Closed);
        }
        if envelope.payload.len() > MAX_FRAME {
            return Err(TransportError::FrameTooLarge(envelope.payload.len()));
        }
        let mut pool = self.shared.pool.lock().unwrap();
        // a pooled connection may have gone stale; retry once on a fresh one
        for attempt in 0..2 {
            let stream = match pool.remove(&envelope.to) {
                Some(s) if attempt == 0 => s,
                _ => self.connect(&envelope.to)?,
            };
            let mut stream = stream;
            match write_frame(&mut stream, &envelope.payload) {
                Ok(n) => {
                    pool.insert(envelope.to.clone(), stream);
                    self.shared.counters.record_sent(&envelope.to, n);
                    return Ok(n);
                }
                Err(e) => debug!(to = %envelope.to, error = %e, "send failed"),
            }
        }
        Err(TransportError::Io(format!("cannot write to {}", envelope.to)))
    }

    fn counters(&self) -> CountersSnapshot {
        self.shared.counters.snapshot()
    }

    fn close(&self) {
        if self.shared.closed.swap(true, Ordering::SeqCst) {
            return;
        }
        for (_, s) in self.shared.pool.lock().unwrap().drain() {
            s.shutdown(Shutdown::Both).ok();
        }
        for s in self.shared.inbound.lock().unwrap().drain(..) {
            s.shutdown(Shutdown::Both).ok();
        }
        // wake the accept loop so it sees the flag
        TcpStream::connect_timeout(&self.shared.bound, Duration::from_millis(200)).ok();
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        self.close();
    }
}
