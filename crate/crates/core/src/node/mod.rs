//! A platform node: one AMM, its agents, and a transport endpoint.
//!
//! A dispatcher thread reads the inbox. Replies go to whoever waits for them;
//! every other message is handled on its own thread so a long migration never
//! blocks unrelated traffic. Fault rules from the configuration are applied
//! here, where messages are classified by protocol and performative.

mod config;
pub mod control;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use thiserror::Error;
use tracing::{debug, info, warn};

pub use config::{ConfigError, NodeConfig};

use crate::acl::{decode_message, encode_message, AclMessage, AgentIdentifier, Frame, Performative};
use crate::amm::{Amm, AmmSettings, MigrationError, MigrationKind, MigrationReport, ProtocolLists, ABORT_ACTION};
use crate::host::{AgentHost, HostError, RuntimeEvent, ToyProgram};
use crate::link::{Delivered, Link, Pending, Waiters};
use crate::push_transfer::{CacheError, CodeCache, PushTransferProtocol};
use crate::registry::{
    CachePolicy, DiscoveryError, MigrationProtocol, MigrationStep, ProtocolRegistry, RegistryError, RemoteProtocols,
    CONTROL_PROTOCOL, DISCOVERY_PROTOCOL, MAIN_PROTOCOL, POWER_UP_PROTOCOL, PUSH_TRANSFER_PROTOCOL,
    REGISTRATION_PROTOCOL,
};
use crate::transport::framing::frame_len;
use crate::transport::{
    CountersSnapshot, Envelope, FaultAction, FaultDirection, FaultInjector, FaultPoint, Inbox, MemoryNetwork,
    TcpEndpoint, Transport, TransportError,
};

const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bind: {0}")]
    Bind(TransportError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error(transparent)]
    Migration(#[from] MigrationError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
}

/// Which network a node joins.
pub enum NodeTransport<'a> {
    Memory(&'a MemoryNetwork),
    Tcp,
}

/// Result of one `step_agent` call: the runtime event and, for a hop, the migration it caused.
#[derive(Debug)]
pub struct StepOutcome {
    pub event: RuntimeEvent,
    pub migration: Option<MigrationReport>,
}

struct NodeInner {
    config: NodeConfig,
    amm_id: AgentIdentifier,
    transport: Box<dyn Transport>,
    waiters: Arc<Waiters>,
    faults: FaultInjector,
    amm: Amm,
    stopping: AtomicBool,
    stopped: (Mutex<bool>, Condvar),
}

/// Handle on a running node. Dropping it shuts the node down.
pub struct Node {
    inner: Arc<NodeInner>,
}

impl Node {
    /// Starts a node with push transfer registered, plus `extra` protocols.
    pub fn start(
        config: NodeConfig,
        transport: NodeTransport<'_>,
        extra: Vec<Arc<dyn MigrationProtocol>>,
    ) -> Result<Self, NodeError> {
        config.validate()?;
        let (endpoint, inbox): (Box<dyn Transport>, Inbox) = match transport {
            NodeTransport::Memory(net) => {
                let (e, i) = net.bind(&config.listen_address).map_err(NodeError::Bind)?;
                (Box::new(e), i)
            }
            NodeTransport::Tcp => {
                let (e, i) = TcpEndpoint::bind(&config.listen_address).map_err(NodeError::Bind)?;
                (Box::new(e), i)
            }
        };
        let address = endpoint.local_address().to_string();
        let amm_id = AgentIdentifier::from_parts("amm", &config.platform_name)
            .map_err(|e| ConfigError(e.to_string()))?
            .with_address(address.clone());

        let cache = match &config.code_cache_path {
            Some(dir) => CodeCache::persistent(dir, config.cache_capacity)?,
            None => CodeCache::in_memory(config.cache_capacity),
        };
        let mut registry = ProtocolRegistry::new();
        registry.register(Arc::new(PushTransferProtocol))?;
        for p in extra {
            registry.register(p)?;
        }
        let host = Arc::new(AgentHost::new(config.platform_name.clone(), address.clone()));
        let amm = Amm::new(
            host,
            registry,
            Arc::new(cache),
            AmmSettings {
                step_timeout: config.step_timeout,
                discovery_ttl: config.discovery_ttl,
            },
        );
        let inner = Arc::new(NodeInner {
            faults: FaultInjector::new(config.fault_injections.clone()),
            config,
            amm_id,
            transport: endpoint,
            waiters: Waiters::new(),
            amm,
            stopping: AtomicBool::new(false),
            stopped: (Mutex::new(false), Condvar::new()),
        });

        let dispatcher = inner.clone();
        thread::Builder::new()
            .name(format!("dispatch-{}", inner.config.platform_name))
            .spawn(move || dispatcher.dispatch(inbox))
            .expect("spawn dispatcher");
        let reaper = inner.clone();
        thread::Builder::new()
            .name(format!("reaper-{}", inner.config.platform_name))
            .spawn(move || reaper.reap())
            .expect("spawn reaper");
        info!(platform = %inner.config.platform_name, %address, "node started");
        Ok(Self { inner })
    }

    pub fn start_memory(config: NodeConfig, net: &MemoryNetwork) -> Result<Self, NodeError> {
        Self::start(config, NodeTransport::Memory(net), Vec::new())
    }

    pub fn start_tcp(config: NodeConfig) -> Result<Self, NodeError> {
        Self::start(config, NodeTransport::Tcp, Vec::new())
    }

    pub fn address(&self) -> &str {
        self.inner.transport.local_address()
    }

    pub fn platform(&self) -> &str {
        &self.inner.config.platform_name
    }

    pub fn amm_id(&self) -> &AgentIdentifier {
        &self.inner.amm_id
    }

    pub fn host(&self) -> &AgentHost {
        self.inner.amm.host()
    }

    pub fn amm(&self) -> &Amm {
        &self.inner.amm
    }

    pub fn cache(&self) -> &CodeCache {
        self.inner.amm.cache()
    }

    pub fn faults(&self) -> &FaultInjector {
        &self.inner.faults
    }

    pub fn counters(&self) -> CountersSnapshot {
        self.inner.transport.counters()
    }

    pub fn event_lines(&self) -> Vec<String> {
        self.inner.amm.events().lines()
    }

    pub fn create_agent(
        &self,
        local_name: &str,
        program: &ToyProgram,
        data: BTreeMap<String, String>,
    ) -> Result<AgentIdentifier, NodeError> {
        self.inner.create_agent(local_name, program, data)
    }

    pub fn step_agent(&self, name: &str) -> Result<StepOutcome, NodeError> {
        self.inner.step_agent(name)
    }

    pub fn migrate(
        &self,
        agent: &str,
        destination: &str,
        kind: MigrationKind,
        lists: Option<ProtocolLists>,
    ) -> Result<MigrationReport, NodeError> {
        Ok(self
            .inner
            .amm
            .initiate_migration(self.inner.as_ref(), agent, destination, kind, lists)?)
    }

    pub fn query_protocols(&self, address: &str, policy: CachePolicy) -> Result<RemoteProtocols, NodeError> {
        Ok(self.inner.amm.query_protocols(self.inner.as_ref(), address, policy)?)
    }

    pub fn shutdown(&self) {
        self.inner.shutdown();
    }

    /// Blocks until the node is shut down, locally or by a control request.
    pub fn wait(&self) {
        let (lock, cvar) = &self.inner.stopped;
        let mut stopped = lock.lock().unwrap();
        while !*stopped {
            stopped = cvar.wait(stopped).unwrap();
        }
    }
}

impl Drop for Node {
    fn drop(&mut self) {
        self.inner.shutdown();
    }
}

impl Link for NodeInner {
    fn local_amm(&self) -> &AgentIdentifier {
        &self.amm_id
    }

    fn post(&self, mut msg: AclMessage) -> Result<usize, TransportError> {
        if let Some(point) = self.classify(&msg) {
            match self.faults.trigger(point, FaultDirection::Send) {
                Some(FaultAction::Fail) => return Err(TransportError::InjectedFault(point.to_string())),
                Some(FaultAction::CorruptCode) => corrupt_code(&mut msg),
                None => {}
            }
        }
        let to = msg
            .receiver
            .first_address()
            .ok_or_else(|| TransportError::InvalidAddress(msg.receiver.name().to_string()))?
            .to_string();
        let payload = encode_message(&msg).map_err(|e| TransportError::Io(e.to_string()))?;
        self.transport.send(Envelope {
            to,
            from: self.transport.local_address().to_string(),
            payload,
        })
    }

    fn open(&self, mut msg: AclMessage) -> Result<Pending, TransportError> {
        let mut pending = self.waiters.prepare(&mut msg);
        pending.bytes_sent = self.post(msg)?;
        Ok(pending)
    }
}

/// Flips one bit in the middle of the `code` byte-stream, if there is one.
fn corrupt_code(msg: &mut AclMessage) {
    if let Ok(Some(mut code)) = msg.content.payload.get_bytes("code") {
        if !code.is_empty() {
            let mid = code.len() / 2;
            code[mid] ^= 0x01;
            msg.content.payload = std::mem::take(&mut msg.content.payload).with_bytes("code", &code);
        }
    }
}

impl NodeInner {
    fn classify(&self, msg: &AclMessage) -> Option<FaultPoint> {
        match msg.protocol.as_str() {
            MAIN_PROTOCOL => Some(FaultPoint::Main),
            DISCOVERY_PROTOCOL => Some(FaultPoint::Discovery),
            CONTROL_PROTOCOL => None,
            REGISTRATION_PROTOCOL => Some(FaultPoint::Registration),
            POWER_UP_PROTOCOL => Some(FaultPoint::PowerUp),
            PUSH_TRANSFER_PROTOCOL => match msg.performative {
                Performative::Propose | Performative::AcceptProposal | Performative::RejectProposal => {
                    Some(FaultPoint::TransferStage1)
                }
                _ => Some(FaultPoint::TransferStage2),
            },
            other => self.amm.step_of(other).map(|step| match step {
                MigrationStep::PreTransfer => FaultPoint::PreTransfer,
                MigrationStep::PostTransfer => FaultPoint::PostTransfer,
                MigrationStep::Registration => FaultPoint::Registration,
                MigrationStep::PowerUp => FaultPoint::PowerUp,
                MigrationStep::Transfer => FaultPoint::TransferStage2,
            }),
        }
    }

    /// Replies echo whatever name the request was addressed to, which may be
    /// the lenient `amm@<address>`; the node answers under its real name.
    fn signed(&self, mut reply: AclMessage) -> AclMessage {
        reply.sender = self.amm_id.clone();
        reply
    }

    fn dispatch(self: Arc<Self>, inbox: Inbox) {
        while !self.stopping.load(Ordering::SeqCst) {
            let envelope = match inbox.recv_timeout(POLL) {
                Ok(e) => e,
                Err(TransportError::Timeout(_)) => continue,
                Err(_) => break,
            };
            let message = match decode_message(&envelope.payload) {
                Ok(m) => m,
                Err(e) => {
                    warn!(from = %envelope.from, error = %e, "dropping undecodable message");
                    continue;
                }
            };
            let delivered = Delivered {
                message,
                bytes: frame_len(envelope.payload.len()),
            };
            let Err(unclaimed) = self.waiters.deliver(delivered) else {
                continue;
            };
            let message = unclaimed.message;
            if !matches!(message.performative, Performative::Request | Performative::Propose) {
                debug!(conversation = %message.conversation_id, "dropping reply nobody waits for");
                continue;
            }
            let node = self.clone();
            let spawned = thread::Builder::new()
                .name("handler".into())
                .spawn(move || node.handle_incoming(message));
            if let Err(e) = spawned {
                warn!(error = %e, "cannot spawn handler thread");
            }
        }
        debug!(platform = %self.config.platform_name, "dispatcher stopped");
    }

    fn handle_incoming(self: Arc<Self>, msg: AclMessage) {
        if msg.protocol == CONTROL_PROTOCOL {
            let reply = self.handle_control(&msg);
            if let Err(e) = self.post(self.signed(reply)) {
                warn!(error = %e, "cannot deliver control reply");
            }
            if msg.content.name.as_deref() == Some(control::SHUTDOWN) {
                self.shutdown();
            }
            return;
        }
        let fault = self
            .classify(&msg)
            .and_then(|p| self.faults.trigger(p, FaultDirection::Receive).map(|_| p));
        let responses = match fault {
            Some(point) => self.amm.respond_faulted(&msg, &injected_reason(point)),
            None => self.amm.respond(&msg),
        };
        for reply in responses.messages {
            if let Err(e) = self.post(self.signed(reply)) {
                warn!(conversation = %msg.conversation_id, error = %e, "cannot send reply");
            }
        }
        if let Some(name) = responses.powered_up {
            if self.config.autorun {
                self.spawn_runner(name);
            }
        }
    }

    fn reap(self: Arc<Self>) {
        let tick = (self.config.step_timeout / 2).min(Duration::from_millis(500));
        let max_idle = self.config.step_timeout * 3;
        while !self.stopping.load(Ordering::SeqCst) {
            thread::sleep(tick);
            for failure in self.amm.reap_idle(max_idle) {
                self.post(self.signed(failure)).ok();
            }
        }
    }

    fn shutdown(&self) {
        if self.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        self.transport.close();
        let (lock, cvar) = &self.stopped;
        *lock.lock().unwrap() = true;
        cvar.notify_all();
        info!(platform = %self.config.platform_name, "node stopped");
    }

    fn create_agent(
        self: &Arc<Self>,
        local_name: &str,
        program: &ToyProgram,
        data: BTreeMap<String, String>,
    ) -> Result<AgentIdentifier, NodeError> {
        let id = self.amm.host().create_agent(local_name, program, data)?;
        if self.config.autorun {
            self.spawn_runner(id.name().to_string());
        }
        Ok(id)
    }

    fn step_agent(&self, name: &str) -> Result<StepOutcome, NodeError> {
        let event = self.amm.host().step_runtime(name)?;
        let migration = match &event {
            RuntimeEvent::WantsMigration { destination } => {
                Some(
                    self.amm
                        .initiate_migration(self, name, destination, MigrationKind::Move, None)?,
                )
            }
            _ => None,
        };
        Ok(StepOutcome { event, migration })
    }

    fn spawn_runner(self: &Arc<Self>, name: String) {
        let node = self.clone();
        let spawned = thread::Builder::new()
            .name(format!("agent-{name}"))
            .spawn(move || node.run_agent(&name));
        if let Err(e) = spawned {
            warn!(error = %e, "cannot spawn agent runner");
        }
    }

    /// Steps an agent until it stops, leaves, or a hop fails past its retries.
    fn run_agent(&self, name: &str) {
        let mut retries = self.config.hop_retries;
        while !self.stopping.load(Ordering::SeqCst) {
            match self.step_agent(name) {
                Ok(StepOutcome {
                    event: RuntimeEvent::Stopped,
                    ..
                }) => return,
                Ok(StepOutcome {
                    migration: Some(report),
                    ..
                }) => {
                    if report.outcome.is_success() {
                        return;
                    }
                    warn!(agent = name, outcome = %report.outcome, "hop failed");
                    if retries == 0 {
                        return;
                    }
                    retries -= 1;
                }
                Ok(_) => {}
                Err(e) => {
                    debug!(agent = name, error = %e, "runner stopped");
                    return;
                }
            }
        }
    }

    fn handle_control(self: &Arc<Self>, msg: &AclMessage) -> AclMessage {
        let action = msg.content.name.clone().unwrap_or_default();
        let p = &msg.content.payload;
        let result: Result<Vec<String>, String> = match action.as_str() {
            control::CREATE_AGENT => self.control_create(p),
            control::LIST_AGENTS => Ok(self.amm.host().list().iter().map(ToString::to_string).collect()),
            control::STEP_AGENT => self.control_step(p),
            control::MIGRATE => self.control_migrate(p),
            control::QUERY_PROTOCOLS => self.control_query(p),
            control::LIST_CACHE => Ok(self.amm.cache().list().iter().map(|c| format!("cid={c}")).collect()),
            control::COUNTERS => Ok(self.transport.counters().lines()),
            control::EVENTS => Ok(self.amm.events().lines()),
            control::SHUTDOWN => Ok(vec![format!("platform={} state=stopping", self.config.platform_name)]),
            ABORT_ACTION => {
                let aborted = self.amm.abort_session(&msg.conversation_id);
                Ok(vec![format!("session={} aborted={aborted}", msg.conversation_id)])
            }
            other => Err(format!("unknown control action `{other}`")),
        };
        match result {
            Ok(lines) => control::lines_reply(msg, lines),
            Err(reason) => control::error_reply(msg, reason),
        }
    }

    fn control_create(self: &Arc<Self>, p: &Frame) -> Result<Vec<String>, String> {
        let name = required(p, "name")?;
        let program = ToyProgram::parse(required(p, "program")?.as_bytes()).map_err(|e| e.to_string())?;
        let mut data = BTreeMap::new();
        for entry in p.get_list("data").unwrap_or_default() {
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| format!("data entry `{entry}` must be key=value"))?;
            data.insert(k.to_string(), v.to_string());
        }
        let id = self.create_agent(name, &program, data).map_err(|e| e.to_string())?;
        Ok(self
            .amm
            .host()
            .get(id.name())
            .map(|a| a.to_string())
            .into_iter()
            .collect())
    }

    fn control_step(&self, p: &Frame) -> Result<Vec<String>, String> {
        let outcome = self.step_agent(required(p, "name")?).map_err(|e| e.to_string())?;
        let mut lines = vec![outcome.event.to_string()];
        if let Some(report) = outcome.migration {
            lines.extend(report.lines());
        }
        Ok(lines)
    }

    fn control_migrate(&self, p: &Frame) -> Result<Vec<String>, String> {
        let name = required(p, "name")?;
        let destination = required(p, "destination")?;
        let kind = match p.get_text("kind").unwrap_or("move") {
            "move" => MigrationKind::Move,
            "clone" => MigrationKind::Clone,
            other => return Err(format!("unknown migration kind `{other}`")),
        };
        let list = |k: &str| p.get_list(k).map(<[String]>::to_vec).unwrap_or_default();
        let lists = ProtocolLists {
            pre_transfer: list("pre-transfer"),
            transfer: list("transfer"),
            post_transfer: list("post-transfer"),
        };
        let explicit = !(lists.transfer.is_empty() && lists.pre_transfer.is_empty() && lists.post_transfer.is_empty());
        let report = self
            .amm
            .initiate_migration(self, name, destination, kind, explicit.then_some(lists))
            .map_err(|e| e.to_string())?;
        if report.outcome.is_success() {
            Ok(report.lines())
        } else {
            Err(format!("migration {}", report.outcome))
        }
    }

    fn control_query(&self, p: &Frame) -> Result<Vec<String>, String> {
        let address = required(p, "address")?;
        let policy = match p.get_text("policy").unwrap_or("use-cache") {
            "use-cache" => CachePolicy::UseCache,
            "bypass-cache" => CachePolicy::BypassCache,
            other => return Err(format!("unknown cache policy `{other}`")),
        };
        let remote = self
            .amm
            .query_protocols(self, address, policy)
            .map_err(|e| e.to_string())?;
        let join = |l: &Option<Vec<String>>| l.as_deref().unwrap_or_default().join(",");
        Ok(vec![format!(
            "address={address} amm={} pre-transfer={} transfer={} post-transfer={}",
            remote.amm,
            join(&remote.protocols.pre_transfer),
            remote.protocols.transfer.join(","),
            join(&remote.protocols.post_transfer)
        )])
    }
}

fn required<'a>(p: &'a Frame, key: &str) -> Result<&'a str, String> {
    p.get_text(key).ok_or_else(|| format!("missing parameter `{key}`"))
}

fn injected_reason(point: FaultPoint) -> String {
    match point {
        FaultPoint::Registration => "rebuild-error: injected fault".into(),
        FaultPoint::PowerUp => "resume-error: injected fault".into(),
        other => format!("injected-fault: {other}"),
    }
}
