//! The agent mobility manager.
//!
//! As initiator it suspends the agent, runs the Main protocol, then drives
//! every step's protocol in order and finalizes. As responder it agrees or
//! refuses, keeps per-session scratch state, answers sub-protocol messages,
//! and sends the final Main inform or failure. A failed session leaves nothing
//! behind at the destination.

mod fixed;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;
use tracing::{debug, warn};

pub use fixed::{PowerUpProtocol, RegistrationProtocol};

use crate::acl::{make_reply, AclMessage, AgentIdentifier, Content, Frame, Performative};
use crate::events::{EventKind, EventLog, SessionEvent};
use crate::host::{AgentHost, Lifecycle, TOY_FORMAT_TAG};
use crate::interaction::{ConversationState, Direction, InteractionPattern, Role};
use crate::link::{fresh_id, Link};
use crate::ontology::{
    build_action, parse_content, Action, ActionName, MobileAgentDescription, MobileAgentProfile, ParsedContent,
    Payload, SupportedProtocols, MIGRATION_ONTOLOGY,
};
use crate::push_transfer::{AgentPackage, CodeCache};
use crate::registry::{
    query_remote_protocols, respond_discovery, CachePolicy, DiscoveryCache, DiscoveryError, InitiatorContext,
    MigrationProtocol, MigrationStep, ProtocolRegistry, RemoteProtocols, Reply, ResponderContext, SessionScratch,
    StepError, CONTROL_ONTOLOGY, CONTROL_PROTOCOL, DISCOVERY_PROTOCOL, MAIN_PROTOCOL, POWER_UP_PROTOCOL,
    REGISTRATION_PROTOCOL,
};

/// One protocol run in a migration; `None` when the name is not registered locally.
type PlannedStep = (MigrationStep, String, Option<Arc<dyn MigrationProtocol>>);

pub const DEFAULT_STEP_TIMEOUT: Duration = Duration::from_secs(10);
/// Concurrent destination-side sessions before new requests are refused.
pub const MAX_SESSIONS: usize = 64;
/// Control action an origin sends when it gives up on a session the destination agreed to.
pub const ABORT_ACTION: &str = "abort-migration";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MigrationKind {
    Move,
    Clone,
}

impl MigrationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MigrationKind::Move => "move",
            MigrationKind::Clone => "clone",
        }
    }
}

/// Protocol names chosen for one migration, per open step, in execution order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProtocolLists {
    pub pre_transfer: Vec<String>,
    pub transfer: Vec<String>,
    pub post_transfer: Vec<String>,
}

impl ProtocolLists {
    pub fn transfer_only(name: impl Into<String>) -> Self {
        Self {
            transfer: vec![name.into()],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailedAt {
    Main,
    Step(MigrationStep),
}

impl fmt::Display for FailedAt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailedAt::Main => f.write_str("main"),
            FailedAt::Step(s) => f.write_str(s.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MigrationOutcome {
    Succeeded,
    Refused(String),
    Failed {
        at: FailedAt,
        protocol: String,
        reason: String,
    },
}

impl MigrationOutcome {
    pub fn is_success(&self) -> bool {
        *self == MigrationOutcome::Succeeded
    }

    fn label(&self) -> &'static str {
        match self {
            MigrationOutcome::Succeeded => "succeeded",
            MigrationOutcome::Refused(_) => "refused",
            MigrationOutcome::Failed { .. } => "failed",
        }
    }
}

impl fmt::Display for MigrationOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MigrationOutcome::Succeeded => f.write_str("succeeded"),
            MigrationOutcome::Refused(reason) => write!(f, "refused: {reason}"),
            MigrationOutcome::Failed { at, protocol, reason } => write!(f, "failed at {at} ({protocol}): {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepReport {
    pub step: MigrationStep,
    pub protocol: String,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// Everything the origin knows about one finished migration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationReport {
    pub session_id: String,
    pub kind: MigrationKind,
    pub agent: String,
    pub destination: String,
    pub registered_as: Option<AgentIdentifier>,
    pub outcome: MigrationOutcome,
    pub steps: Vec<StepReport>,
    /// Bytes of the Main protocol messages themselves.
    pub main_bytes: (u64, u64),
    pub warning: Option<String>,
}

impl MigrationReport {
    /// Bytes sent and received across all protocols of `step`.
    pub fn step_bytes(&self, step: MigrationStep) -> (u64, u64) {
        self.steps
            .iter()
            .filter(|s| s.step == step)
            .fold((0, 0), |(s, r), x| (s + x.bytes_sent, r + x.bytes_received))
    }

    pub fn lines(&self) -> Vec<String> {
        let mut head = format!(
            "session={} kind={} agent={} destination={} outcome={}",
            self.session_id,
            self.kind.as_str(),
            self.agent,
            self.destination,
            self.outcome.label()
        );
        if let Some(id) = &self.registered_as {
            head.push_str(&format!(" registered-as={id}"));
        }
        match &self.outcome {
            MigrationOutcome::Succeeded => {}
            MigrationOutcome::Refused(reason) => head.push_str(&format!(" reason={reason:?}")),
            MigrationOutcome::Failed { at, reason, .. } => head.push_str(&format!(" step={at} reason={reason:?}")),
        }
        let mut lines = vec![head];
        lines.extend(self.steps.iter().map(|s| {
            format!(
                "step={} protocol={} bytes-sent={} bytes-received={}",
                s.step, s.protocol, s.bytes_sent, s.bytes_received
            )
        }));
        if let Some(w) = &self.warning {
            lines.push(format!("warning={w:?}"));
        }
        lines
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MigrationError {
    #[error("agent `{0}` not found")]
    AgentNotFound(String),
    #[error("agent `{0}` is not active")]
    AgentNotActive(String),
}

/// Messages to send for one incoming message, in order, and the agent that
/// was just powered up, if any.
#[derive(Debug, Default)]
pub struct Responses {
    pub messages: Vec<AclMessage>,
    pub powered_up: Option<String>,
}

impl Responses {
    fn one(msg: AclMessage) -> Self {
        Self {
            messages: vec![msg],
            powered_up: None,
        }
    }
}

struct ResponderSession {
    main_request: AclMessage,
    scratch: SessionScratch,
    last_activity: Instant,
    closed: bool,
}

pub struct AmmSettings {
    pub step_timeout: Duration,
    pub discovery_ttl: Duration,
}

pub struct Amm {
    host: Arc<AgentHost>,
    registry: ProtocolRegistry,
    registration: Arc<dyn MigrationProtocol>,
    power_up: Arc<dyn MigrationProtocol>,
    cache: Arc<CodeCache>,
    discovery: DiscoveryCache,
    step_timeout: Duration,
    sessions: Mutex<HashMap<String, Arc<Mutex<ResponderSession>>>>,
    clone_counters: Mutex<HashMap<(String, String), u32>>,
    events: EventLog,
}

impl Amm {
    pub fn new(host: Arc<AgentHost>, registry: ProtocolRegistry, cache: Arc<CodeCache>, settings: AmmSettings) -> Self {
        Self {
            host,
            registry,
            registration: Arc::new(RegistrationProtocol),
            power_up: Arc::new(PowerUpProtocol),
            cache,
            discovery: DiscoveryCache::new(settings.discovery_ttl),
            step_timeout: settings.step_timeout,
            sessions: Mutex::new(HashMap::new()),
            clone_counters: Mutex::new(HashMap::new()),
            events: EventLog::default(),
        }
    }

    pub fn host(&self) -> &Arc<AgentHost> {
        &self.host
    }

    pub fn registry(&self) -> &ProtocolRegistry {
        &self.registry
    }

    pub fn cache(&self) -> &Arc<CodeCache> {
        &self.cache
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn step_timeout(&self) -> Duration {
        self.step_timeout
    }

    /// Step of a protocol name known to this node, fixed or registered.
    pub fn step_of(&self, protocol: &str) -> Option<MigrationStep> {
        match protocol {
            REGISTRATION_PROTOCOL => Some(MigrationStep::Registration),
            POWER_UP_PROTOCOL => Some(MigrationStep::PowerUp),
            name => self.registry.get(name).map(|p| p.step()),
        }
    }

    /// Destination-side sessions still in progress.
    pub fn live_sessions(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    pub fn query_protocols(
        &self,
        link: &dyn Link,
        address: &str,
        policy: CachePolicy,
    ) -> Result<RemoteProtocols, DiscoveryError> {
        query_remote_protocols(link, &self.discovery, address, policy, self.step_timeout)
    }

    /// Migrates a local agent to the AMM at `destination`. Without explicit
    /// protocol lists, the first transfer protocol both sides support is used.
    pub fn initiate_migration(
        &self,
        link: &dyn Link,
        agent: &str,
        destination: &str,
        kind: MigrationKind,
        lists: Option<ProtocolLists>,
    ) -> Result<MigrationReport, MigrationError> {
        let info = self
            .host
            .get(agent)
            .ok_or_else(|| MigrationError::AgentNotFound(agent.to_string()))?;
        if info.lifecycle != Lifecycle::Active {
            return Err(MigrationError::AgentNotActive(agent.to_string()));
        }
        self.host
            .begin_transit(agent)
            .map_err(|_| MigrationError::AgentNotActive(agent.to_string()))?;
        let mut report = MigrationReport {
            session_id: fresh_id(),
            kind,
            agent: agent.to_string(),
            destination: destination.to_string(),
            registered_as: None,
            outcome: MigrationOutcome::Succeeded,
            steps: Vec::new(),
            main_bytes: (0, 0),
            warning: None,
        };
        if let Err(outcome) = self.drive(link, &info.id, &mut report, lists) {
            report.outcome = outcome;
        }
        self.finalize(&report);
        Ok(report)
    }

    fn drive(
        &self,
        link: &dyn Link,
        id: &AgentIdentifier,
        report: &mut MigrationReport,
        lists: Option<ProtocolLists>,
    ) -> Result<(), MigrationOutcome> {
        let main_failure = |reason: String| MigrationOutcome::Failed {
            at: FailedAt::Main,
            protocol: MAIN_PROTOCOL.to_string(),
            reason,
        };
        let session = report.session_id.clone();
        let remote = self
            .query_protocols(link, &report.destination, CachePolicy::UseCache)
            .map_err(|e| main_failure(format!("discovery: {e}")))?;
        let lists = match lists {
            Some(l) => l,
            None => self
                .default_lists(&remote.protocols)
                .ok_or_else(|| main_failure("no common transfer protocol".into()))?,
        };
        if lists.transfer.is_empty() {
            return Err(main_failure("at least one transfer protocol is required".into()));
        }
        let target = match report.kind {
            MigrationKind::Move => id.relocated(vec![report.destination.clone()]),
            MigrationKind::Clone => self.clone_identifier(id, remote.platform(), &report.destination),
        };
        report.registered_as = Some(target.clone());
        let package = self
            .host
            .departure_package(id.name())
            .map_err(|e| main_failure(format!("snapshot: {e}")))?;

        let optional = |l: &Vec<String>| (!l.is_empty()).then(|| l.clone());
        let mad = MobileAgentDescription {
            name: id.clone(),
            agent_profile: MobileAgentProfile {
                system: "toy-runtime".into(),
                language: TOY_FORMAT_TAG.into(),
                os: None,
            },
            agent_version: None,
            pre_transfer: optional(&lists.pre_transfer),
            transfer: lists.transfer.clone(),
            post_transfer: optional(&lists.post_transfer),
        };
        let action = match report.kind {
            MigrationKind::Move => ActionName::Move,
            MigrationKind::Clone => ActionName::Clone,
        };
        let content = build_action(action, Payload::Description(mad))
            .map_err(|e| main_failure(format!("invalid-description: {e}")))?;
        let peer = remote.amm.clone();
        let request = AclMessage {
            performative: Performative::Request,
            sender: link.local_amm().clone(),
            receiver: peer.clone(),
            conversation_id: session.clone(),
            protocol: MAIN_PROTOCOL.to_string(),
            ontology: MIGRATION_ONTOLOGY.to_string(),
            reply_with: None,
            in_reply_to: None,
            content,
        };
        let mut main = ConversationState::new(InteractionPattern::FipaRequest, Role::Initiator, session.clone());
        main.apply(Direction::Sent, Performative::Request)
            .expect("request opens a fipa-request conversation");
        let pending = link.open(request).map_err(|e| main_failure(StepError::from(e).0))?;
        report.main_bytes.0 += pending.bytes_sent as u64;
        let answer = pending
            .recv(self.step_timeout)
            .map_err(|e| main_failure(StepError::from(e).0))?;
        report.main_bytes.1 += answer.bytes as u64;
        main.apply(Direction::Received, answer.message.performative)
            .map_err(|v| main_failure(format!("protocol-violation: {v}")))?;
        if answer.message.performative == Performative::Refuse {
            let reason = answer.message.content.reason().unwrap_or("refused").to_string();
            return Err(MigrationOutcome::Refused(reason));
        }

        let open_steps = [
            (MigrationStep::PreTransfer, &lists.pre_transfer),
            (MigrationStep::Transfer, &lists.transfer),
            (MigrationStep::PostTransfer, &lists.post_transfer),
        ];
        let mut plan: Vec<PlannedStep> = open_steps
            .iter()
            .flat_map(|(step, names)| {
                names
                    .iter()
                    .map(|n| (*step, n.clone(), self.registry.get_for_step(n, *step)))
            })
            .collect();
        plan.push((
            MigrationStep::Registration,
            REGISTRATION_PROTOCOL.into(),
            Some(self.registration.clone()),
        ));
        plan.push((
            MigrationStep::PowerUp,
            POWER_UP_PROTOCOL.into(),
            Some(self.power_up.clone()),
        ));

        for (step, name, protocol) in plan {
            let result = match protocol {
                Some(p) => self.run_step(link, report, step, p.as_ref(), &peer, &target, &package),
                None => Err(StepError::new("protocol not available at the origin")),
            };
            if let Err(e) = result {
                self.send_abort(link, &peer, &session);
                return Err(MigrationOutcome::Failed {
                    at: FailedAt::Step(step),
                    protocol: name,
                    reason: e.0,
                });
            }
        }

        match pending.recv(self.step_timeout) {
            Ok(done) => {
                report.main_bytes.1 += done.bytes as u64;
                main.apply(Direction::Received, done.message.performative)
                    .map_err(|v| main_failure(format!("protocol-violation: {v}")))?;
                if done.message.performative == Performative::Failure {
                    let reason = done.message.content.reason().unwrap_or("failure").to_string();
                    return Err(main_failure(reason));
                }
            }
            Err(e) => {
                let warning = format!("final inform not received ({e}); the agent was powered up at the destination");
                warn!(session = %session, "{warning}");
                report.warning = Some(warning);
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn run_step(
        &self,
        link: &dyn Link,
        report: &mut MigrationReport,
        step: MigrationStep,
        protocol: &dyn MigrationProtocol,
        peer: &AgentIdentifier,
        target: &AgentIdentifier,
        package: &AgentPackage,
    ) -> Result<(), StepError> {
        let session = report.session_id.clone();
        self.events.record(SessionEvent::new(
            EventKind::StepStarted,
            &session,
            step.as_str(),
            protocol.name(),
        ));
        let mut ctx = InitiatorContext::new(
            &session,
            protocol.name(),
            step,
            peer,
            target,
            package,
            link,
            self.step_timeout,
            &self.events,
        );
        let result = protocol.initiate(&mut ctx);
        let (sent, received) = ctx.bytes();
        report.steps.push(StepReport {
            step,
            protocol: protocol.name().to_string(),
            bytes_sent: sent,
            bytes_received: received,
        });
        let kind = if result.is_ok() {
            EventKind::StepDone
        } else {
            EventKind::StepFailed
        };
        let mut event = SessionEvent::new(kind, &session, step.as_str(), protocol.name()).bytes(sent, received);
        event.reason = result.as_ref().err().map(|e| e.0.clone());
        self.events.record(event);
        result
    }

    fn send_abort(&self, link: &dyn Link, peer: &AgentIdentifier, session: &str) {
        let msg = AclMessage {
            performative: Performative::Request,
            sender: link.local_amm().clone(),
            receiver: peer.clone(),
            conversation_id: session.to_string(),
            protocol: CONTROL_PROTOCOL.to_string(),
            ontology: CONTROL_ONTOLOGY.to_string(),
            reply_with: None,
            in_reply_to: None,
            content: Content::action(ABORT_ACTION, Frame::new()),
        };
        if let Err(e) = link.post(msg) {
            debug!(session, error = %e, "abort notice not delivered");
        }
    }

    fn finalize(&self, report: &MigrationReport) {
        let name = &report.agent;
        let restored = match (&report.outcome, report.kind) {
            (MigrationOutcome::Succeeded, MigrationKind::Move) => self.host.kill_agent(name),
            _ => self.host.resume_agent(name),
        };
        if let Err(e) = restored {
            warn!(agent = %name, error = %e, "cannot finalize origin agent");
        }
        let step = match &report.outcome {
            MigrationOutcome::Failed { at, .. } => at.to_string(),
            _ => "main".to_string(),
        };
        let mut event = SessionEvent::new(EventKind::Finalized, &report.session_id, &step, MAIN_PROTOCOL)
            .bytes(report.main_bytes.0, report.main_bytes.1);
        event.outcome = Some(report.outcome.label().to_string());
        event.reason = match &report.outcome {
            MigrationOutcome::Succeeded => None,
            MigrationOutcome::Refused(r) => Some(r.clone()),
            MigrationOutcome::Failed { reason, .. } => Some(reason.clone()),
        };
        self.events.record(event);
    }

    fn default_lists(&self, remote: &SupportedProtocols) -> Option<ProtocolLists> {
        remote
            .transfer
            .iter()
            .find(|n| self.registry.get_for_step(n, MigrationStep::Transfer).is_some())
            .map(ProtocolLists::transfer_only)
    }

    /// `<local>-clone-<k>@<platform>` with the smallest `k` this origin has not used yet.
    fn clone_identifier(&self, id: &AgentIdentifier, platform: &str, destination: &str) -> AgentIdentifier {
        let mut counters = self.clone_counters.lock().unwrap();
        let k = counters
            .entry((id.name().to_string(), platform.to_string()))
            .or_insert(0);
        *k += 1;
        AgentIdentifier::from_parts(&format!("{}-clone-{k}", id.local_name()), platform)
            .expect("platform comes from a valid identifier")
            .with_address(destination)
    }

    /// Handles one unsolicited message addressed to this AMM.
    pub fn respond(&self, msg: &AclMessage) -> Responses {
        if !matches!(msg.performative, Performative::Request | Performative::Propose) {
            debug!(conversation = %msg.conversation_id, performative = %msg.performative, "dropping stray reply");
            return Responses::default();
        }
        match msg.protocol.as_str() {
            MAIN_PROTOCOL => Responses::one(self.handle_migration_request(msg)),
            DISCOVERY_PROTOCOL => Responses::one(respond_discovery(&self.registry, msg)),
            _ => match self.session_protocol(&msg.protocol) {
                Some(p) => self.handle_session_message(msg, p.as_ref(), None),
                None => Responses::one(negative_reply(msg, format!("unknown-protocol: {}", msg.protocol))),
            },
        }
    }

    /// Answers a message whose receipt was faulted on purpose, with the same
    /// cleanup a genuine failure would trigger.
    pub fn respond_faulted(&self, msg: &AclMessage, reason: &str) -> Responses {
        if !matches!(msg.performative, Performative::Request | Performative::Propose) {
            return Responses::default();
        }
        match msg.protocol.as_str() {
            MAIN_PROTOCOL => Responses::one(make_reply(msg, Performative::Refuse, Content::error(reason))),
            _ => match self.session_protocol(&msg.protocol) {
                Some(p) => {
                    let forced = negative_for(msg.performative, reason.to_string());
                    self.handle_session_message(msg, p.as_ref(), Some(forced))
                }
                None => Responses::one(negative_reply(msg, reason.to_string())),
            },
        }
    }

    fn session_protocol(&self, name: &str) -> Option<Arc<dyn MigrationProtocol>> {
        match name {
            REGISTRATION_PROTOCOL => Some(self.registration.clone()),
            POWER_UP_PROTOCOL => Some(self.power_up.clone()),
            other => self.registry.get(other),
        }
    }

    /// Agrees to a move/clone request or refuses it with a reason.
    pub fn handle_migration_request(&self, msg: &AclMessage) -> AclMessage {
        let refuse = |reason: String| make_reply(msg, Performative::Refuse, Content::error(reason));
        if msg.performative != Performative::Request {
            return refuse(format!("protocol-violation: unexpected {}", msg.performative));
        }
        let mad = match parse_content(&msg.content, &msg.ontology) {
            Ok(ParsedContent::Action(Action::Move(m) | Action::Clone(m))) => m,
            Ok(_) => return refuse("invalid-description: expected move or clone".into()),
            Err(e) => return refuse(format!("invalid-description: {e}")),
        };
        if let Err(e) = self.registry.supported_protocols() {
            return refuse(format!("not-migration-capable: {e}"));
        }
        if let Err(missing) = self.registry.check_request_supported(&mad) {
            return refuse(format!("unsupported-protocols: {}", missing.join(",")));
        }
        let mut sessions = self.sessions.lock().unwrap();
        if sessions.contains_key(&msg.conversation_id) {
            return refuse("invalid-description: duplicate session".into());
        }
        if sessions.len() >= MAX_SESSIONS {
            return refuse("overloaded".into());
        }
        sessions.insert(
            msg.conversation_id.clone(),
            Arc::new(Mutex::new(ResponderSession {
                main_request: msg.clone(),
                scratch: SessionScratch::default(),
                last_activity: Instant::now(),
                closed: false,
            })),
        );
        make_reply(msg, Performative::Agree, msg.content.clone())
    }

    fn handle_session_message(
        &self,
        msg: &AclMessage,
        protocol: &dyn MigrationProtocol,
        forced: Option<Reply>,
    ) -> Responses {
        let id = &msg.conversation_id;
        let Some(session) = self.sessions.lock().unwrap().get(id).cloned() else {
            return Responses::one(negative_reply(msg, "unknown-session".into()));
        };
        let mut s = session.lock().unwrap();
        if s.closed {
            return Responses::one(negative_reply(msg, "unknown-session".into()));
        }
        s.last_activity = Instant::now();

        let pattern = match msg.performative {
            Performative::Propose => InteractionPattern::FipaPropose,
            _ => InteractionPattern::FipaRequestSimplified,
        };
        let mut conversation = ConversationState::new(pattern, Role::Responder, id.clone());
        let reply = match (conversation.apply(Direction::Received, msg.performative), forced) {
            (Err(v), _) => negative_for(msg.performative, format!("protocol-violation: {v}")),
            (Ok(()), Some(forced)) => forced,
            (Ok(()), None) => {
                let mut ctx = ResponderContext {
                    session_id: id,
                    host: &self.host,
                    cache: &self.cache,
                    scratch: &mut s.scratch,
                };
                let reply = protocol.respond(&mut ctx, msg);
                match conversation.advance(Direction::Sent, reply.performative) {
                    Ok(_) => reply,
                    Err(v) => negative_for(msg.performative, format!("internal: {v}")),
                }
            }
        };

        let mut out = Responses::one(make_reply(msg, reply.performative, reply.content.clone()));
        if reply.is_negative() {
            let reason = reply.content.reason().unwrap_or("failure");
            self.abandon(&mut s.scratch);
            s.closed = true;
            let failure = Content::error(format!("{}: {reason}", protocol.step()));
            out.messages
                .push(make_reply(&s.main_request, Performative::Failure, failure));
        } else if protocol.step() == MigrationStep::PowerUp {
            s.closed = true;
            out.messages
                .push(make_reply(&s.main_request, Performative::Inform, Content::done()));
            out.powered_up = s.scratch.registered().map(|r| r.name().to_string());
        }
        let closed = s.closed;
        drop(s);
        if closed {
            self.sessions.lock().unwrap().remove(id);
        }
        out
    }

    /// Discards whatever a failed session left at this destination.
    fn abandon(&self, scratch: &mut SessionScratch) {
        scratch.take_staged();
        if let Some(id) = scratch.take_registered() {
            let name = id.name();
            if self.host.get(name).map(|a| a.lifecycle) == Some(Lifecycle::Active) {
                self.host.suspend_agent(name).ok();
            }
            if let Err(e) = self.host.kill_agent(name) {
                warn!(agent = %name, error = %e, "cannot remove rebuilt agent");
            }
        }
    }

    /// Drops a destination-side session the origin gave up on. Returns whether one was open.
    pub fn abort_session(&self, session_id: &str) -> bool {
        let Some(session) = self.sessions.lock().unwrap().get(session_id).cloned() else {
            return false;
        };
        let mut s = session.lock().unwrap();
        let was_open = !s.closed;
        if was_open {
            self.abandon(&mut s.scratch);
            s.closed = true;
        }
        drop(s);
        self.sessions.lock().unwrap().remove(session_id);
        was_open
    }

    /// Closes sessions idle for longer than `max_idle`, returning the Main
    /// failures to send to their origins.
    pub fn reap_idle(&self, max_idle: Duration) -> Vec<AclMessage> {
        let sessions: Vec<(String, Arc<Mutex<ResponderSession>>)> = self
            .sessions
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut failures = Vec::new();
        for (id, session) in sessions {
            let mut s = session.lock().unwrap();
            if s.closed || s.last_activity.elapsed() <= max_idle {
                continue;
            }
            warn!(session = %id, "closing idle migration session");
            self.abandon(&mut s.scratch);
            s.closed = true;
            failures.push(make_reply(
                &s.main_request,
                Performative::Failure,
                Content::error("timeout: session idle"),
            ));
            drop(s);
            self.sessions.lock().unwrap().remove(&id);
        }
        failures
    }
}

/// The negative answer legal for an opening performative.
fn negative_for(opening: Performative, reason: String) -> Reply {
    match opening {
        Performative::Propose => Reply::new(Performative::RejectProposal, Content::error(reason)),
        _ => Reply::failure(reason),
    }
}

fn negative_reply(msg: &AclMessage, reason: String) -> AclMessage {
    let reply = negative_for(msg.performative, reason);
    make_reply(msg, reply.performative, reply.content)
}
