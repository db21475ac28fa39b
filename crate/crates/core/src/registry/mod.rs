//! The open set of migration protocols a node offers, and the contexts their
//! handlers run in.

mod discovery;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::acl::{AclMessage, AgentIdentifier, Content, ContentKind, Frame, Performative};
use crate::events::{EventKind, EventLog, SessionEvent};
use crate::host::AgentHost;
use crate::interaction::{ConversationState, Direction, InteractionPattern, Role};
use crate::link::Link;
use crate::ontology::{MobileAgentDescription, SupportedProtocols};
use crate::push_transfer::{AgentPackage, CodeCache};
use crate::transport::TransportError;

pub use discovery::{
    query_remote_protocols, respond_discovery, CachePolicy, DiscoveryCache, DiscoveryError, RemoteProtocols,
    DEFAULT_DISCOVERY_TTL,
};

pub const MAIN_PROTOCOL: &str = "main-migration-protocol-v1";
pub const PUSH_TRANSFER_PROTOCOL: &str = "push-transfer-protocol-v1";
pub const REGISTRATION_PROTOCOL: &str = "registration-protocol-v1";
pub const POWER_UP_PROTOCOL: &str = "power-up-protocol-v1";
pub const DISCOVERY_PROTOCOL: &str = "supported-protocols-discovery-v1";
/// Operator and housekeeping requests; not part of any migration.
pub const CONTROL_PROTOCOL: &str = "control-protocol-v1";
pub const CONTROL_ONTOLOGY: &str = "control";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MigrationStep {
    PreTransfer,
    Transfer,
    PostTransfer,
    Registration,
    PowerUp,
}

impl MigrationStep {
    pub const ALL: [MigrationStep; 5] = [
        MigrationStep::PreTransfer,
        MigrationStep::Transfer,
        MigrationStep::PostTransfer,
        MigrationStep::Registration,
        MigrationStep::PowerUp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MigrationStep::PreTransfer => "pre-transfer",
            MigrationStep::Transfer => "transfer",
            MigrationStep::PostTransfer => "post-transfer",
            MigrationStep::Registration => "registration",
            MigrationStep::PowerUp => "power-up",
        }
    }

    /// Steps whose protocols are chosen per migration.
    pub fn is_open(self) -> bool {
        matches!(
            self,
            MigrationStep::PreTransfer | MigrationStep::Transfer | MigrationStep::PostTransfer
        )
    }
}

impl fmt::Display for MigrationStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MigrationStep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|step| step.as_str() == s)
            .ok_or_else(|| format!("unknown step `{s}`"))
    }
}

/// Why a step did not complete. The text travels in failure messages.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct StepError(pub String);

impl StepError {
    pub fn new(reason: impl Into<String>) -> Self {
        Self(reason.into())
    }
}

impl From<TransportError> for StepError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout(_) => StepError::new("timeout"),
            other => StepError(format!("transport: {other}")),
        }
    }
}

/// A responder's answer to one incoming message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub performative: Performative,
    pub content: Content,
}

impl Reply {
    pub fn new(performative: Performative, content: Content) -> Self {
        Self { performative, content }
    }

    pub fn done() -> Self {
        Self::new(Performative::Inform, Content::done())
    }

    pub fn failure(reason: impl Into<String>) -> Self {
        Self::new(Performative::Failure, Content::error(reason))
    }

    /// True when this reply ends the migration unsuccessfully.
    pub fn is_negative(&self) -> bool {
        match self.performative {
            Performative::Failure | Performative::Refuse => true,
            Performative::RejectProposal => self.content.is_error(),
            _ => false,
        }
    }
}

/// A protocol usable in one migration step, identified by its well-known name.
pub trait MigrationProtocol: Send + Sync {
    fn name(&self) -> &str;

    fn step(&self) -> MigrationStep;

    /// Runs the protocol from the origin side.
    fn initiate(&self, ctx: &mut InitiatorContext<'_>) -> Result<(), StepError>;

    /// Answers one message at the destination.
    fn respond(&self, ctx: &mut ResponderContext<'_>, msg: &AclMessage) -> Reply;
}

/// Origin-side view of a session while one protocol runs.
pub struct InitiatorContext<'a> {
    pub(crate) session_id: &'a str,
    pub(crate) protocol: &'a str,
    pub(crate) step: MigrationStep,
    pub(crate) peer: &'a AgentIdentifier,
    pub(crate) agent: &'a AgentIdentifier,
    pub(crate) package: &'a AgentPackage,
    pub(crate) link: &'a dyn Link,
    pub(crate) timeout: Duration,
    pub(crate) events: &'a EventLog,
    pub(crate) bytes_sent: u64,
    pub(crate) bytes_received: u64,
    stage_mark: (u64, u64),
}

impl<'a> InitiatorContext<'a> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        session_id: &'a str,
        protocol: &'a str,
        step: MigrationStep,
        peer: &'a AgentIdentifier,
        agent: &'a AgentIdentifier,
        package: &'a AgentPackage,
        link: &'a dyn Link,
        timeout: Duration,
        events: &'a EventLog,
    ) -> Self {
        Self {
            session_id,
            protocol,
            step,
            peer,
            agent,
            package,
            link,
            timeout,
            events,
            bytes_sent: 0,
            bytes_received: 0,
            stage_mark: (0, 0),
        }
    }

    pub fn session_id(&self) -> &str {
        self.session_id
    }

    pub fn package(&self) -> &AgentPackage {
        self.package
    }

    /// The identifier the agent will be registered under at the destination.
    pub fn agent(&self) -> &AgentIdentifier {
        self.agent
    }

    pub fn peer(&self) -> &AgentIdentifier {
        self.peer
    }

    pub fn bytes(&self) -> (u64, u64) {
        (self.bytes_sent, self.bytes_received)
    }

    /// Sends one opening message and waits for the single reply the pattern
    /// allows next. Both directions are checked against the pattern.
    pub fn exchange(
        &mut self,
        pattern: InteractionPattern,
        performative: Performative,
        ontology: &str,
        content: Content,
    ) -> Result<AclMessage, StepError> {
        let mut conversation = ConversationState::new(pattern, Role::Initiator, self.session_id);
        conversation
            .apply(Direction::Sent, performative)
            .map_err(|v| StepError(format!("protocol-violation: {v}")))?;
        let msg = AclMessage {
            performative,
            sender: self.link.local_amm().clone(),
            receiver: self.peer.clone(),
            conversation_id: self.session_id.to_string(),
            protocol: self.protocol.to_string(),
            ontology: ontology.to_string(),
            reply_with: None,
            in_reply_to: None,
            content,
        };
        let pending = self.link.open(msg)?;
        self.bytes_sent += pending.bytes_sent as u64;
        let reply = pending.recv(self.timeout)?;
        self.bytes_received += reply.bytes as u64;
        conversation
            .apply(Direction::Received, reply.message.performative)
            .map_err(|v| StepError(format!("protocol-violation: {v}")))?;
        Ok(reply.message)
    }

    /// Records the end of a stage with the bytes exchanged since the previous one.
    pub fn stage_done(&mut self, stage: u8, reply: Performative) {
        let mut event = SessionEvent::new(EventKind::StageDone, self.session_id, self.step.as_str(), self.protocol)
            .bytes(
                self.bytes_sent - self.stage_mark.0,
                self.bytes_received - self.stage_mark.1,
            );
        event.stage = Some((stage, reply.as_str().to_string()));
        self.events.record(event);
        self.stage_mark = (self.bytes_sent, self.bytes_received);
    }
}

/// Interprets a simplified-request reply: inform succeeds, failure carries the reason.
pub fn expect_inform(reply: &AclMessage) -> Result<(), StepError> {
    match reply.performative {
        Performative::Inform => Ok(()),
        _ => Err(StepError::new(reply.content.reason().unwrap_or("failure"))),
    }
}

/// Destination-side scratch space of one migration session.
#[derive(Debug, Default)]
pub struct SessionScratch {
    staged: Option<AgentPackage>,
    registered: Option<AgentIdentifier>,
    notes: HashMap<String, String>,
}

impl SessionScratch {
    pub fn staged(&self) -> Option<&AgentPackage> {
        self.staged.as_ref()
    }

    pub fn registered(&self) -> Option<&AgentIdentifier> {
        self.registered.as_ref()
    }

    pub(crate) fn take_staged(&mut self) -> Option<AgentPackage> {
        self.staged.take()
    }

    pub(crate) fn take_registered(&mut self) -> Option<AgentIdentifier> {
        self.registered.take()
    }
}

/// Destination-side view of a session while one protocol message is handled.
pub struct ResponderContext<'a> {
    pub session_id: &'a str,
    pub host: &'a AgentHost,
    pub cache: &'a CodeCache,
    pub(crate) scratch: &'a mut SessionScratch,
}

impl ResponderContext<'_> {
    /// Hands a received package to the registration step.
    pub fn stage_package(&mut self, package: AgentPackage) {
        self.scratch.staged = Some(package);
    }

    pub fn staged_package(&self) -> Option<&AgentPackage> {
        self.scratch.staged.as_ref()
    }

    pub fn set_registered(&mut self, id: AgentIdentifier) {
        self.scratch.registered = Some(id);
    }

    pub fn registered(&self) -> Option<&AgentIdentifier> {
        self.scratch.registered.as_ref()
    }

    pub fn note(&self, key: &str) -> Option<&str> {
        self.scratch.notes.get(key).map(String::as_str)
    }

    pub fn set_note(&mut self, key: &str, value: impl Into<String>) {
        self.scratch.notes.insert(key.to_string(), value.into());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("protocol `{0}` is already registered")]
    DuplicateName(String),
    #[error("protocol `{0}` belongs to a fixed step and cannot be registered")]
    FixedStep(String),
    #[error("no transfer protocol is registered; the node is not migration-capable")]
    NotMigrationCapable,
}

#[derive(Default, Clone)]
pub struct ProtocolRegistry {
    protocols: Vec<Arc<dyn MigrationProtocol>>,
}

impl ProtocolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, protocol: Arc<dyn MigrationProtocol>) -> Result<(), RegistryError> {
        if !protocol.step().is_open() {
            return Err(RegistryError::FixedStep(protocol.name().to_string()));
        }
        if self.get(protocol.name()).is_some() {
            return Err(RegistryError::DuplicateName(protocol.name().to_string()));
        }
        self.protocols.push(protocol);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn MigrationProtocol>> {
        self.protocols.iter().find(|p| p.name() == name).cloned()
    }

    /// The protocol registered as `name` under `step`; a different step does not count.
    pub fn get_for_step(&self, name: &str, step: MigrationStep) -> Option<Arc<dyn MigrationProtocol>> {
        self.get(name).filter(|p| p.step() == step)
    }

    pub fn names(&self, step: MigrationStep) -> Vec<String> {
        self.protocols
            .iter()
            .filter(|p| p.step() == step)
            .map(|p| p.name().to_string())
            .collect()
    }

    pub fn supported_protocols(&self) -> Result<SupportedProtocols, RegistryError> {
        let transfer = self.names(MigrationStep::Transfer);
        if transfer.is_empty() {
            return Err(RegistryError::NotMigrationCapable);
        }
        let optional = |l: Vec<String>| if l.is_empty() { None } else { Some(l) };
        Ok(SupportedProtocols {
            pre_transfer: optional(self.names(MigrationStep::PreTransfer)),
            transfer,
            post_transfer: optional(self.names(MigrationStep::PostTransfer)),
        })
    }

    /// Names in the description that are not registered under their step.
    pub fn check_request_supported(&self, mad: &MobileAgentDescription) -> Result<(), Vec<String>> {
        let lists = [
            (MigrationStep::PreTransfer, mad.pre_transfer()),
            (MigrationStep::Transfer, mad.transfer.as_slice()),
            (MigrationStep::PostTransfer, mad.post_transfer()),
        ];
        let missing: Vec<String> = lists
            .iter()
            .flat_map(|(step, names)| names.iter().filter(|n| self.get_for_step(n, *step).is_none()))
            .cloned()
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(missing)
        }
    }
}

pub const ACKNOWLEDGE_ONTOLOGY: &str = "acknowledge";

/// A one-message protocol that only asks the peer to acknowledge. Handy as a
/// pre- or post-transfer placeholder.
pub struct AcknowledgeProtocol {
    name: String,
    step: MigrationStep,
}

impl AcknowledgeProtocol {
    pub fn new(name: impl Into<String>, step: MigrationStep) -> Self {
        Self {
            name: name.into(),
            step,
        }
    }
}

impl MigrationProtocol for AcknowledgeProtocol {
    fn name(&self) -> &str {
        &self.name
    }

    fn step(&self) -> MigrationStep {
        self.step
    }

    fn initiate(&self, ctx: &mut InitiatorContext<'_>) -> Result<(), StepError> {
        let content = Content::action("acknowledge", Frame::new());
        let reply = ctx.exchange(
            InteractionPattern::FipaRequestSimplified,
            Performative::Request,
            ACKNOWLEDGE_ONTOLOGY,
            content,
        )?;
        expect_inform(&reply)
    }

    fn respond(&self, _ctx: &mut ResponderContext<'_>, msg: &AclMessage) -> Reply {
        match (&msg.content.kind, msg.content.name.as_deref()) {
            (ContentKind::Action, Some("acknowledge")) => Reply::done(),
            _ => Reply::failure("validation: expected an acknowledge action"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::MobileAgentProfile;

    fn registry(entries: &[(&str, MigrationStep)]) -> ProtocolRegistry {
        let mut r = ProtocolRegistry::new();
        for (name, step) in entries {
            r.register(Arc::new(AcknowledgeProtocol::new(*name, *step))).unwrap();
        }
        r
    }

    fn mad(pre: &[&str], transfer: &[&str]) -> MobileAgentDescription {
        let list = |l: &[&str]| l.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        MobileAgentDescription {
            name: AgentIdentifier::new("bob@a").unwrap(),
            agent_profile: MobileAgentProfile {
                system: "toy".into(),
                language: "toy-itinerary-v1".into(),
                os: None,
            },
            agent_version: None,
            pre_transfer: if pre.is_empty() { None } else { Some(list(pre)) },
            transfer: list(transfer),
            post_transfer: None,
        }
    }

    #[test]
    fn empty_registry_is_not_migration_capable() {
        assert_eq!(
            ProtocolRegistry::new().supported_protocols(),
            Err(RegistryError::NotMigrationCapable)
        );
    }

    #[test]
    fn supported_protocols_group_by_step_in_registration_order() {
        let r = registry(&[
            ("auth-b", MigrationStep::PreTransfer),
            (PUSH_TRANSFER_PROTOCOL, MigrationStep::Transfer),
            ("auth-a", MigrationStep::PreTransfer),
        ]);
        let sp = r.supported_protocols().unwrap();
        assert_eq!(sp.pre_transfer, Some(vec!["auth-b".to_string(), "auth-a".to_string()]));
        assert_eq!(sp.transfer, vec![PUSH_TRANSFER_PROTOCOL.to_string()]);
        assert_eq!(sp.post_transfer, None);
    }

    #[test]
    fn duplicates_and_fixed_steps_are_rejected() {
        let mut r = registry(&[(PUSH_TRANSFER_PROTOCOL, MigrationStep::Transfer)]);
        assert_eq!(
            r.register(Arc::new(AcknowledgeProtocol::new(
                PUSH_TRANSFER_PROTOCOL,
                MigrationStep::Transfer
            ))),
            Err(RegistryError::DuplicateName(PUSH_TRANSFER_PROTOCOL.into()))
        );
        assert!(matches!(
            r.register(Arc::new(AcknowledgeProtocol::new("x", MigrationStep::Registration))),
            Err(RegistryError::FixedStep(_))
        ));
    }

    #[test]
    fn request_support_is_checked_per_step() {
        let r = registry(&[(PUSH_TRANSFER_PROTOCOL, MigrationStep::Transfer)]);
        assert_eq!(r.check_request_supported(&mad(&[], &[PUSH_TRANSFER_PROTOCOL])), Ok(()));
        assert_eq!(
            r.check_request_supported(&mad(&[], &["on-demand-transfer-v1"])),
            Err(vec!["on-demand-transfer-v1".to_string()])
        );
        assert_eq!(
            r.check_request_supported(&mad(&[PUSH_TRANSFER_PROTOCOL], &[PUSH_TRANSFER_PROTOCOL])),
            Err(vec![PUSH_TRANSFER_PROTOCOL.to_string()])
        );
    }

    #[test]
    fn negative_replies() {
        assert!(Reply::failure("x").is_negative());
        assert!(Reply::new(Performative::RejectProposal, Content::error("x")).is_negative());
        assert!(!Reply::new(
            Performative::RejectProposal,
            Content::predicate("negotiate", Frame::new())
        )
        .is_negative());
        assert!(!Reply::done().is_negative());
    }

    #[test]
    fn step_names_round_trip() {
        for step in MigrationStep::ALL {
            assert_eq!(step.as_str().parse::<MigrationStep>(), Ok(step));
        }
        assert!(MigrationStep::PreTransfer < MigrationStep::PowerUp);
    }
}
