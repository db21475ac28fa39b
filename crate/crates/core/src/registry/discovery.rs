//! Pre-agreement discovery: asking a platform which protocols it accepts.
//!
//! One simplified-request exchange, `request{get-supported-protocols}` answered
//! by an inform whose result wraps the `supported-protocols` predicate.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{ProtocolRegistry, DISCOVERY_PROTOCOL};
use crate::acl::{make_reply, AclMessage, AgentIdentifier, Content, Performative};
use crate::interaction::{ConversationState, Direction, InteractionPattern, Role};
use crate::link::{fresh_id, Link};
use crate::ontology::{
    build_action, build_predicate, parse_content, Action, ActionName, ParsedContent, Payload, Predicate, PredicateName,
    SupportedProtocols, MIGRATION_ONTOLOGY,
};
use crate::transport::TransportError;

pub const DEFAULT_DISCOVERY_TTL: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CachePolicy {
    UseCache,
    BypassCache,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiscoveryError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("remote failure: {0}")]
    RemoteFailure(String),
    #[error("invalid discovery reply: {0}")]
    ValidationFailed(String),
}

/// What a platform answered, and who answered it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteProtocols {
    pub amm: AgentIdentifier,
    pub protocols: SupportedProtocols,
}

impl RemoteProtocols {
    pub fn platform(&self) -> &str {
        self.amm.platform()
    }
}

/// Supported-protocol lists per address. A zero ttl disables caching.
#[derive(Debug)]
pub struct DiscoveryCache {
    ttl: Duration,
    entries: Mutex<HashMap<String, (Instant, RemoteProtocols)>>,
}

impl DiscoveryCache {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    /// A still-fresh entry for `address`.
    pub fn get(&self, address: &str) -> Option<RemoteProtocols> {
        let entries = self.entries.lock().unwrap();
        let (fetched, value) = entries.get(address)?;
        (fetched.elapsed() < self.ttl).then(|| value.clone())
    }

    pub fn put(&self, address: &str, value: RemoteProtocols) {
        if self.ttl.is_zero() {
            return;
        }
        self.entries
            .lock()
            .unwrap()
            .insert(address.to_string(), (Instant::now(), value));
    }
}

/// Asks the AMM at `address` for its supported protocols.
pub fn query_remote_protocols(
    link: &dyn Link,
    cache: &DiscoveryCache,
    address: &str,
    policy: CachePolicy,
    timeout: Duration,
) -> Result<RemoteProtocols, DiscoveryError> {
    if policy == CachePolicy::UseCache {
        if let Some(hit) = cache.get(address) {
            return Ok(hit);
        }
    }
    let receiver = AgentIdentifier::new(format!("amm@{address}"))
        .map_err(|_| TransportError::InvalidAddress(address.to_string()))?
        .with_address(address);
    let conversation_id = fresh_id();
    let mut conversation = ConversationState::new(
        InteractionPattern::FipaRequestSimplified,
        Role::Initiator,
        conversation_id.clone(),
    );
    conversation
        .apply(Direction::Sent, Performative::Request)
        .expect("request opens a simplified conversation");
    let request = AclMessage {
        performative: Performative::Request,
        sender: link.local_amm().clone(),
        receiver,
        conversation_id,
        protocol: DISCOVERY_PROTOCOL.to_string(),
        ontology: MIGRATION_ONTOLOGY.to_string(),
        reply_with: None,
        in_reply_to: None,
        content: build_action(ActionName::GetSupportedProtocols, Payload::Empty).expect("takes no argument"),
    };
    let reply = link.open(request)?.recv(timeout)?.message;
    conversation
        .apply(Direction::Received, reply.performative)
        .map_err(|v| DiscoveryError::ValidationFailed(v.to_string()))?;
    if reply.performative == Performative::Failure {
        return Err(DiscoveryError::RemoteFailure(
            reply.content.reason().unwrap_or("failure").to_string(),
        ));
    }
    let protocols = match parse_content(&reply.content, MIGRATION_ONTOLOGY) {
        Ok(ParsedContent::Result(Some(Predicate::SupportedProtocols(sp)))) => sp,
        Ok(other) => {
            return Err(DiscoveryError::ValidationFailed(format!(
                "unexpected content {other:?}"
            )))
        }
        Err(e) => return Err(DiscoveryError::ValidationFailed(e.to_string())),
    };
    let result = RemoteProtocols {
        amm: reply.sender.relocated(vec![address.to_string()]),
        protocols,
    };
    cache.put(address, result.clone());
    Ok(result)
}

/// Destination side of discovery.
pub fn respond_discovery(registry: &ProtocolRegistry, msg: &AclMessage) -> AclMessage {
    let fail = |reason: String| make_reply(msg, Performative::Failure, Content::error(reason));
    if msg.performative != Performative::Request {
        return fail(format!("protocol-violation: unexpected {}", msg.performative));
    }
    match parse_content(&msg.content, &msg.ontology) {
        Ok(ParsedContent::Action(Action::GetSupportedProtocols)) => {}
        Ok(_) => return fail("validation: expected get-supported-protocols".into()),
        Err(e) => return fail(format!("validation: {e}")),
    }
    match registry.supported_protocols() {
        Ok(sp) => {
            let predicate = build_predicate(PredicateName::SupportedProtocols, Payload::Supported(sp))
                .expect("registry lists are valid");
            let content = Content::result(predicate.name, predicate.payload);
            make_reply(msg, Performative::Inform, content)
        }
        Err(e) => fail(format!("not-migration-capable: {e}")),
    }
}
