//! Operator requests over the regular ACL transport, in the private
//! `control` ontology. Replies carry human-readable `key=value` lines.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::acl::{
    decode_message, encode_message, make_reply, AclMessage, AgentIdentifier, Content, Frame, Performative, Value,
};
use crate::link::fresh_id;
use crate::registry::{CONTROL_ONTOLOGY, CONTROL_PROTOCOL};
use crate::transport::{Envelope, TcpEndpoint, Transport, TransportError};

pub const CREATE_AGENT: &str = "create-agent";
pub const LIST_AGENTS: &str = "list-agents";
pub const STEP_AGENT: &str = "step-agent";
pub const MIGRATE: &str = "migrate";
pub const QUERY_PROTOCOLS: &str = "query-protocols";
pub const LIST_CACHE: &str = "list-cache";
pub const COUNTERS: &str = "counters";
pub const EVENTS: &str = "events";
pub const SHUTDOWN: &str = "shutdown";

const LINES: &str = "lines";

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    /// The node carried out the request and reported a domain error.
    #[error("{0}")]
    Remote(String),
    #[error("unexpected reply: {0}")]
    BadReply(String),
}

pub fn lines_reply(request: &AclMessage, lines: Vec<String>) -> AclMessage {
    let payload = Frame::new().with(LINES, Value::List(lines));
    make_reply(
        request,
        Performative::Inform,
        Content::result(Some(LINES.into()), payload),
    )
}

pub fn error_reply(request: &AclMessage, reason: impl Into<String>) -> AclMessage {
    make_reply(request, Performative::Failure, Content::error(reason))
}

/// The output lines of a control reply, or the remote error.
pub fn reply_lines(reply: &AclMessage) -> Result<Vec<String>, ControlError> {
    match reply.performative {
        Performative::Inform => Ok(reply
            .content
            .payload
            .get_list(LINES)
            .map(<[String]>::to_vec)
            .unwrap_or_default()),
        Performative::Failure => Err(ControlError::Remote(
            reply.content.reason().unwrap_or("failure").to_string(),
        )),
        other => Err(ControlError::BadReply(other.to_string())),
    }
}

/// Sends one control request to the node at `node` and waits for its reply.
pub fn send_control(node: &str, action: &str, payload: Frame, timeout: Duration) -> Result<Vec<String>, ControlError> {
    let (endpoint, inbox) = TcpEndpoint::bind("127.0.0.1:0")?;
    let me = endpoint.local_address().to_string();
    let bad_address = |_| TransportError::InvalidAddress(node.to_string());
    let request = AclMessage {
        performative: Performative::Request,
        sender: AgentIdentifier::new(format!("cli@{me}"))
            .map_err(bad_address)?
            .with_address(me.clone()),
        receiver: AgentIdentifier::new(format!("amm@{node}"))
            .map_err(bad_address)?
            .with_address(node),
        conversation_id: fresh_id(),
        protocol: CONTROL_PROTOCOL.to_string(),
        ontology: CONTROL_ONTOLOGY.to_string(),
        reply_with: Some(fresh_id()),
        in_reply_to: None,
        content: Content::action(action, payload),
    };
    let bytes = encode_message(&request).map_err(|e| ControlError::BadReply(e.to_string()))?;
    endpoint.send(Envelope {
        to: node.to_string(),
        from: me,
        payload: bytes,
    })?;
    let deadline = Instant::now() + timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Err(TransportError::Timeout(format!("no reply from {node}")).into());
        }
        let envelope = inbox.recv_timeout(left)?;
        let Ok(reply) = decode_message(&envelope.payload) else {
            continue;
        };
        if reply.in_reply_to == request.reply_with {
            return reply_lines(&reply);
        }
    }
}
