//! ACL message model and the canonical wire codec.
//!
//! Every protocol in the engine speaks through [`AclMessage`]. The wire form is
//! a compact UTF-8 JSON object whose fields appear in a fixed order with absent
//! optionals omitted, so a given message has exactly one valid encoding.
//! [`decode_message`] enforces that by re-encoding and comparing.

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{Map, Value as Json};
use thiserror::Error;

/// Upper bound on a single decoded byte-stream parameter.
pub const MAX_BYTE_STREAM: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AclError {
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("malformed encoding: {0}")]
    MalformedEncoding(String),
    #[error("unknown performative `{0}`")]
    UnknownPerformative(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

/// Errors reading a byte-stream parameter out of a [`Frame`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BytesError {
    #[error("parameter `{0}` is not a string")]
    WrongType(String),
    #[error("parameter `{0}` is not valid base64")]
    NotBase64(String),
    #[error("parameter `{0}` exceeds the {MAX_BYTE_STREAM} byte limit")]
    TooLarge(String),
}

/// A FIPA-style agent name, `local@platform`, plus its transport addresses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentIdentifier {
    name: String,
    addresses: Vec<String>,
}

impl AgentIdentifier {
    pub fn new(name: impl Into<String>) -> Result<Self, AclError> {
        let name = name.into();
        check_agent_name(&name).map_err(AclError::InvalidMessage)?;
        Ok(Self {
            name,
            addresses: Vec::new(),
        })
    }

    /// Builds `local@platform`.
    pub fn from_parts(local: &str, platform: &str) -> Result<Self, AclError> {
        Self::new(format!("{local}@{platform}"))
    }

    pub fn with_address(mut self, address: impl Into<String>) -> Self {
        self.addresses.push(address.into());
        self
    }

    pub fn with_addresses(mut self, addresses: Vec<String>) -> Self {
        self.addresses = addresses;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn addresses(&self) -> &[String] {
        &self.addresses
    }

    pub fn first_address(&self) -> Option<&str> {
        self.addresses.first().map(String::as_str)
    }

    pub fn local_name(&self) -> &str {
        self.name.split_once('@').map(|(l, _)| l).unwrap_or(&self.name)
    }

    pub fn platform(&self) -> &str {
        self.name.split_once('@').map(|(_, p)| p).unwrap_or("")
    }

    /// Same name, different address list.
    pub fn relocated(&self, addresses: Vec<String>) -> Self {
        Self {
            name: self.name.clone(),
            addresses,
        }
    }

    pub fn to_frame(&self) -> Frame {
        Frame::new()
            .with("name", Value::Text(self.name.clone()))
            .with("addresses", Value::List(self.addresses.clone()))
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, String> {
        let name = frame
            .get_text("name")
            .ok_or_else(|| "name: mandatory parameter missing".to_string())?;
        check_agent_name(name)?;
        let addresses = match frame.get("addresses") {
            None => Vec::new(),
            Some(Value::List(l)) => l.clone(),
            Some(_) => return Err("addresses: expected a list of strings".into()),
        };
        Ok(Self {
            name: name.to_string(),
            addresses,
        })
    }
}

impl fmt::Display for AgentIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

fn check_agent_name(name: &str) -> Result<(), String> {
    let mut parts = name.split('@');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(local), Some(platform), None) if !local.is_empty() && !platform.is_empty() => Ok(()),
        _ => Err(format!("agent name `{name}` must have the form local@platform")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Performative {
    Request,
    Agree,
    Refuse,
    Inform,
    Failure,
    Propose,
    AcceptProposal,
    RejectProposal,
}

impl Performative {
    pub const ALL: [Performative; 8] = [
        Performative::Request,
        Performative::Agree,
        Performative::Refuse,
        Performative::Inform,
        Performative::Failure,
        Performative::Propose,
        Performative::AcceptProposal,
        Performative::RejectProposal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Performative::Request => "request",
            Performative::Agree => "agree",
            Performative::Refuse => "refuse",
            Performative::Inform => "inform",
            Performative::Failure => "failure",
            Performative::Propose => "propose",
            Performative::AcceptProposal => "accept-proposal",
            Performative::RejectProposal => "reject-proposal",
        }
    }
}

impl FromStr for Performative {
    type Err = AclError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Performative::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| AclError::UnknownPerformative(s.to_string()))
    }
}

impl fmt::Display for Performative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One parameter value inside a [`Frame`].
///
/// Byte-streams have no variant of their own: they travel as base64 text and
/// are typed by the ontology that owns the frame (see [`Frame::get_bytes`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Text(String),
    List(Vec<String>),
    Frame(Frame),
}

/// Ordered parameter map. Order is part of the canonical encoding and of equality.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Frame {
    entries: Vec<(String, Value)>,
}

impl Frame {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: Value) -> Self {
        self.insert(key, value);
        self
    }

    pub fn with_text(self, key: impl Into<String>, text: impl Into<String>) -> Self {
        self.with(key, Value::Text(text.into()))
    }

    pub fn with_bytes(self, key: impl Into<String>, bytes: &[u8]) -> Self {
        self.with(key, Value::Text(BASE64.encode(bytes)))
    }

    /// Replaces an existing value in place, otherwise appends.
    pub fn insert(&mut self, key: impl Into<String>, value: Value) {
        let key = key.into();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<Value> {
        let pos = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(pos).1)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn get_text(&self, key: &str) -> Option<&str> {
        match self.get(key) {
            Some(Value::Text(s)) => Some(s),
            _ => None,
        }
    }

    pub fn get_list(&self, key: &str) -> Option<&[String]> {
        match self.get(key) {
            Some(Value::List(l)) => Some(l),
            _ => None,
        }
    }

    pub fn get_frame(&self, key: &str) -> Option<&Frame> {
        match self.get(key) {
            Some(Value::Frame(f)) => Some(f),
            _ => None,
        }
    }

    /// Decodes a base64 byte-stream parameter. `Ok(None)` when absent.
    pub fn get_bytes(&self, key: &str) -> Result<Option<Vec<u8>>, BytesError> {
        let text = match self.get(key) {
            None => return Ok(None),
            Some(Value::Text(t)) => t,
            Some(_) => return Err(BytesError::WrongType(key.to_string())),
        };
        // base64 expands 3 bytes to 4 characters
        if text.len() / 4 * 3 > MAX_BYTE_STREAM + 3 {
            return Err(BytesError::TooLarge(key.to_string()));
        }
        let bytes = BASE64
            .decode(text)
            .map_err(|_| BytesError::NotBase64(key.to_string()))?;
        if bytes.len() > MAX_BYTE_STREAM {
            return Err(BytesError::TooLarge(key.to_string()));
        }
        Ok(Some(bytes))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContentKind {
    Action,
    Predicate,
    Done,
    Result,
    Error,
}

impl ContentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContentKind::Action => "action",
            ContentKind::Predicate => "predicate",
            ContentKind::Done => "done",
            ContentKind::Result => "result",
            ContentKind::Error => "error",
        }
    }
}

impl FromStr for ContentKind {
    type Err = AclError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "action" => ContentKind::Action,
            "predicate" => ContentKind::Predicate,
            "done" => ContentKind::Done,
            "result" => ContentKind::Result,
            "error" => ContentKind::Error,
            other => return Err(AclError::MalformedEncoding(format!("unknown content kind `{other}`"))),
        })
    }
}

/// Structured message content: an action, predicate, completion marker, result or error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Content {
    pub kind: ContentKind,
    pub name: Option<String>,
    pub payload: Frame,
}

impl Content {
    pub fn action(name: impl Into<String>, payload: Frame) -> Self {
        Self {
            kind: ContentKind::Action,
            name: Some(name.into()),
            payload,
        }
    }

    pub fn predicate(name: impl Into<String>, payload: Frame) -> Self {
        Self {
            kind: ContentKind::Predicate,
            name: Some(name.into()),
            payload,
        }
    }

    /// The content of an inform-done.
    pub fn done() -> Self {
        Self {
            kind: ContentKind::Done,
            name: None,
            payload: Frame::new(),
        }
    }

    pub fn result(name: Option<String>, payload: Frame) -> Self {
        Self {
            kind: ContentKind::Result,
            name,
            payload,
        }
    }

    pub fn error(reason: impl Into<String>) -> Self {
        Self {
            kind: ContentKind::Error,
            name: None,
            payload: Frame::new().with_text("reason", reason),
        }
    }

    pub fn is_error(&self) -> bool {
        self.kind == ContentKind::Error
    }

    /// The `reason` of an error content.
    pub fn reason(&self) -> Option<&str> {
        if self.is_error() {
            self.payload.get_text("reason")
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            ContentKind::Action | ContentKind::Predicate if self.name.is_none() => {
                Err(format!("{} content requires a name", self.kind.as_str()))
            }
            ContentKind::Error => match self.payload.get_text("reason") {
                Some(r) if !r.is_empty() => Ok(()),
                _ => Err("error content requires a non-empty reason".into()),
            },
            _ => Ok(()),
        }
    }
}

/// A single speech-act message between two agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AclMessage {
    pub performative: Performative,
    pub sender: AgentIdentifier,
    pub receiver: AgentIdentifier,
    pub conversation_id: String,
    pub protocol: String,
    pub ontology: String,
    pub reply_with: Option<String>,
    pub in_reply_to: Option<String>,
    pub content: Content,
}

impl AclMessage {
    pub fn validate(&self) -> Result<(), String> {
        if self.conversation_id.is_empty() {
            return Err("conversation-id must be non-empty".into());
        }
        check_agent_name(&self.sender.name)?;
        check_agent_name(&self.receiver.name)?;
        self.content.validate()
    }
}

/// Builds the reply to `original`: endpoints swapped, conversation metadata copied.
pub fn make_reply(original: &AclMessage, performative: Performative, content: Content) -> AclMessage {
    AclMessage {
        performative,
        sender: original.receiver.clone(),
        receiver: original.sender.clone(),
        conversation_id: original.conversation_id.clone(),
        protocol: original.protocol.clone(),
        ontology: original.ontology.clone(),
        reply_with: None,
        in_reply_to: original.reply_with.clone(),
        content,
    }
}

pub fn encode_message(msg: &AclMessage) -> Result<Vec<u8>, AclError> {
    msg.validate().map_err(AclError::InvalidMessage)?;
    Ok(serde_json::to_vec(&message_to_json(msg)).expect("string-keyed json always serializes"))
}

pub fn decode_message(bytes: &[u8]) -> Result<AclMessage, AclError> {
    let json: Json = serde_json::from_slice(bytes).map_err(|e| AclError::MalformedEncoding(e.to_string()))?;
    let msg = message_from_json(json)?;
    msg.validate().map_err(AclError::InvariantViolation)?;
    let canonical = serde_json::to_vec(&message_to_json(&msg)).expect("json serializes");
    if canonical != bytes {
        return Err(AclError::MalformedEncoding("encoding is not canonical".into()));
    }
    Ok(msg)
}

fn message_to_json(msg: &AclMessage) -> Json {
    let mut m = Map::new();
    m.insert("performative".into(), msg.performative.as_str().into());
    m.insert("sender".into(), aid_to_json(&msg.sender));
    m.insert("receiver".into(), aid_to_json(&msg.receiver));
    m.insert("conversation-id".into(), msg.conversation_id.clone().into());
    m.insert("protocol".into(), msg.protocol.clone().into());
    m.insert("ontology".into(), msg.ontology.clone().into());
    if let Some(r) = &msg.reply_with {
        m.insert("reply-with".into(), r.clone().into());
    }
    if let Some(r) = &msg.in_reply_to {
        m.insert("in-reply-to".into(), r.clone().into());
    }
    m.insert("content".into(), content_to_json(&msg.content));
    Json::Object(m)
}

fn aid_to_json(aid: &AgentIdentifier) -> Json {
    let mut m = Map::new();
    m.insert("name".into(), aid.name.clone().into());
    m.insert(
        "addresses".into(),
        Json::Array(aid.addresses.iter().cloned().map(Json::String).collect()),
    );
    Json::Object(m)
}

fn content_to_json(content: &Content) -> Json {
    let mut m = Map::new();
    m.insert("kind".into(), content.kind.as_str().into());
    if let Some(n) = &content.name {
        m.insert("name".into(), n.clone().into());
    }
    m.insert("payload".into(), frame_to_json(&content.payload));
    Json::Object(m)
}

fn frame_to_json(frame: &Frame) -> Json {
    let mut m = Map::new();
    for (k, v) in &frame.entries {
        let jv = match v {
            Value::Text(s) => Json::String(s.clone()),
            Value::List(l) => Json::Array(l.iter().cloned().map(Json::String).collect()),
            Value::Frame(f) => frame_to_json(f),
        };
        m.insert(k.clone(), jv);
    }
    Json::Object(m)
}

fn malformed(what: impl Into<String>) -> AclError {
    AclError::MalformedEncoding(what.into())
}

fn take_object(json: Json, what: &str) -> Result<Map<String, Json>, AclError> {
    match json {
        Json::Object(m) => Ok(m),
        _ => Err(malformed(format!("{what} must be an object"))),
    }
}

fn take_string(m: &mut Map<String, Json>, key: &str) -> Result<Option<String>, AclError> {
    match m.shift_remove(key) {
        None => Ok(None),
        Some(Json::String(s)) => Ok(Some(s)),
        Some(_) => Err(malformed(format!("`{key}` must be a string"))),
    }
}

fn require_string(m: &mut Map<String, Json>, key: &str) -> Result<String, AclError> {
    take_string(m, key)?.ok_or_else(|| malformed(format!("missing field `{key}`")))
}

fn reject_leftovers(m: &Map<String, Json>, what: &str) -> Result<(), AclError> {
    match m.keys().next() {
        Some(k) => Err(malformed(format!("unexpected field `{k}` in {what}"))),
        None => Ok(()),
    }
}

fn string_list(json: Json, key: &str) -> Result<Vec<String>, AclError> {
    match json {
        Json::Array(items) => items
            .into_iter()
            .map(|i| match i {
                Json::String(s) => Ok(s),
                _ => Err(malformed(format!("`{key}` must contain only strings"))),
            })
            .collect(),
        _ => Err(malformed(format!("`{key}` must be an array"))),
    }
}

fn message_from_json(json: Json) -> Result<AclMessage, AclError> {
    let mut m = take_object(json, "message")?;
    // the performative is checked first so an unknown one is reported as such
    let performative: Performative = require_string(&mut m, "performative")?.parse()?;
    let sender = aid_from_json(
        m.shift_remove("sender")
            .ok_or_else(|| malformed("missing field `sender`"))?,
    )?;
    let receiver = aid_from_json(
        m.shift_remove("receiver")
            .ok_or_else(|| malformed("missing field `receiver`"))?,
    )?;
    let conversation_id = require_string(&mut m, "conversation-id")?;
    let protocol = require_string(&mut m, "protocol")?;
    let ontology = require_string(&mut m, "ontology")?;
    let reply_with = take_string(&mut m, "reply-with")?;
    let in_reply_to = take_string(&mut m, "in-reply-to")?;
    let content = content_from_json(
        m.shift_remove("content")
            .ok_or_else(|| malformed("missing field `content`"))?,
    )?;
    reject_leftovers(&m, "message")?;
    Ok(AclMessage {
        performative,
        sender,
        receiver,
        conversation_id,
        protocol,
        ontology,
        reply_with,
        in_reply_to,
        content,
    })
}

fn aid_from_json(json: Json) -> Result<AgentIdentifier, AclError> {
    let mut m = take_object(json, "agent identifier")?;
    let name = require_string(&mut m, "name")?;
    let addresses = string_list(
        m.shift_remove("addresses")
            .ok_or_else(|| malformed("missing field `addresses`"))?,
        "addresses",
    )?;
    reject_leftovers(&m, "agent identifier")?;
    check_agent_name(&name).map_err(AclError::InvariantViolation)?;
    Ok(AgentIdentifier { name, addresses })
}

fn content_from_json(json: Json) -> Result<Content, AclError> {
    let mut m = take_object(json, "content")?;
    let kind: ContentKind = require_string(&mut m, "kind")?.parse()?;
    let name = take_string(&mut m, "name")?;
    let payload = frame_from_json(
        m.shift_remove("payload")
            .ok_or_else(|| malformed("missing field `payload`"))?,
    )?;
    reject_leftovers(&m, "content")?;
    Ok(Content { kind, name, payload })
}

fn frame_from_json(json: Json) -> Result<Frame, AclError> {
    let m = take_object(json, "frame")?;
    let mut frame = Frame::new();
    for (k, v) in m {
        let value = match v {
            Json::String(s) => Value::Text(s),
            arr @ Json::Array(_) => Value::List(string_list(arr, &k)?),
            obj @ Json::Object(_) => Value::Frame(frame_from_json(obj)?),
            _ => return Err(malformed(format!("parameter `{k}` has an unsupported type"))),
        };
        frame.entries.push((k, value));
    }
    Ok(frame)
}
