//! The migration ontology and the push transfer ontology: frame schemas,
//! strict validation, and typed builders/parsers for their actions and
//! predicates.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::acl::{AgentIdentifier, Content, ContentKind, Frame, Value};
use crate::cid::{compute_cid, is_valid_cid};

pub const MIGRATION_ONTOLOGY: &str = "migration-ontology";
pub const PUSH_TRANSFER_ONTOLOGY: &str = "push-transfer-protocol-ontology-v1";

pub const MOBILE_AGENT_DESCRIPTION: &str = "mobile-agent-description";
pub const MOBILE_AGENT_PROFILE: &str = "mobile-agent-profile";
pub const AGENT_IDENTIFIER: &str = "agent-identifier";
pub const SUPPORTED_PROTOCOLS: &str = "supported-protocols";
pub const PUSH_NEGOTIATE_FRAME: &str = "push-transfer-protocol-negotiate";
pub const PUSH_TRANSFER_FRAME: &str = "push-transfer-protocol-transfer";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OntologyError {
    #[error("unknown ontology `{0}`")]
    UnknownOntology(String),
    #[error("unknown frame `{name}` in ontology `{ontology}`")]
    UnknownFrame { ontology: String, name: String },
    #[error("validation failed: {}", join_violations(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("payload does not match the domain of `{0}`: {1}")]
    DomainMismatch(String, String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// One broken rule, e.g. `transfer: mandatory parameter missing`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub parameter: String,
    pub rule: String,
}

impl Violation {
    fn new(parameter: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            parameter: parameter.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.parameter, self.rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Presence {
    Mandatory,
    Optional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamType {
    Text,
    NonEmptyText,
    Cid,
    Bytes,
    /// Ordered, duplicate-free list of strings.
    StringSet,
    NonEmptyStringSet,
    Nested(&'static str),
}

struct FrameSchema {
    ontology: &'static str,
    name: &'static str,
    params: &'static [(&'static str, Presence, ParamType)],
}

use ParamType::*;
use Presence::*;

const FRAMES: &[FrameSchema] = &[
    FrameSchema {
        ontology: MIGRATION_ONTOLOGY,
        name: MOBILE_AGENT_DESCRIPTION,
        params: &[
            ("name", Mandatory, Nested(AGENT_IDENTIFIER)),
            ("agent-profile", Mandatory, Nested(MOBILE_AGENT_PROFILE)),
            ("agent-version", Optional, Text),
            ("pre-transfer", Optional, StringSet),
            ("transfer", Mandatory, NonEmptyStringSet),
            ("post-transfer", Optional, StringSet),
        ],
    },
    FrameSchema {
        ontology: MIGRATION_ONTOLOGY,
        name: MOBILE_AGENT_PROFILE,
        params: &[
            ("system", Mandatory, NonEmptyText),
            ("language", Mandatory, NonEmptyText),
            ("os", Optional, Text),
        ],
    },
    FrameSchema {
        ontology: MIGRATION_ONTOLOGY,
        name: AGENT_IDENTIFIER,
        params: &[("name", Mandatory, NonEmptyText), ("addresses", Mandatory, StringSet)],
    },
    FrameSchema {
        ontology: MIGRATION_ONTOLOGY,
        name: SUPPORTED_PROTOCOLS,
        params: &[
            ("pre-transfer", Optional, StringSet),
            ("transfer", Mandatory, NonEmptyStringSet),
            ("post-transfer", Optional, StringSet),
        ],
    },
    FrameSchema {
        ontology: PUSH_TRANSFER_ONTOLOGY,
        name: PUSH_NEGOTIATE_FRAME,
        params: &[("cid", Optional, Cid)],
    },
    FrameSchema {
        ontology: PUSH_TRANSFER_ONTOLOGY,
        name: PUSH_TRANSFER_FRAME,
        params: &[
            ("cid", Optional, Cid),
            ("code", Optional, Bytes),
            ("data", Mandatory, Bytes),
            ("state", Optional, Bytes),
        ],
    },
];

/// Actions: (ontology, name, domain frame). `None` means the action takes no argument.
const ACTIONS: &[(&str, &str, Option<&str>)] = &[
    (MIGRATION_ONTOLOGY, "move", Some(MOBILE_AGENT_DESCRIPTION)),
    (MIGRATION_ONTOLOGY, "clone", Some(MOBILE_AGENT_DESCRIPTION)),
    (MIGRATION_ONTOLOGY, "register", Some(AGENT_IDENTIFIER)),
    (MIGRATION_ONTOLOGY, "power-up", Some(AGENT_IDENTIFIER)),
    (MIGRATION_ONTOLOGY, "get-supported-protocols", None),
    (PUSH_TRANSFER_ONTOLOGY, "transfer", Some(PUSH_TRANSFER_FRAME)),
];

const PREDICATES: &[(&str, &str, &str)] = &[
    (PUSH_TRANSFER_ONTOLOGY, "negotiate", PUSH_NEGOTIATE_FRAME),
    (MIGRATION_ONTOLOGY, "supported-protocols", SUPPORTED_PROTOCOLS),
];

/// What kind of ontology element a registry name denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElementKind {
    Frame,
    Action,
    Predicate,
}

/// Every (ontology, kind, name) the registry knows, sorted.
pub fn registry_names() -> Vec<(&'static str, ElementKind, &'static str)> {
    let mut names: Vec<_> = FRAMES
        .iter()
        .map(|f| (f.ontology, ElementKind::Frame, f.name))
        .chain(ACTIONS.iter().map(|(o, n, _)| (*o, ElementKind::Action, *n)))
        .chain(PREDICATES.iter().map(|(o, n, _)| (*o, ElementKind::Predicate, *n)))
        .collect();
    names.sort();
    names
}

pub fn is_known_ontology(ontology: &str) -> bool {
    ontology == MIGRATION_ONTOLOGY || ontology == PUSH_TRANSFER_ONTOLOGY
}

fn check_ontology(ontology: &str) -> Result<(), OntologyError> {
    if is_known_ontology(ontology) {
        Ok(())
    } else {
        Err(OntologyError::UnknownOntology(ontology.to_string()))
    }
}

fn schema(ontology: &str, name: &str) -> Result<&'static FrameSchema, OntologyError> {
    check_ontology(ontology)?;
    FRAMES
        .iter()
        .find(|f| f.ontology == ontology && f.name == name)
        .ok_or_else(|| OntologyError::UnknownFrame {
            ontology: ontology.to_string(),
            name: name.to_string(),
        })
}

/// Checks `payload` against the named frame. An empty list means valid.
pub fn validate_frame(ontology: &str, frame_name: &str, payload: &Frame) -> Result<Vec<Violation>, OntologyError> {
    let schema = schema(ontology, frame_name)?;
    let mut violations = Vec::new();
    check_frame(schema, payload, "", &mut violations);
    Ok(violations)
}

fn check_frame(schema: &FrameSchema, payload: &Frame, prefix: &str, out: &mut Vec<Violation>) {
    for key in payload.keys() {
        if !schema.params.iter().any(|(p, _, _)| *p == key) {
            out.push(Violation::new(format!("{prefix}{key}"), "unknown parameter"));
        }
    }
    for &(param, presence, ty) in schema.params {
        let path = format!("{prefix}{param}");
        match payload.get(param) {
            None if presence == Mandatory => out.push(Violation::new(path, "mandatory parameter missing")),
            None => {}
            Some(value) => check_value(schema.ontology, ty, value, payload, param, &path, out),
        }
    }
    if schema.name == PUSH_TRANSFER_FRAME && payload.contains("code") && !payload.contains("cid") {
        out.push(Violation::new(format!("{prefix}cid"), "required when code is present"));
    }
}

fn check_value(
    ontology: &str,
    ty: ParamType,
    value: &Value,
    parent: &Frame,
    param: &str,
    path: &str,
    out: &mut Vec<Violation>,
) {
    match (ty, value) {
        (Text, Value::Text(_)) => {}
        (NonEmptyText, Value::Text(s)) => {
            if s.is_empty() {
                out.push(Violation::new(path, "must be non-empty"));
            }
        }
        (Cid, Value::Text(s)) => {
            if !is_valid_cid(s) {
                out.push(Violation::new(path, "must be 64 lowercase hex characters"));
            }
        }
        (Bytes, Value::Text(_)) => {
            if let Err(e) = parent.get_bytes(param) {
                out.push(Violation::new(path, e.to_string()));
            }
        }
        (StringSet | NonEmptyStringSet, Value::List(items)) => {
            if ty == NonEmptyStringSet && items.is_empty() {
                out.push(Violation::new(path, "must be non-empty"));
            }
            let mut seen = HashSet::new();
            if let Some(dup) = items.iter().find(|i| !seen.insert(i.as_str())) {
                out.push(Violation::new(path, format!("duplicate entry `{dup}`")));
            }
        }
        (Nested(name), Value::Frame(inner)) => {
            let inner_schema = schema(ontology, name).expect("nested schemas are registered");
            check_frame(inner_schema, inner, &format!("{path}."), out);
        }
        _ => out.push(Violation::new(path, format!("expected {}", type_name(ty)))),
    }
}

fn type_name(ty: ParamType) -> &'static str {
    match ty {
        Text | NonEmptyText => "a string",
        Cid => "a cid string",
        Bytes => "a base64 byte-stream",
        StringSet | NonEmptyStringSet => "a list of strings",
        Nested(name) => name,
    }
}

fn validated(ontology: &str, frame_name: &str, payload: &Frame) -> Result<(), OntologyError> {
    let violations = validate_frame(ontology, frame_name, payload)?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(OntologyError::ValidationFailed(violations))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MobileAgentProfile {
    pub system: String,
    pub language: String,
    pub os: Option<String>,
}

impl MobileAgentProfile {
    pub fn to_frame(&self) -> Frame {
        let mut f = Frame::new()
            .with_text("system", self.system.clone())
            .with_text("language", self.language.clone());
        if let Some(os) = &self.os {
            f.insert("os", Value::Text(os.clone()));
        }
        f
    }

    fn from_frame(f: &Frame) -> Self {
        Self {
            system: f.get_text("system").unwrap_or_default().to_string(),
            language: f.get_text("language").unwrap_or_default().to_string(),
            os: f.get_text("os").map(str::to_string),
        }
    }
}

/// The migration request payload: who is moving and with which protocols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MobileAgentDescription {
    pub name: AgentIdentifier,
    pub agent_profile: MobileAgentProfile,
    pub agent_version: Option<String>,
    pub pre_transfer: Option<Vec<String>>,
    pub transfer: Vec<String>,
    pub post_transfer: Option<Vec<String>>,
}

impl MobileAgentDescription {
    pub fn to_frame(&self) -> Frame {
        let mut f = Frame::new()
            .with("name", Value::Frame(self.name.to_frame()))
            .with("agent-profile", Value::Frame(self.agent_profile.to_frame()));
        if let Some(v) = &self.agent_version {
            f.insert("agent-version", Value::Text(v.clone()));
        }
        if let Some(l) = &self.pre_transfer {
            f.insert("pre-transfer", Value::List(l.clone()));
        }
        f.insert("transfer", Value::List(self.transfer.clone()));
        if let Some(l) = &self.post_transfer {
            f.insert("post-transfer", Value::List(l.clone()));
        }
        f
    }

    pub fn from_frame(f: &Frame) -> Result<Self, OntologyError> {
        validated(MIGRATION_ONTOLOGY, MOBILE_AGENT_DESCRIPTION, f)?;
        let name = AgentIdentifier::from_frame(f.get_frame("name").expect("validated"))
            .map_err(|e| OntologyError::ValidationFailed(vec![Violation::new("name", e)]))?;
        Ok(Self {
            name,
            agent_profile: MobileAgentProfile::from_frame(f.get_frame("agent-profile").expect("validated")),
            agent_version: f.get_text("agent-version").map(str::to_string),
            pre_transfer: f.get_list("pre-transfer").map(<[String]>::to_vec),
            transfer: f.get_list("transfer").expect("validated").to_vec(),
            post_transfer: f.get_list("post-transfer").map(<[String]>::to_vec),
        })
    }

    pub fn pre_transfer(&self) -> &[String] {
        self.pre_transfer.as_deref().unwrap_or_default()
    }

    pub fn post_transfer(&self) -> &[String] {
        self.post_transfer.as_deref().unwrap_or_default()
    }
}

/// Protocol names accepted by a platform, grouped by step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SupportedProtocols {
    pub pre_transfer: Option<Vec<String>>,
    pub transfer: Vec<String>,
    pub post_transfer: Option<Vec<String>>,
}

impl SupportedProtocols {
    pub fn to_frame(&self) -> Frame {
        let mut f = Frame::new();
        if let Some(l) = &self.pre_transfer {
            f.insert("pre-transfer", Value::List(l.clone()));
        }
        f.insert("transfer", Value::List(self.transfer.clone()));
        if let Some(l) = &self.post_transfer {
            f.insert("post-transfer", Value::List(l.clone()));
        }
        f
    }

    pub fn from_frame(f: &Frame) -> Result<Self, OntologyError> {
        validated(MIGRATION_ONTOLOGY, SUPPORTED_PROTOCOLS, f)?;
        Ok(Self {
            pre_transfer: f.get_list("pre-transfer").map(<[String]>::to_vec),
            transfer: f.get_list("transfer").expect("validated").to_vec(),
            post_transfer: f.get_list("post-transfer").map(<[String]>::to_vec),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NegotiateFrame {
    pub cid: Option<String>,
}

impl NegotiateFrame {
    pub fn to_frame(&self) -> Frame {
        match &self.cid {
            Some(c) => Frame::new().with_text("cid", c.clone()),
            None => Frame::new(),
        }
    }

    pub fn from_frame(f: &Frame) -> Result<Self, OntologyError> {
        validated(PUSH_TRANSFER_ONTOLOGY, PUSH_NEGOTIATE_FRAME, f)?;
        Ok(Self {
            cid: f.get_text("cid").map(str::to_string),
        })
    }
}

/// Stage-two payload of the push transfer protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferFrame {
    pub cid: Option<String>,
    pub code: Option<Vec<u8>>,
    pub data: Vec<u8>,
    pub state: Option<Vec<u8>>,
}

impl TransferFrame {
    /// A frame carrying the code, with its cid computed from it.
    pub fn with_code(code: Vec<u8>, data: Vec<u8>, state: Option<Vec<u8>>) -> Self {
        Self {
            cid: Some(compute_cid(&code).to_string()),
            code: Some(code),
            data,
            state,
        }
    }

    pub fn to_frame(&self) -> Frame {
        let mut f = Frame::new();
        if let Some(c) = &self.cid {
            f.insert("cid", Value::Text(c.clone()));
        }
        if let Some(code) = &self.code {
            f = f.with_bytes("code", code);
        }
        f = f.with_bytes("data", &self.data);
        if let Some(state) = &self.state {
            f = f.with_bytes("state", state);
        }
        f
    }

    pub fn from_frame(f: &Frame) -> Result<Self, OntologyError> {
        validated(PUSH_TRANSFER_ONTOLOGY, PUSH_TRANSFER_FRAME, f)?;
        let bytes = |k: &str| f.get_bytes(k).expect("validated");
        Ok(Self {
            cid: f.get_text("cid").map(str::to_string),
            code: bytes("code"),
            data: bytes("data").expect("validated"),
            state: bytes("state"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionName {
    Move,
    Clone,
    Register,
    PowerUp,
    GetSupportedProtocols,
    Transfer,
}

impl ActionName {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionName::Move => "move",
            ActionName::Clone => "clone",
            ActionName::Register => "register",
            ActionName::PowerUp => "power-up",
            ActionName::GetSupportedProtocols => "get-supported-protocols",
            ActionName::Transfer => "transfer",
        }
    }

    pub fn ontology(self) -> &'static str {
        match self {
            ActionName::Transfer => PUSH_TRANSFER_ONTOLOGY,
            _ => MIGRATION_ONTOLOGY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredicateName {
    Negotiate,
    SupportedProtocols,
}

impl PredicateName {
    pub fn as_str(self) -> &'static str {
        match self {
            PredicateName::Negotiate => "negotiate",
            PredicateName::SupportedProtocols => "supported-protocols",
        }
    }

    pub fn ontology(self) -> &'static str {
        match self {
            PredicateName::Negotiate => PUSH_TRANSFER_ONTOLOGY,
            PredicateName::SupportedProtocols => MIGRATION_ONTOLOGY,
        }
    }
}

/// Builder input. The variant must match the domain of the action or predicate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Description(MobileAgentDescription),
    Identifier(AgentIdentifier),
    Transfer(TransferFrame),
    Negotiate(NegotiateFrame),
    Supported(SupportedProtocols),
    Empty,
}

impl Payload {
    fn kind_name(&self) -> &'static str {
        match self {
            Payload::Description(_) => MOBILE_AGENT_DESCRIPTION,
            Payload::Identifier(_) => AGENT_IDENTIFIER,
            Payload::Transfer(_) => PUSH_TRANSFER_FRAME,
            Payload::Negotiate(_) => PUSH_NEGOTIATE_FRAME,
            Payload::Supported(_) => SUPPORTED_PROTOCOLS,
            Payload::Empty => "empty",
        }
    }

    fn to_frame(&self) -> Frame {
        match self {
            Payload::Description(d) => d.to_frame(),
            Payload::Identifier(a) => a.to_frame(),
            Payload::Transfer(t) => t.to_frame(),
            Payload::Negotiate(n) => n.to_frame(),
            Payload::Supported(s) => s.to_frame(),
            Payload::Empty => Frame::new(),
        }
    }
}

fn build(
    ontology: &str,
    name: &str,
    domain: Option<&str>,
    payload: &Payload,
    kind: ContentKind,
) -> Result<Content, OntologyError> {
    let mismatch = |why: String| OntologyError::DomainMismatch(name.to_string(), why);
    let frame = payload.to_frame();
    match domain {
        None if *payload == Payload::Empty => {}
        None => return Err(mismatch(format!("takes no argument, got {}", payload.kind_name()))),
        Some(d) if d != payload.kind_name() => {
            return Err(mismatch(format!("expected {d}, got {}", payload.kind_name())))
        }
        Some(d) => {
            let violations = validate_frame(ontology, d, &frame)?;
            if !violations.is_empty() {
                return Err(mismatch(join_violations(&violations)));
            }
        }
    }
    Ok(Content {
        kind,
        name: Some(name.to_string()),
        payload: frame,
    })
}

pub fn build_action(action: ActionName, payload: Payload) -> Result<Content, OntologyError> {
    let domain = ACTIONS
        .iter()
        .find(|(_, n, _)| *n == action.as_str())
        .and_then(|(_, _, d)| *d);
    build(
        action.ontology(),
        action.as_str(),
        domain,
        &payload,
        ContentKind::Action,
    )
}

pub fn build_predicate(predicate: PredicateName, payload: Payload) -> Result<Content, OntologyError> {
    let domain = PREDICATES
        .iter()
        .find(|(_, n, _)| *n == predicate.as_str())
        .map(|(_, _, d)| *d);
    build(
        predicate.ontology(),
        predicate.as_str(),
        domain,
        &payload,
        ContentKind::Predicate,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Move(MobileAgentDescription),
    Clone(MobileAgentDescription),
    Register(AgentIdentifier),
    PowerUp(AgentIdentifier),
    GetSupportedProtocols,
    Transfer(TransferFrame),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    Negotiate(NegotiateFrame),
    SupportedProtocols(SupportedProtocols),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedContent {
    Action(Action),
    Predicate(Predicate),
    Done,
    /// A result wrapping a named predicate, or an untyped result.
    Result(Option<Predicate>),
    Error(String),
}

fn unknown(ontology: &str, name: &str) -> OntologyError {
    OntologyError::UnknownFrame {
        ontology: ontology.to_string(),
        name: name.to_string(),
    }
}

fn parse_identifier(f: &Frame) -> Result<AgentIdentifier, OntologyError> {
    validated(MIGRATION_ONTOLOGY, AGENT_IDENTIFIER, f)?;
    AgentIdentifier::from_frame(f).map_err(|e| OntologyError::ValidationFailed(vec![Violation::new("name", e)]))
}

fn parse_predicate(ontology: &str, name: &str, payload: &Frame) -> Result<Predicate, OntologyError> {
    match (ontology, name) {
        (PUSH_TRANSFER_ONTOLOGY, "negotiate") => Ok(Predicate::Negotiate(NegotiateFrame::from_frame(payload)?)),
        (MIGRATION_ONTOLOGY, "supported-protocols") => {
            Ok(Predicate::SupportedProtocols(SupportedProtocols::from_frame(payload)?))
        }
        _ => Err(unknown(ontology, name)),
    }
}

/// Interprets message content under `ontology`, validating its frame.
pub fn parse_content(content: &Content, ontology: &str) -> Result<ParsedContent, OntologyError> {
    check_ontology(ontology)?;
    let name = content.name.as_deref().unwrap_or_default();
    let payload = &content.payload;
    match content.kind {
        ContentKind::Done => Ok(ParsedContent::Done),
        ContentKind::Error => Ok(ParsedContent::Error(content.reason().unwrap_or_default().to_string())),
        ContentKind::Predicate => Ok(ParsedContent::Predicate(parse_predicate(ontology, name, payload)?)),
        ContentKind::Result => match &content.name {
            Some(n) => Ok(ParsedContent::Result(Some(parse_predicate(ontology, n, payload)?))),
            None => Ok(ParsedContent::Result(None)),
        },
        ContentKind::Action => {
            let action = match (ontology, name) {
                (MIGRATION_ONTOLOGY, "move") => Action::Move(MobileAgentDescription::from_frame(payload)?),
                (MIGRATION_ONTOLOGY, "clone") => Action::Clone(MobileAgentDescription::from_frame(payload)?),
                (MIGRATION_ONTOLOGY, "register") => Action::Register(parse_identifier(payload)?),
                (MIGRATION_ONTOLOGY, "power-up") => Action::PowerUp(parse_identifier(payload)?),
                (MIGRATION_ONTOLOGY, "get-supported-protocols") => {
                    if let Some(k) = payload.keys().next() {
                        return Err(OntologyError::ValidationFailed(vec![Violation::new(
                            k,
                            "unknown parameter",
                        )]));
                    }
                    Action::GetSupportedProtocols
                }
                (PUSH_TRANSFER_ONTOLOGY, "transfer") => Action::Transfer(TransferFrame::from_frame(payload)?),
                _ => return Err(unknown(ontology, name)),
            };
            Ok(ParsedContent::Action(action))
        }
    }
}
