//! Conversation state machines for the three interaction patterns used by
//! migration protocols: FIPA request, the simplified request without
//! agree/refuse, and FIPA propose.

use std::fmt;

use thiserror::Error;

use crate::acl::Performative;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InteractionPattern {
    /// request → (refuse | agree); agree → (failure | inform)
    FipaRequest,
    /// request → (failure | inform)
    FipaRequestSimplified,
    /// propose → (accept-proposal | reject-proposal)
    FipaPropose,
}

impl InteractionPattern {
    pub const ALL: [InteractionPattern; 3] = [
        InteractionPattern::FipaRequest,
        InteractionPattern::FipaRequestSimplified,
        InteractionPattern::FipaPropose,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InteractionPattern::FipaRequest => "fipa-request",
            InteractionPattern::FipaRequestSimplified => "fipa-request-simplified",
            InteractionPattern::FipaPropose => "fipa-propose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Start,
    AwaitingAgreement,
    Agreed,
    AwaitingResult,
    TerminalOk,
    TerminalRefused,
    TerminalFailed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::TerminalOk | Phase::TerminalRefused | Phase::TerminalFailed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("protocol violation in {pattern} conversation `{conversation_id}`: {direction:?} {performative} not legal in phase {phase:?}")]
pub struct ProtocolViolation {
    pub pattern: &'static str,
    pub conversation_id: String,
    pub phase: Phase,
    pub direction: Direction,
    pub performative: Performative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationState {
    pub pattern: InteractionPattern,
    pub role: Role,
    pub phase: Phase,
    pub conversation_id: String,
}

impl ConversationState {
    pub fn new(pattern: InteractionPattern, role: Role, conversation_id: impl Into<String>) -> Self {
        Self {
            pattern,
            role,
            phase: Phase::Start,
            conversation_id: conversation_id.into(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.phase.is_terminal()
    }

    /// Applies one message event, returning the successor state.
    pub fn advance(&self, direction: Direction, performative: Performative) -> Result<Self, ProtocolViolation> {
        match successor(self.pattern, self.role, self.phase, direction, performative) {
            Some(phase) => Ok(Self { phase, ..self.clone() }),
            None => Err(ProtocolViolation {
                pattern: self.pattern.as_str(),
                conversation_id: self.conversation_id.clone(),
                phase: self.phase,
                direction,
                performative,
            }),
        }
    }

    /// In-place variant of [`advance`](Self::advance).
    pub fn apply(&mut self, direction: Direction, performative: Performative) -> Result<(), ProtocolViolation> {
        *self = self.advance(direction, performative)?;
        Ok(())
    }

    /// Every event `advance` would accept from the current phase.
    pub fn legal_next(&self) -> Vec<(Direction, Performative)> {
        [Direction::Sent, Direction::Received]
            .into_iter()
            .flat_map(|d| Performative::ALL.into_iter().map(move |p| (d, p)))
            .filter(|&(d, p)| successor(self.pattern, self.role, self.phase, d, p).is_some())
            .collect()
    }
}

impl fmt::Display for ConversationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{:?}/{:?} ({})",
            self.pattern.as_str(),
            self.role,
            self.phase,
            self.conversation_id
        )
    }
}

fn successor(
    pattern: InteractionPattern,
    role: Role,
    phase: Phase,
    direction: Direction,
    performative: Performative,
) -> Option<Phase> {
    use Performative::*;
    use Phase::*;

    // The initiator sends the opening message and receives everything after;
    // the responder mirrors that.
    let expected = match (role, phase == Start) {
        (Role::Initiator, true) | (Role::Responder, false) => Direction::Sent,
        (Role::Initiator, false) | (Role::Responder, true) => Direction::Received,
    };
    if direction != expected {
        return None;
    }

    match (pattern, phase, performative) {
        (InteractionPattern::FipaRequest, Start, Request) => Some(AwaitingAgreement),
        (InteractionPattern::FipaRequest, AwaitingAgreement, Agree) => Some(Agreed),
        (InteractionPattern::FipaRequest, AwaitingAgreement, Refuse) => Some(TerminalRefused),
        (InteractionPattern::FipaRequest, Agreed, Inform) => Some(TerminalOk),
        (InteractionPattern::FipaRequest, Agreed, Failure) => Some(TerminalFailed),

        (InteractionPattern::FipaRequestSimplified, Start, Request) => Some(AwaitingResult),
        (InteractionPattern::FipaRequestSimplified, AwaitingResult, Inform) => Some(TerminalOk),
        (InteractionPattern::FipaRequestSimplified, AwaitingResult, Failure) => Some(TerminalFailed),

        (InteractionPattern::FipaPropose, Start, Propose) => Some(AwaitingResult),
        (InteractionPattern::FipaPropose, AwaitingResult, AcceptProposal) => Some(TerminalOk),
        (InteractionPattern::FipaPropose, AwaitingResult, RejectProposal) => Some(TerminalRefused),

        _ => None,
    }
}
