//! Hand-written trace oracle for the three interaction patterns, checked
//! against the state machines by brute-force enumeration.

use agent_mobility::acl::Performative;
use agent_mobility::interaction::{ConversationState, Direction, InteractionPattern, Role};

use Performative::*;

/// Complete legal traces, written out by hand.
fn traces(pattern: InteractionPattern) -> Vec<Vec<Performative>> {
    match pattern {
        InteractionPattern::FipaRequest => vec![
            vec![Request, Refuse],
            vec![Request, Agree, Failure],
            vec![Request, Agree, Inform],
        ],
        InteractionPattern::FipaRequestSimplified => vec![vec![Request, Failure], vec![Request, Inform]],
        InteractionPattern::FipaPropose => vec![vec![Propose, AcceptProposal], vec![Propose, RejectProposal]],
    }
}

/// Who sends what: the opening performative comes from the initiator, all others from the responder.
fn direction(role: Role, p: Performative) -> Direction {
    let from_initiator = matches!(p, Request | Propose);
    match (role, from_initiator) {
        (Role::Initiator, true) | (Role::Responder, false) => Direction::Sent,
        _ => Direction::Received,
    }
}

/// Oracle verdict: (accepted as a prefix, complete trace).
fn oracle(pattern: InteractionPattern, role: Role, seq: &[(Direction, Performative)]) -> (bool, bool) {
    let perfs: Vec<Performative> = seq.iter().map(|(_, p)| *p).collect();
    if seq.iter().any(|(d, p)| *d != direction(role, *p)) {
        return (false, false);
    }
    let all = traces(pattern);
    let prefix = all.iter().any(|t| t.starts_with(&perfs));
    let complete = all.contains(&perfs);
    (prefix, complete)
}

fn machine(pattern: InteractionPattern, role: Role, seq: &[(Direction, Performative)]) -> (bool, bool) {
    let mut state = ConversationState::new(pattern, role, "c-1");
    for (d, p) in seq {
        if state.apply(*d, *p).is_err() {
            return (false, false);
        }
    }
    (true, state.is_terminal())
}

/// Enumerates every (direction, performative) sequence up to `max_len` for
/// every pattern and role; returns the number checked and the disagreements.
pub fn enumerate(max_len: usize) -> (usize, Vec<String>) {
    let symbols: Vec<(Direction, Performative)> = [Direction::Sent, Direction::Received]
        .into_iter()
        .flat_map(|d| Performative::ALL.into_iter().map(move |p| (d, p)))
        .collect();
    let mut checked = 0;
    let mut disagreements = Vec::new();
    let mut layer: Vec<Vec<(Direction, Performative)>> = vec![Vec::new()];
    for _ in 0..=max_len {
        for seq in &layer {
            for pattern in InteractionPattern::ALL {
                for role in [Role::Initiator, Role::Responder] {
                    checked += 1;
                    let expected = oracle(pattern, role, seq);
                    let actual = machine(pattern, role, seq);
                    if expected != actual {
                        disagreements.push(format!(
                            "{} {role:?} {seq:?}: oracle {expected:?} machine {actual:?}",
                            pattern.as_str()
                        ));
                    }
                }
            }
        }
        layer = layer
            .iter()
            .flat_map(|s| {
                symbols.iter().map(move |sym| {
                    let mut next = s.clone();
                    next.push(*sym);
                    next
                })
            })
            .collect();
    }
    (checked, disagreements)
}
