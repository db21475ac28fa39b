//! The push transfer protocol.
//!
//! Stage 1 proposes the code's CID; the destination accepts when it needs the
//! code and rejects (with empty content) when its cache already holds it.
//! Stage 2 requests the transfer of data, state, and the code if asked for.

mod cache;
mod package;

use std::fmt;

pub use cache::{CacheError, CodeCache, DEFAULT_CACHE_CAPACITY};
pub use package::{AgentPackage, PackageError};

use crate::acl::{AclMessage, Content, Performative};
use crate::cid::Cid;
use crate::interaction::InteractionPattern;
use crate::ontology::{
    build_action, build_predicate, parse_content, Action, ActionName, NegotiateFrame, ParsedContent, Payload,
    Predicate, PredicateName, TransferFrame, PUSH_TRANSFER_ONTOLOGY,
};
use crate::registry::{
    expect_inform, InitiatorContext, MigrationProtocol, MigrationStep, Reply, ResponderContext, StepError,
    PUSH_TRANSFER_PROTOCOL,
};

// session note holding the cid agreed in stage 1 ("" when none was offered)
const NEGOTIATED: &str = "push-transfer.negotiated-cid";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NegotiateReply {
    /// The destination needs the code.
    Accept,
    /// The destination already holds the code.
    RejectHaveCode,
    /// The destination cannot take part; the migration aborts.
    RejectError(String),
}

/// Decides whether the code has to travel.
pub fn handle_negotiate(cache: &CodeCache, frame: &NegotiateFrame) -> NegotiateReply {
    let Some(text) = &frame.cid else {
        return NegotiateReply::Accept;
    };
    let Ok(cid) = text.parse::<Cid>() else {
        return NegotiateReply::RejectError(format!("validation: bad cid `{text}`"));
    };
    match cache.lookup(&cid) {
        Ok(Some(_)) => NegotiateReply::RejectHaveCode,
        // a corrupt entry has just been evicted, so the code is needed again
        Ok(None) | Err(CacheError::CorruptEntry(_)) => NegotiateReply::Accept,
        Err(e) => NegotiateReply::RejectError(format!("cache: {e}")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransferFailure {
    CidMismatch,
    UnknownCid,
    Validation(String),
    Cache(String),
}

impl fmt::Display for TransferFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransferFailure::CidMismatch => f.write_str("cid-mismatch"),
            TransferFailure::UnknownCid => f.write_str("unknown-cid"),
            TransferFailure::Validation(why) => write!(f, "validation: {why}"),
            TransferFailure::Cache(why) => write!(f, "cache: {why}"),
        }
    }
}

/// Verifies a stage-2 frame and assembles the package it describes. Code that
/// arrives is cached only after it hashes to its cid.
pub fn handle_transfer(
    cache: &CodeCache,
    frame: &TransferFrame,
    negotiated: Option<&str>,
) -> Result<AgentPackage, TransferFailure> {
    let cid: Cid = match &frame.cid {
        Some(text) => text
            .parse()
            .map_err(|_| TransferFailure::Validation(format!("bad cid `{text}`")))?,
        None if frame.code.is_some() => {
            return Err(TransferFailure::Validation("cid: required when code is present".into()))
        }
        None => return Err(TransferFailure::UnknownCid),
    };
    if negotiated.is_some_and(|n| n != cid.as_str()) {
        return Err(TransferFailure::CidMismatch);
    }
    let package = |code: Vec<u8>| {
        AgentPackage::from_parts(code, frame.data.clone(), frame.state.clone(), cid.clone()).map_err(|e| match e {
            PackageError::CidMismatch { .. } => TransferFailure::CidMismatch,
            PackageError::EmptyData => TransferFailure::Validation(e.to_string()),
        })
    };
    match &frame.code {
        Some(code) => {
            let package = package(code.clone())?;
            cache
                .store(&cid, code)
                .map_err(|e| TransferFailure::Cache(e.to_string()))?;
            Ok(package)
        }
        None => match cache.lookup(&cid) {
            Ok(Some(code)) => package(code),
            Ok(None) | Err(CacheError::CorruptEntry(_)) => Err(TransferFailure::UnknownCid),
            Err(e) => Err(TransferFailure::Cache(e.to_string())),
        },
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct PushTransferProtocol;

impl PushTransferProtocol {
    fn respond_negotiate(&self, ctx: &mut ResponderContext<'_>, msg: &AclMessage) -> Reply {
        let frame = match parse_content(&msg.content, &msg.ontology) {
            Ok(ParsedContent::Predicate(Predicate::Negotiate(f))) => f,
            Ok(_) => return reject_error("validation: expected the negotiate predicate"),
            Err(e) => return reject_error(format!("validation: {e}")),
        };
        let reply = handle_negotiate(ctx.cache, &frame);
        if let NegotiateReply::RejectError(reason) = reply {
            return reject_error(reason);
        }
        ctx.set_note(NEGOTIATED, frame.cid.clone().unwrap_or_default());
        if reply == NegotiateReply::Accept {
            return Reply::new(Performative::AcceptProposal, msg.content.clone());
        }
        let empty = build_predicate(PredicateName::Negotiate, Payload::Negotiate(NegotiateFrame::default()))
            .expect("cid is optional");
        Reply::new(Performative::RejectProposal, empty)
    }

    fn respond_transfer(&self, ctx: &mut ResponderContext<'_>, msg: &AclMessage) -> Reply {
        let Some(negotiated) = ctx.note(NEGOTIATED).map(str::to_string) else {
            return Reply::failure("protocol-violation: transfer before negotiation");
        };
        let frame = match parse_content(&msg.content, &msg.ontology) {
            Ok(ParsedContent::Action(Action::Transfer(f))) => f,
            Ok(_) => return Reply::failure("validation: expected the transfer action"),
            Err(e) => return Reply::failure(format!("validation: {e}")),
        };
        let negotiated = (!negotiated.is_empty()).then_some(negotiated.as_str());
        match handle_transfer(ctx.cache, &frame, negotiated) {
            Ok(package) => {
                ctx.stage_package(package);
                Reply::done()
            }
            Err(e) => Reply::failure(e.to_string()),
        }
    }
}

fn reject_error(reason: impl Into<String>) -> Reply {
    Reply::new(Performative::RejectProposal, Content::error(reason))
}

impl MigrationProtocol for PushTransferProtocol {
    fn name(&self) -> &str {
        PUSH_TRANSFER_PROTOCOL
    }

    fn step(&self) -> MigrationStep {
        MigrationStep::Transfer
    }

    fn initiate(&self, ctx: &mut InitiatorContext<'_>) -> Result<(), StepError> {
        let package = ctx.package().clone();
        let cid = package.cid().to_string();
        let negotiate = build_predicate(
            PredicateName::Negotiate,
            Payload::Negotiate(NegotiateFrame { cid: Some(cid.clone()) }),
        )
        .map_err(|e| StepError(e.to_string()))?;
        let reply = ctx.exchange(
            InteractionPattern::FipaPropose,
            Performative::Propose,
            PUSH_TRANSFER_ONTOLOGY,
            negotiate,
        )?;
        ctx.stage_done(1, reply.performative);
        let send_code = match reply.performative {
            Performative::AcceptProposal => true,
            Performative::RejectProposal if reply.content.is_error() => {
                return Err(StepError::new(reply.content.reason().unwrap_or("rejected")))
            }
            _ => false,
        };
        let frame = TransferFrame {
            cid: Some(cid),
            code: send_code.then(|| package.code().to_vec()),
            data: package.data().to_vec(),
            state: package.state().map(<[u8]>::to_vec),
        };
        let content =
            build_action(ActionName::Transfer, Payload::Transfer(frame)).map_err(|e| StepError(e.to_string()))?;
        let reply = ctx.exchange(
            InteractionPattern::FipaRequestSimplified,
            Performative::Request,
            PUSH_TRANSFER_ONTOLOGY,
            content,
        )?;
        ctx.stage_done(2, reply.performative);
        expect_inform(&reply)
    }

    fn respond(&self, ctx: &mut ResponderContext<'_>, msg: &AclMessage) -> Reply {
        match msg.performative {
            Performative::Propose => self.respond_negotiate(ctx, msg),
            Performative::Request => self.respond_transfer(ctx, msg),
            other => Reply::failure(format!("protocol-violation: unexpected {other}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cid::compute_cid;

    const CODE: &[u8] = b"toy-itinerary-v1\nstop\n";

    fn negotiate(cid: Option<&Cid>) -> NegotiateFrame {
        NegotiateFrame {
            cid: cid.map(ToString::to_string),
        }
    }

    #[test]
    fn negotiation_accepts_unless_the_code_is_cached() {
        let cache = CodeCache::in_memory(4);
        let cid = compute_cid(CODE);
        assert_eq!(handle_negotiate(&cache, &negotiate(Some(&cid))), NegotiateReply::Accept);
        assert_eq!(handle_negotiate(&cache, &negotiate(None)), NegotiateReply::Accept);
        cache.store(&cid, CODE).unwrap();
        assert_eq!(
            handle_negotiate(&cache, &negotiate(Some(&cid))),
            NegotiateReply::RejectHaveCode
        );
        assert_eq!(handle_negotiate(&cache, &negotiate(None)), NegotiateReply::Accept);
    }

    #[test]
    fn transfer_with_code_verifies_and_caches() {
        let cache = CodeCache::in_memory(4);
        let frame = TransferFrame::with_code(CODE.to_vec(), b"d".to_vec(), Some(b"s".to_vec()));
        let package = handle_transfer(&cache, &frame, frame.cid.as_deref()).unwrap();
        assert_eq!(package.code(), CODE);
        assert_eq!(package.state(), Some(&b"s"[..]));
        assert!(cache.contains(&compute_cid(CODE)));
    }

    #[test]
    fn transfer_without_code_resolves_from_the_cache() {
        let cache = CodeCache::in_memory(4);
        let cid = compute_cid(CODE);
        let frame = TransferFrame {
            cid: Some(cid.to_string()),
            code: None,
            data: b"d".to_vec(),
            state: None,
        };
        assert_eq!(handle_transfer(&cache, &frame, None), Err(TransferFailure::UnknownCid));
        cache.store(&cid, CODE).unwrap();
        assert_eq!(handle_transfer(&cache, &frame, None).unwrap().code(), CODE);
    }

    #[test]
    fn corrupted_code_is_refused_and_not_cached() {
        let cache = CodeCache::in_memory(4);
        let mut frame = TransferFrame::with_code(CODE.to_vec(), b"d".to_vec(), None);
        frame.code.as_mut().unwrap()[0] ^= 0x01;
        assert_eq!(handle_transfer(&cache, &frame, None), Err(TransferFailure::CidMismatch));
        assert!(cache.is_empty());
        assert_eq!(TransferFailure::CidMismatch.to_string(), "cid-mismatch");
    }

    #[test]
    fn cid_must_match_the_negotiated_one() {
        let cache = CodeCache::in_memory(4);
        let frame = TransferFrame::with_code(CODE.to_vec(), b"d".to_vec(), None);
        let other = compute_cid(b"other").to_string();
        assert_eq!(
            handle_transfer(&cache, &frame, Some(&other)),
            Err(TransferFailure::CidMismatch)
        );
    }

    #[test]
    fn empty_data_is_a_validation_failure() {
        let cache = CodeCache::in_memory(4);
        let frame = TransferFrame::with_code(CODE.to_vec(), Vec::new(), None);
        assert!(matches!(
            handle_transfer(&cache, &frame, None),
            Err(TransferFailure::Validation(_))
        ));
        assert!(cache.is_empty());
    }
}
