//! proptest generators for well-formed messages.

use agent_mobility::acl::{AclMessage, AgentIdentifier, Content, ContentKind, Frame, Performative, Value};
use proptest::prelude::*;

fn token() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9-]{0,10}"
}

fn text() -> impl Strategy<Value = String> {
    // Arbitrary unicode, quotes and escapes included.
    any::<String>()
}

fn identifier() -> impl Strategy<Value = AgentIdentifier> {
    (
        token(),
        token(),
        prop::collection::vec("[a-z0-9.-]{1,12}:[0-9]{1,5}", 0..3),
    )
        .prop_map(|(l, p, addrs)| AgentIdentifier::from_parts(&l, &p).unwrap().with_addresses(addrs))
}

fn value(depth: u32) -> BoxedStrategy<Value> {
    let leaf = prop_oneof![
        text().prop_map(Value::Text),
        prop::collection::vec(text(), 0..4).prop_map(Value::List),
    ];
    if depth == 0 {
        leaf.boxed()
    } else {
        prop_oneof![3 => leaf, 1 => frame(depth - 1).prop_map(Value::Frame)].boxed()
    }
}

pub fn frame(depth: u32) -> BoxedStrategy<Frame> {
    prop::collection::vec((token(), value(depth)), 0..5)
        .prop_map(|entries| {
            let mut f = Frame::new();
            for (k, v) in entries {
                if !f.contains(&k) {
                    f = f.with(k, v);
                }
            }
            f
        })
        .boxed()
}

fn content() -> impl Strategy<Value = Content> {
    let kind = prop_oneof![
        Just(ContentKind::Action),
        Just(ContentKind::Predicate),
        Just(ContentKind::Done),
        Just(ContentKind::Result),
        Just(ContentKind::Error),
    ];
    (kind, token(), any::<bool>(), frame(2), "[^\u{0}]{1,20}").prop_map(|(kind, name, named, payload, reason)| {
        match kind {
            ContentKind::Action => Content::action(name, payload),
            ContentKind::Predicate => Content::predicate(name, payload),
            ContentKind::Done => Content::done(),
            ContentKind::Result => Content::result(named.then_some(name), payload),
            ContentKind::Error => Content::error(reason),
        }
    })
}

pub fn message() -> impl Strategy<Value = AclMessage> {
    (
        prop::sample::select(Performative::ALL.to_vec()),
        identifier(),
        identifier(),
        "[0-9a-f]{1,32}",
        token(),
        token(),
        prop::option::of("[0-9a-f]{32}"),
        prop::option::of("[0-9a-f]{32}"),
        content(),
    )
        .prop_map(
            |(
                performative,
                sender,
                receiver,
                conversation_id,
                protocol,
                ontology,
                reply_with,
                in_reply_to,
                content,
            )| {
                AclMessage {
                    performative,
                    sender,
                    receiver,
                    conversation_id,
                    protocol,
                    ontology,
                    reply_with,
                    in_reply_to,
                    content,
                }
            },
        )
}
