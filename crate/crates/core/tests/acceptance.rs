//! End-to-end acceptance checks. Runs without the default harness and prints
//! one PASS/FAIL line per criterion.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use agent_mobility::acl::{decode_message, encode_message, AclMessage, ContentKind, Performative};
use agent_mobility::amm::{FailedAt, MigrationKind, MigrationOutcome, MigrationReport, ProtocolLists};
use agent_mobility::events::EventKind;
use agent_mobility::node::{Node, NodeConfig};
use agent_mobility::registry::{
    CachePolicy, MigrationStep, DISCOVERY_PROTOCOL, MAIN_PROTOCOL, POWER_UP_PROTOCOL, PUSH_TRANSFER_PROTOCOL,
    REGISTRATION_PROTOCOL,
};
use agent_mobility::transport::framing::decode_frame;
use agent_mobility::transport::{FaultDirection, FaultPoint, FaultRule, MemoryNetwork};
use base64::Engine;
use proptest::test_runner::{Config, TestRunner};

use common::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const GOLDEN_JSON: &[u8] = include_bytes!("golden/main_request.json");
const GOLDEN_FRAME: &[u8] = include_bytes!("golden/main_request.frame");
const GOLDEN_CONVERSATION: &str = "0123456789abcdef0123456789abcdef";
const GOLDEN_REPLY_WITH: &str = "fedcba9876543210fedcba9876543210";

struct Trio {
    net: MemoryNetwork,
    a: Node,
    b: Node,
    c: Node,
}

fn trio() -> Trio {
    let net = MemoryNetwork::new();
    let a = memory_node(&net, "A", A, Vec::new());
    let b = memory_node(&net, "B", B, Vec::new());
    let c = memory_node(&net, "C", C, Vec::new());
    Trio { net, a, b, c }
}

fn ok(report: &MigrationReport) -> Result<(), String> {
    ensure!(report.outcome.is_success(), "migration {}", report.outcome);
    Ok(())
}

/// Suspends, snapshots and resumes an agent: the exact data bytes it would travel with.
fn data_bytes(node: &Node, name: &str) -> Vec<u8> {
    node.host().suspend_agent(name).unwrap();
    let bytes = node.host().snapshot_agent(name).unwrap().data().to_vec();
    node.host().resume_agent(name).unwrap();
    bytes
}

fn criterion_1() -> Check {
    let t = trio();
    let id = t.a.create_agent("walker", &itinerary(B, C), counter(0)).unwrap();
    let name = id.name();
    ok(&run_until_hop(&t.a, name).ok_or("no hop at A")?)?;
    ok(&run_until_hop(&t.b, name).ok_or("no hop at B")?)?;
    ensure!(run_until_hop(&t.c, name).is_none(), "agent hopped past C");
    let at_c = t.c.host().get(name).ok_or("agent missing at C")?;
    ensure!(
        at_c.data.get("c").map(String::as_str) == Some("3"),
        "c={:?} at C",
        at_c.data.get("c")
    );
    ensure!(!t.a.host().contains(name), "A still hosts {name}");
    ensure!(!t.b.host().contains(name), "B still hosts {name}");
    Ok(format!("{name} at C with c=3, A and B empty"))
}

fn criterion_2() -> Check {
    let t = trio();
    let id =
        t.a.create_agent("walker", &program(&["inc c", "stop"]), counter(0))
            .unwrap();
    t.a.step_agent(id.name()).unwrap();
    let before = data_bytes(&t.a, id.name());
    let report = t.a.migrate(id.name(), B, MigrationKind::Clone, None).unwrap();
    ok(&report)?;
    let clone = report.registered_as.ok_or("no clone name")?;
    ensure!(clone.name() == "walker-clone-1@B", "clone named {}", clone.name());
    let original = t.a.host().get(id.name()).ok_or("original gone")?;
    ensure!(
        original.lifecycle.as_str() == "active",
        "original is {}",
        original.lifecycle
    );
    ensure!(data_bytes(&t.a, id.name()) == before, "original data changed");
    let copy = t.b.host().get(clone.name()).ok_or("clone missing at B")?;
    ensure!(copy.lifecycle.as_str() == "active", "clone is {}", copy.lifecycle);
    ensure!(data_bytes(&t.b, clone.name()) == before, "clone data differs");
    Ok(format!("original active at A, {} active at B", clone.name()))
}

fn fault_scenario(point: FaultPoint) -> Result<(), String> {
    let net = MemoryNetwork::new();
    let a = memory_node(&net, "A", A, Vec::new());
    let b = memory_node(&net, "B", B, vec![FaultRule::new(point, FaultDirection::Receive, 1)]);
    let id = a
        .create_agent("walker", &program(&["inc c", &format!("hop {B}"), "stop"]), counter(0))
        .unwrap();
    a.step_agent(id.name()).unwrap();
    let before = data_bytes(&a, id.name());
    let lists = ProtocolLists {
        pre_transfer: vec![ACK_PRE.into()],
        transfer: vec![PUSH_TRANSFER_PROTOCOL.into()],
        post_transfer: Vec::new(),
    };
    let report = a.migrate(id.name(), B, MigrationKind::Move, Some(lists)).unwrap();
    let expected_step = match point {
        FaultPoint::Main => None,
        FaultPoint::PreTransfer => Some(MigrationStep::PreTransfer),
        FaultPoint::TransferStage1 | FaultPoint::TransferStage2 => Some(MigrationStep::Transfer),
        FaultPoint::Registration => Some(MigrationStep::Registration),
        FaultPoint::PowerUp => Some(MigrationStep::PowerUp),
        other => return Err(format!("no scenario for {other}")),
    };
    match (&report.outcome, expected_step) {
        (MigrationOutcome::Refused(_), None) => {}
        (
            MigrationOutcome::Failed {
                at: FailedAt::Step(s), ..
            },
            Some(e),
        ) if *s == e => {}
        (other, _) => return Err(format!("{point}: outcome {other}")),
    }
    let origin = a.host().get(id.name()).ok_or(format!("{point}: origin gone"))?;
    ensure!(
        origin.lifecycle.as_str() == "active",
        "{point}: origin is {}",
        origin.lifecycle
    );
    ensure!(data_bytes(&a, id.name()) == before, "{point}: origin data changed");
    ensure!(
        !b.host().contains(id.name()),
        "{point}: destination lists {}",
        id.name()
    );
    ensure!(b.host().list().is_empty(), "{point}: destination lists agents");
    Ok(())
}

fn criterion_3() -> Check {
    let points = [
        FaultPoint::Main,
        FaultPoint::PreTransfer,
        FaultPoint::TransferStage1,
        FaultPoint::TransferStage2,
        FaultPoint::Registration,
        FaultPoint::PowerUp,
    ];
    for point in points {
        fault_scenario(point)?;
    }
    Ok("6/6 fault scenarios atomic".into())
}

fn criterion_4() -> Check {
    let net = MemoryNetwork::new();
    let a = memory_node(&net, "A", A, Vec::new());
    let b = memory_node(&net, "B", B, Vec::new());
    let code = program(&["inc c", "stop"]);
    let id = a.create_agent("walker", &code, counter(0)).unwrap();
    let name = id.name();
    let first = a.migrate(name, B, MigrationKind::Move, None).unwrap();
    ok(&first)?;
    ok(&b.migrate(name, A, MigrationKind::Move, None).unwrap())?;
    let third = a.migrate(name, B, MigrationKind::Move, None).unwrap();
    ok(&third)?;

    let code_field = format!(
        "\"code\":\"{}\"",
        base64::engine::general_purpose::STANDARD.encode(code.encode())
    );
    let (sent_1, sent_3) = (
        first.step_bytes(MigrationStep::Transfer).0,
        third.step_bytes(MigrationStep::Transfer).0,
    );
    ensure!(
        sent_1 >= sent_3 + code_field.len() as u64,
        "transfer bytes-sent {sent_1} -> {sent_3}, code field is {} bytes",
        code_field.len()
    );
    let stage_1 = a
        .amm()
        .events()
        .for_session(&third.session_id)
        .into_iter()
        .find(|e| e.kind == EventKind::StageDone && e.stage.as_ref().is_some_and(|s| s.0 == 1))
        .ok_or("no stage 1 event")?;
    let reply = stage_1.stage.unwrap().1;
    ensure!(reply == "reject-proposal", "stage 1 ended in {reply}");
    let reject = net
        .messages()
        .into_iter()
        .find(|m| m.conversation_id == third.session_id && m.performative == Performative::RejectProposal)
        .ok_or("no reject-proposal on the wire")?;
    ensure!(
        reject.content.kind == ContentKind::Predicate && reject.content.payload.is_empty(),
        "reject-proposal carries {:?}",
        reject.content
    );
    Ok(format!(
        "transfer bytes-sent {sent_1} -> {sent_3} (code field {} bytes), stage 1 reject-proposal with empty content",
        code_field.len()
    ))
}

fn criterion_5() -> Check {
    let net = MemoryNetwork::new();
    let a = memory_node(&net, "A", A, vec![FaultRule::corrupt_code(1)]);
    let b = memory_node(&net, "B", B, Vec::new());
    let id = a
        .create_agent("walker", &program(&["inc c", "stop"]), counter(0))
        .unwrap();
    let before = data_bytes(&a, id.name());
    let report = a.migrate(id.name(), B, MigrationKind::Move, None).unwrap();
    match &report.outcome {
        MigrationOutcome::Failed {
            at: FailedAt::Step(MigrationStep::Transfer),
            reason,
            ..
        } if reason == "cid-mismatch" => {}
        other => return Err(format!("outcome {other}")),
    }
    let failure = net
        .messages()
        .into_iter()
        .find(|m| m.conversation_id == report.session_id && m.performative == Performative::Failure)
        .ok_or("no failure on the wire")?;
    ensure!(
        failure.content.reason() == Some("cid-mismatch"),
        "failure {:?}",
        failure.content
    );
    ensure!(b.cache().is_empty(), "destination cached {} entries", b.cache().len());
    ensure!(!b.host().contains(id.name()), "destination lists the agent");
    let origin = a.host().get(id.name()).ok_or("origin gone")?;
    ensure!(origin.lifecycle.as_str() == "active", "origin is {}", origin.lifecycle);
    ensure!(data_bytes(&a, id.name()) == before, "origin data changed");
    Ok("failure(cid-mismatch), nothing cached, origin intact".into())
}

fn criterion_6() -> Check {
    let (checked, disagreements) = fsm_oracle::enumerate(4);
    ensure!(
        disagreements.is_empty(),
        "{} disagreements, first: {}",
        disagreements.len(),
        disagreements[0]
    );
    Ok(format!("{checked} sequences, 0 disagreements"))
}

fn criterion_7() -> Check {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategies::message(), |msg| {
            let bytes = encode_message(&msg).unwrap();
            let back = decode_message(&bytes).unwrap();
            proptest::prop_assert_eq!(&back, &msg);
            proptest::prop_assert_eq!(encode_message(&back).unwrap(), bytes);
            Ok(())
        })
        .map_err(|e| format!("round-trip: {e}"))?;

    let (payload, used) = decode_frame(GOLDEN_FRAME).map_err(|e| e.to_string())?;
    ensure!(
        used == GOLDEN_FRAME.len(),
        "frame has {} trailing bytes",
        GOLDEN_FRAME.len() - used
    );
    ensure!(payload == GOLDEN_JSON, "frame payload differs from the sample message");
    let msg = decode_message(payload).map_err(|e| e.to_string())?;
    ensure!(
        encode_message(&msg).unwrap() == GOLDEN_JSON,
        "sample does not re-encode byte-exactly"
    );
    ensure!(msg.protocol == MAIN_PROTOCOL, "sample is a {} message", msg.protocol);
    Ok(format!(
        "1000 round-trips, golden frame of {} bytes decodes byte-exactly",
        GOLDEN_FRAME.len()
    ))
}

fn criterion_8() -> Check {
    let net = MemoryNetwork::new();
    let a = memory_node(&net, "A", A, Vec::new());
    let _b = memory_node(&net, "B", B, Vec::new());
    let pair = |before: u64, after: u64| after - before;
    let base = a.counters().peer(B);
    a.query_protocols(B, CachePolicy::UseCache).map_err(|e| e.to_string())?;
    a.query_protocols(B, CachePolicy::UseCache).map_err(|e| e.to_string())?;
    let cached = a.counters().peer(B);
    ensure!(
        pair(base.messages_sent, cached.messages_sent) == 1
            && pair(base.messages_received, cached.messages_received) == 1,
        "cached queries exchanged {}/{} messages",
        cached.messages_sent - base.messages_sent,
        cached.messages_received - base.messages_received
    );
    a.query_protocols(B, CachePolicy::BypassCache)
        .map_err(|e| e.to_string())?;
    a.query_protocols(B, CachePolicy::BypassCache)
        .map_err(|e| e.to_string())?;
    let bypassed = a.counters().peer(B);
    ensure!(
        pair(cached.messages_sent, bypassed.messages_sent) == 2
            && pair(cached.messages_received, bypassed.messages_received) == 2,
        "bypass queries exchanged {}/{} messages",
        bypassed.messages_sent - cached.messages_sent,
        bypassed.messages_received - cached.messages_received
    );
    Ok("use-cache: 1 pair for 2 queries, bypass-cache: 2 pairs".into())
}

fn criterion_9() -> Check {
    let t = trio();
    let id = t.a.create_agent("walker", &itinerary(B, C), counter(0)).unwrap();
    let report = run_until_hop(&t.a, id.name()).ok_or("no hop")?;
    ok(&report)?;
    let started: Vec<String> =
        t.a.amm()
            .events()
            .events()
            .into_iter()
            .filter(|e| e.kind == EventKind::StepStarted)
            .map(|e| {
                if e.session == report.session_id {
                    e.step
                } else {
                    format!("foreign:{}", e.session)
                }
            })
            .collect();
    ensure!(
        started == ["transfer", "registration", "power-up"],
        "steps started in order {started:?}"
    );
    let on_wire: Vec<String> = t
        .net
        .messages()
        .into_iter()
        .filter(|m| matches!(m.performative, Performative::Request | Performative::Propose))
        .filter(|m| m.protocol != DISCOVERY_PROTOCOL && m.protocol != MAIN_PROTOCOL)
        .map(|m| {
            if m.conversation_id == report.session_id {
                m.protocol
            } else {
                format!("foreign:{}", m.conversation_id)
            }
        })
        .collect();
    ensure!(
        on_wire
            == [
                PUSH_TRANSFER_PROTOCOL,
                PUSH_TRANSFER_PROTOCOL,
                REGISTRATION_PROTOCOL,
                POWER_UP_PROTOCOL
            ],
        "conversations on the wire {on_wire:?}"
    );
    Ok(format!(
        "transfer, registration, power-up in session {}",
        report.session_id
    ))
}

fn criterion_10() -> Check {
    let memory_final = {
        let t = trio();
        let id = t.a.create_agent("walker", &itinerary(B, C), counter(0)).unwrap();
        ok(&run_until_hop(&t.a, id.name()).ok_or("no hop")?)?;
        let info = t.b.host().get(id.name()).ok_or("agent missing at B")?;
        (info.pc, info.data, info.cid, info.lifecycle)
    };

    let mut cfg_b = config("B", "127.0.0.1:0");
    cfg_b.step_timeout = Duration::from_secs(5);
    let b = Node::start_tcp(cfg_b).map_err(|e| e.to_string())?;
    let b_addr = b.address().to_string();
    let mut cfg_a: NodeConfig = config("A", "127.0.0.1:0");
    cfg_a.step_timeout = Duration::from_secs(5);
    let a = Node::start_tcp(cfg_a).map_err(|e| e.to_string())?;
    // Same itinerary shape, with B at its real socket address; C is never reached.
    let code = itinerary(&b_addr, C);
    let id = a.create_agent("walker", &code, counter(0)).unwrap();
    let started = Instant::now();
    ok(&run_until_hop(&a, id.name()).ok_or("no hop")?)?;
    ensure!(!a.host().contains(id.name()), "A still hosts the agent");
    let info = b.host().get(id.name()).ok_or("agent missing at B")?;
    ensure!(
        (info.pc, &info.data, info.lifecycle) == (memory_final.0, &memory_final.1, memory_final.3),
        "tcp state pc={} data={:?} differs from memory state pc={} data={:?}",
        info.pc,
        info.data,
        memory_final.0,
        memory_final.1
    );
    Ok(format!(
        "first hop over {b_addr} matches in-memory state (pc={}, c={}) in {:?}",
        info.pc,
        info.data["c"],
        started.elapsed()
    ))
}

/// Checks that the committed sample is the Main request the first hop actually sends.
fn golden_matches_first_hop() -> Result<(), String> {
    let t = trio();
    let id = t.a.create_agent("walker", &itinerary(B, C), counter(0)).unwrap();
    ok(&run_until_hop(&t.a, id.name()).ok_or("no hop")?)?;
    let mut request: AclMessage = t
        .net
        .messages()
        .into_iter()
        .find(|m| m.protocol == MAIN_PROTOCOL && m.performative == Performative::Request)
        .ok_or("no main request on the wire")?;
    request.conversation_id = GOLDEN_CONVERSATION.into();
    request.reply_with = Some(GOLDEN_REPLY_WITH.into());
    let bytes = encode_message(&request).unwrap();
    ensure!(
        bytes == GOLDEN_JSON,
        "main request drifted from the sample:\n{}",
        String::from_utf8_lossy(&bytes)
    );
    Ok(())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("end-to-end move", criterion_1),
        ("clone", criterion_2),
        ("failure atomicity", criterion_3),
        ("cid bandwidth saving", criterion_4),
        ("cid integrity", criterion_5),
        ("fsm conformance", criterion_6),
        ("codec", || {
            golden_matches_first_hop()?;
            criterion_7()
        }),
        ("discovery cache", criterion_8),
        ("step ordering", criterion_9),
        ("tcp smoke", criterion_10),
    ];
    panic::set_hook(Box::new(|_| {}));
    let started = Instant::now();
    let mut failed = 0;
    for (n, (title, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {title}: {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {title}: {why}", n + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} passed in {:.1?}",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}
