#![allow(dead_code)]

pub mod fsm_oracle;
pub mod strategies;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use agent_mobility::amm::MigrationReport;
use agent_mobility::host::{Instruction, ToyProgram};
use agent_mobility::node::{Node, NodeConfig, NodeTransport};
use agent_mobility::registry::{AcknowledgeProtocol, MigrationProtocol, MigrationStep};
use agent_mobility::transport::{FaultRule, MemoryNetwork};

pub const A: &str = "node-a:7001";
pub const B: &str = "node-b:7002";
pub const C: &str = "node-c:7003";
pub const ACK_PRE: &str = "acknowledge-pre-v1";

pub fn config(platform: &str, address: &str) -> NodeConfig {
    let mut c = NodeConfig::new(platform, address);
    c.step_timeout = Duration::from_secs(2);
    c.autorun = false;
    c
}

pub fn extra_protocols() -> Vec<Arc<dyn MigrationProtocol>> {
    vec![Arc::new(AcknowledgeProtocol::new(ACK_PRE, MigrationStep::PreTransfer))]
}

pub fn memory_node(net: &MemoryNetwork, platform: &str, address: &str, faults: Vec<FaultRule>) -> Node {
    let mut c = config(platform, address);
    c.fault_injections = faults;
    Node::start(c, NodeTransport::Memory(net), extra_protocols()).expect("node starts")
}

pub fn program(instructions: &[&str]) -> ToyProgram {
    let parsed = instructions
        .iter()
        .map(|i| match i.split_once(' ') {
            Some(("inc", k)) => Instruction::Inc(k.to_string()),
            Some(("hop", a)) => Instruction::Hop(a.to_string()),
            _ => Instruction::Stop,
        })
        .collect();
    ToyProgram::new(parsed).unwrap()
}

/// inc c, hop B, inc c, hop C, inc c, stop
pub fn itinerary(b: &str, c: &str) -> ToyProgram {
    program(&[
        "inc c",
        &format!("hop {b}"),
        "inc c",
        &format!("hop {c}"),
        "inc c",
        "stop",
    ])
}

pub fn counter(start: i64) -> BTreeMap<String, String> {
    BTreeMap::from([("c".to_string(), start.to_string())])
}

/// Steps `name` on `node` until it stops or hops; returns the hop's report.
pub fn run_until_hop(node: &Node, name: &str) -> Option<MigrationReport> {
    for _ in 0..64 {
        let outcome = node.step_agent(name).unwrap();
        if outcome.migration.is_some() {
            return outcome.migration;
        }
        if outcome.event == agent_mobility::host::RuntimeEvent::Stopped {
            return None;
        }
    }
    panic!("agent never stopped");
}

pub fn wait_until(timeout: Duration, mut check: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if check() {
            return true;
        }
        thread::sleep(Duration::from_millis(10));
    }
    check()
}
