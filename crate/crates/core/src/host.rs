//! Resident agents: lifecycle, snapshot/rebuild, and the toy itinerary runtime.
//!
//! A toy agent's code is a [`ToyProgram`] in its canonical text form; its data
//! is the key/value map plus the program counter, encoded canonically so that
//! repeated snapshots are byte-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acl::AgentIdentifier;
use crate::push_transfer::AgentPackage;

pub const TOY_FORMAT_TAG: &str = "toy-itinerary-v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("agent `{0}` not found")]
    AgentNotFound(String),
    #[error("agent name `{0}` is already in use")]
    NameCollision(String),
    #[error("agent `{0}` is running; suspend it first")]
    AgentRunning(String),
    #[error("agent `{0}` is not active")]
    AgentNotActive(String),
    #[error("illegal lifecycle transition {from} -> {to}")]
    IllegalTransition { from: Lifecycle, to: Lifecycle },
    #[error("code format: {0}")]
    CodeFormatError(String),
    #[error("data format: {0}")]
    DataFormatError(String),
    #[error("invalid package: {0}")]
    InvalidPackage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lifecycle {
    Active,
    Suspended,
    Transit,
    Dead,
}

impl Lifecycle {
    pub fn can_become(self, to: Lifecycle) -> bool {
        use Lifecycle::*;
        matches!(
            (self, to),
            (Active, Suspended)
                | (Suspended, Active)
                | (Active, Transit)
                | (Transit, Active)
                | (Transit, Dead)
                | (Suspended, Dead)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lifecycle::Active => "active",
            Lifecycle::Suspended => "suspended",
            Lifecycle::Transit => "transit",
            Lifecycle::Dead => "dead",
        }
    }
}

impl fmt::Display for Lifecycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Inc(String),
    Hop(String),
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyProgram {
    instructions: Vec<Instruction>,
}

impl ToyProgram {
    pub fn new(instructions: Vec<Instruction>) -> Result<Self, HostError> {
        if instructions.last() != Some(&Instruction::Stop) {
            return Err(HostError::CodeFormatError("program must end with stop".into()));
        }
        for i in &instructions {
            match i {
                Instruction::Inc(key) if !is_token(key) => {
                    return Err(HostError::CodeFormatError(format!("bad key `{key}`")))
                }
                Instruction::Hop(addr) if !is_host_port(addr) => {
                    return Err(HostError::CodeFormatError(format!("bad address `{addr}`")))
                }
                _ => {}
            }
        }
        Ok(Self { instructions })
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    /// Canonical text form; also the bytes the cid is computed over.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{TOY_FORMAT_TAG}\n");
        for i in &self.instructions {
            match i {
                Instruction::Inc(k) => out.push_str(&format!("inc {k}\n")),
                Instruction::Hop(a) => out.push_str(&format!("hop {a}\n")),
                Instruction::Stop => out.push_str("stop\n"),
            }
        }
        out.into_bytes()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, HostError> {
        let err = |m: String| HostError::CodeFormatError(m);
        let text = std::str::from_utf8(bytes).map_err(|_| err("code is not utf-8".into()))?;
        let body = text
            .strip_suffix('\n')
            .ok_or_else(|| err("code must be newline-terminated".into()))?;
        let mut lines = body.split('\n');
        if lines.next() != Some(TOY_FORMAT_TAG) {
            return Err(err(format!("missing `{TOY_FORMAT_TAG}` header")));
        }
        let instructions = lines
            .map(|line| match line.split_once(' ') {
                Some(("inc", key)) => Ok(Instruction::Inc(key.to_string())),
                Some(("hop", addr)) => Ok(Instruction::Hop(addr.to_string())),
                None if line == "stop" => Ok(Instruction::Stop),
                _ => Err(err(format!("unknown instruction `{line}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let program = Self::new(instructions)?;
        if program.encode() != bytes {
            return Err(err("code is not in canonical form".into()));
        }
        Ok(program)
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

/// `host:port` with a non-empty host and a numeric port.
pub fn is_host_port(s: &str) -> bool {
    match s.rsplit_once(':') {
        Some((host, port)) => is_token(host) && port.parse::<u16>().is_ok(),
        None => false,
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataImage {
    pc: usize,
    data: BTreeMap<String, String>,
}

fn encode_data(pc: usize, data: &BTreeMap<String, String>) -> Vec<u8> {
    serde_json::to_vec(&DataImage { pc, data: data.clone() }).expect("string map serializes")
}

fn decode_data(bytes: &[u8]) -> Result<(usize, BTreeMap<String, String>), HostError> {
    let image: DataImage = serde_json::from_slice(bytes).map_err(|e| HostError::DataFormatError(e.to_string()))?;
    Ok((image.pc, image.data))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuntimeEvent {
    Incremented { key: String, value: i64 },
    WantsMigration { destination: String },
    Stopped,
}

impl fmt::Display for RuntimeEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuntimeEvent::Incremented { key, value } => write!(f, "event=incremented key={key} value={value}"),
            RuntimeEvent::WantsMigration { destination } => {
                write!(f, "event=wants-migration destination={destination}")
            }
            RuntimeEvent::Stopped => f.write_str("event=stopped"),
        }
    }
}

#[derive(Debug, Clone)]
struct HostedAgent {
    id: AgentIdentifier,
    lifecycle: Lifecycle,
    program: ToyProgram,
    code: Vec<u8>,
    state: Option<Vec<u8>>,
    pc: usize,
    data: BTreeMap<String, String>,
}

impl HostedAgent {
    fn package(&self, pc: usize) -> AgentPackage {
        AgentPackage::new(self.code.clone(), encode_data(pc, &self.data), self.state.clone())
            .expect("encoded data is never empty")
    }
}

/// Read-only view of a hosted agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentInfo {
    pub id: AgentIdentifier,
    pub lifecycle: Lifecycle,
    pub pc: usize,
    pub data: BTreeMap<String, String>,
    pub cid: String,
}

impl fmt::Display for AgentInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data: Vec<String> = self.data.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        write!(
            f,
            "name={} state={} pc={} data={} cid={}",
            self.id,
            self.lifecycle,
            self.pc,
            data.join(","),
            self.cid
        )
    }
}

/// All agents resident on one platform.
pub struct AgentHost {
    platform: String,
    address: String,
    agents: Mutex<BTreeMap<String, HostedAgent>>,
}

impl AgentHost {
    pub fn new(platform: impl Into<String>, address: impl Into<String>) -> Self {
        Self {
            platform: platform.into(),
            address: address.into(),
            agents: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn platform(&self) -> &str {
        &self.platform
    }

    pub fn create_agent(
        &self,
        local_name: &str,
        program: &ToyProgram,
        initial_data: BTreeMap<String, String>,
    ) -> Result<AgentIdentifier, HostError> {
        let id = AgentIdentifier::from_parts(local_name, &self.platform)
            .map_err(|e| HostError::DataFormatError(e.to_string()))?
            .with_address(self.address.clone());
        let mut agents = self.agents.lock().unwrap();
        if agents.get(id.name()).is_some_and(is_live) {
            return Err(HostError::NameCollision(id.name().to_string()));
        }
        agents.insert(
            id.name().to_string(),
            HostedAgent {
                id: id.clone(),
                lifecycle: Lifecycle::Active,
                code: program.encode(),
                program: program.clone(),
                state: None,
                pc: 0,
                data: initial_data,
            },
        );
        Ok(id)
    }

    /// Live agents; dead ones are delisted.
    pub fn list(&self) -> Vec<AgentInfo> {
        self.agents
            .lock()
            .unwrap()
            .values()
            .filter(|a| is_live(a))
            .map(info)
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<AgentInfo> {
        self.agents.lock().unwrap().get(name).filter(|a| is_live(a)).map(info)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn identifier(&self, name: &str) -> Option<AgentIdentifier> {
        self.get(name).map(|a| a.id)
    }

    /// Snapshot of a suspended or in-transit agent.
    pub fn snapshot_agent(&self, name: &str) -> Result<AgentPackage, HostError> {
        self.with_agent(name, |a| match a.lifecycle {
            Lifecycle::Active => Err(HostError::AgentRunning(name.to_string())),
            Lifecycle::Dead => Err(HostError::AgentNotFound(name.to_string())),
            _ => Ok(a.package(a.pc)),
        })
    }

    /// Snapshot used when the agent leaves on a hop: the program counter in the
    /// package points past the hop, while the resident copy keeps its position.
    pub fn departure_package(&self, name: &str) -> Result<AgentPackage, HostError> {
        self.with_agent(name, |a| {
            match a.lifecycle {
                Lifecycle::Active => return Err(HostError::AgentRunning(name.to_string())),
                Lifecycle::Dead => return Err(HostError::AgentNotFound(name.to_string())),
                _ => {}
            }
            let pc = match a.program.instructions().get(a.pc) {
                Some(Instruction::Hop(_)) => a.pc + 1,
                _ => a.pc,
            };
            Ok(a.package(pc))
        })
    }

    /// Rebuilds an agent from a received package; it starts out Suspended.
    pub fn install_agent(&self, package: &AgentPackage, id: &AgentIdentifier) -> Result<(), HostError> {
        if !package.cid().matches(package.code()) {
            return Err(HostError::InvalidPackage("cid does not match code".into()));
        }
        let program = ToyProgram::parse(package.code())?;
        let (pc, data) = decode_data(package.data())?;
        if pc >= program.instructions().len() {
            return Err(HostError::DataFormatError(format!("program counter {pc} out of range")));
        }
        let mut agents = self.agents.lock().unwrap();
        if agents.get(id.name()).is_some_and(is_live) {
            return Err(HostError::NameCollision(id.name().to_string()));
        }
        agents.insert(
            id.name().to_string(),
            HostedAgent {
                id: id.relocated(vec![self.address.clone()]),
                lifecycle: Lifecycle::Suspended,
                program,
                code: package.code().to_vec(),
                state: package.state().map(<[u8]>::to_vec),
                pc,
                data,
            },
        );
        Ok(())
    }

    pub fn resume_agent(&self, name: &str) -> Result<(), HostError> {
        self.transition(name, Lifecycle::Active)
    }

    pub fn suspend_agent(&self, name: &str) -> Result<(), HostError> {
        self.transition(name, Lifecycle::Suspended)
    }

    /// Active -> Transit, at the start of an outbound migration.
    pub fn begin_transit(&self, name: &str) -> Result<(), HostError> {
        self.with_agent(name, |a| match a.lifecycle {
            Lifecycle::Active => {
                a.lifecycle = Lifecycle::Transit;
                Ok(())
            }
            _ => Err(HostError::AgentNotActive(name.to_string())),
        })
    }

    /// Marks the agent Dead, which removes it from the listing. The name
    /// becomes reusable.
    pub fn kill_agent(&self, name: &str) -> Result<(), HostError> {
        self.transition(name, Lifecycle::Dead)
    }

    pub fn step_runtime(&self, name: &str) -> Result<RuntimeEvent, HostError> {
        self.with_agent(name, |a| {
            if a.lifecycle != Lifecycle::Active {
                return Err(HostError::AgentNotActive(name.to_string()));
            }
            match a.program.instructions()[a.pc].clone() {
                Instruction::Inc(key) => {
                    let current = match a.data.get(&key) {
                        None => 0,
                        Some(v) => v
                            .parse::<i64>()
                            .map_err(|_| HostError::DataFormatError(format!("value of `{key}` is not an integer")))?,
                    };
                    let value = current + 1;
                    a.data.insert(key.clone(), value.to_string());
                    a.pc += 1;
                    Ok(RuntimeEvent::Incremented { key, value })
                }
                Instruction::Hop(destination) => Ok(RuntimeEvent::WantsMigration { destination }),
                Instruction::Stop => Ok(RuntimeEvent::Stopped),
            }
        })
    }

    fn transition(&self, name: &str, to: Lifecycle) -> Result<(), HostError> {
        self.with_agent(name, |a| {
            if !a.lifecycle.can_become(to) {
                return Err(HostError::IllegalTransition { from: a.lifecycle, to });
            }
            a.lifecycle = to;
            Ok(())
        })
    }

    fn with_agent<T>(
        &self,
        name: &str,
        f: impl FnOnce(&mut HostedAgent) -> Result<T, HostError>,
    ) -> Result<T, HostError> {
        let mut agents = self.agents.lock().unwrap();
        let agent = agents
            .get_mut(name)
            .ok_or_else(|| HostError::AgentNotFound(name.to_string()))?;
        f(agent)
    }
}

fn is_live(a: &HostedAgent) -> bool {
    a.lifecycle != Lifecycle::Dead
}

fn info(a: &HostedAgent) -> AgentInfo {
    AgentInfo {
        id: a.id.clone(),
        lifecycle: a.lifecycle,
        pc: a.pc,
        data: a.data.clone(),
        cid: crate::cid::compute_cid(&a.code).to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Instruction::*;

    fn program(instrs: Vec<Instruction>) -> ToyProgram {
        ToyProgram::new(instrs).unwrap()
    }

    fn counter(c: &str) -> BTreeMap<String, String> {
        BTreeMap::from([("c".to_string(), c.to_string())])
    }

    #[test]
    fn program_text_form() {
        let p = program(vec![Inc("c".into()), Hop("b:9002".into()), Stop]);
        assert_eq!(p.encode(), b"toy-itinerary-v1\ninc c\nhop b:9002\nstop\n");
        assert_eq!(ToyProgram::parse(&p.encode()).unwrap(), p);
    }

    #[test]
    fn malformed_programs_are_rejected() {
        for bad in [
            &b"toy-itinerary-v1\ninc c\n"[..],
            b"toy-itinerary-v1\nstop",
            b"toy-itinerary-v2\nstop\n",
            b"toy-itinerary-v1\njump x\nstop\n",
            b"toy-itinerary-v1\nhop nowhere\nstop\n",
            b"toy-itinerary-v1\n",
        ] {
            assert!(
                matches!(ToyProgram::parse(bad), Err(HostError::CodeFormatError(_))),
                "{:?}",
                String::from_utf8_lossy(bad)
            );
        }
    }

    #[test]
    fn create_lists_active_and_rejects_duplicates() {
        let host = AgentHost::new("a", "a:1");
        let p = program(vec![Stop]);
        let id = host.create_agent("bob", &p, BTreeMap::new()).unwrap();
        assert_eq!(id.name(), "bob@a");
        assert_eq!(host.get("bob@a").unwrap().lifecycle, Lifecycle::Active);
        assert_eq!(
            host.create_agent("bob", &p, BTreeMap::new()),
            Err(HostError::NameCollision("bob@a".into()))
        );
    }

    #[test]
    fn inc_then_stop() {
        let host = AgentHost::new("a", "a:1");
        host.create_agent("bob", &program(vec![Inc("c".into()), Stop]), counter("0"))
            .unwrap();
        assert_eq!(
            host.step_runtime("bob@a").unwrap(),
            RuntimeEvent::Incremented {
                key: "c".into(),
                value: 1
            }
        );
        assert_eq!(host.step_runtime("bob@a").unwrap(), RuntimeEvent::Stopped);
        assert_eq!(host.step_runtime("bob@a").unwrap(), RuntimeEvent::Stopped);
        let info = host.get("bob@a").unwrap();
        assert_eq!(info.data["c"], "1");
        assert_eq!(info.lifecycle, Lifecycle::Active);
    }

    #[test]
    fn snapshot_requires_a_stopped_agent() {
        let host = AgentHost::new("a", "a:1");
        host.create_agent("bob", &program(vec![Stop]), counter("2")).unwrap();
        assert_eq!(
            host.snapshot_agent("bob@a"),
            Err(HostError::AgentRunning("bob@a".into()))
        );
        host.begin_transit("bob@a").unwrap();
        let first = host.snapshot_agent("bob@a").unwrap();
        assert_eq!(first, host.snapshot_agent("bob@a").unwrap());
        assert_eq!(first.data(), br#"{"pc":0,"data":{"c":"2"}}"#);
        assert_eq!(first.state(), None);
        assert_eq!(*first.cid(), crate::cid::compute_cid(first.code()));
    }

    #[test]
    fn install_round_trips_a_snapshot() {
        let a = AgentHost::new("a", "a:1");
        let p = program(vec![Inc("c".into()), Inc("c".into()), Stop]);
        let id = a.create_agent("bob", &p, counter("0")).unwrap();
        a.step_runtime("bob@a").unwrap();
        a.suspend_agent("bob@a").unwrap();
        let pkg = a.snapshot_agent("bob@a").unwrap();

        let b = AgentHost::new("b", "b:2");
        b.install_agent(&pkg, &id).unwrap();
        let installed = b.get("bob@a").unwrap();
        assert_eq!(installed.lifecycle, Lifecycle::Suspended);
        assert_eq!(installed.id.addresses(), ["b:2"]);
        assert_eq!(b.snapshot_agent("bob@a").unwrap(), pkg);

        b.resume_agent("bob@a").unwrap();
        assert_eq!(
            b.step_runtime("bob@a").unwrap(),
            RuntimeEvent::Incremented {
                key: "c".into(),
                value: 2
            }
        );
    }

    #[test]
    fn install_validates_code_data_and_name() {
        let host = AgentHost::new("b", "b:2");
        let id = AgentIdentifier::new("bob@a").unwrap();
        let bad_code = AgentPackage::new(b"not a program".to_vec(), br#"{"pc":0,"data":{}}"#.to_vec(), None).unwrap();
        assert!(matches!(
            host.install_agent(&bad_code, &id),
            Err(HostError::CodeFormatError(_))
        ));

        let code = program(vec![Stop]).encode();
        let bad_data = AgentPackage::new(code.clone(), b"{}".to_vec(), None).unwrap();
        assert!(matches!(
            host.install_agent(&bad_data, &id),
            Err(HostError::DataFormatError(_))
        ));

        let good = AgentPackage::new(code, br#"{"pc":0,"data":{}}"#.to_vec(), None).unwrap();
        host.install_agent(&good, &id).unwrap();
        assert_eq!(
            host.install_agent(&good, &id),
            Err(HostError::NameCollision("bob@a".into()))
        );
    }

    #[test]
    fn departure_package_skips_the_hop() {
        let host = AgentHost::new("a", "a:1");
        host.create_agent("bob", &program(vec![Hop("b:2".into()), Stop]), BTreeMap::new())
            .unwrap();
        assert_eq!(
            host.step_runtime("bob@a").unwrap(),
            RuntimeEvent::WantsMigration {
                destination: "b:2".into()
            }
        );
        host.begin_transit("bob@a").unwrap();
        let leaving = host.departure_package("bob@a").unwrap();
        assert_eq!(leaving.data(), br#"{"pc":1,"data":{}}"#);
        assert_eq!(host.get("bob@a").unwrap().pc, 0);
    }

    #[test]
    fn lifecycle_table() {
        let host = AgentHost::new("a", "a:1");
        host.create_agent("bob", &program(vec![Stop]), BTreeMap::new()).unwrap();
        assert!(matches!(
            host.kill_agent("bob@a"),
            Err(HostError::IllegalTransition { .. })
        ));
        host.begin_transit("bob@a").unwrap();
        assert!(matches!(host.step_runtime("bob@a"), Err(HostError::AgentNotActive(_))));
        host.kill_agent("bob@a").unwrap();
        assert!(host.list().is_empty());
        assert_eq!(
            host.resume_agent("bob@a"),
            Err(HostError::IllegalTransition {
                from: Lifecycle::Dead,
                to: Lifecycle::Active
            })
        );
        // the name is free again
        host.create_agent("bob", &program(vec![Stop]), BTreeMap::new()).unwrap();
    }
}
