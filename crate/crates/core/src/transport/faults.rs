//! Test hooks addressed by migration step and message direction.
//!
//! A rule fires on at most `count` matching messages and then passes traffic
//! through. The node decides which [`FaultPoint`] a message belongs to; this
//! module only keeps the rules and their budgets.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid fault rule `{0}`: expected step:direction:count[:action]")]
pub struct InvalidFaultRule(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultPoint {
    Main,
    PreTransfer,
    /// Stage one of the push transfer (negotiation).
    TransferStage1,
    /// Stage two of the push transfer, or any message of another transfer protocol.
    TransferStage2,
    PostTransfer,
    Registration,
    PowerUp,
    Discovery,
}

impl FaultPoint {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultPoint::Main => "main",
            FaultPoint::PreTransfer => "pre-transfer",
            FaultPoint::TransferStage1 => "transfer-stage1",
            FaultPoint::TransferStage2 => "transfer-stage2",
            FaultPoint::PostTransfer => "post-transfer",
            FaultPoint::Registration => "registration",
            FaultPoint::PowerUp => "power-up",
            FaultPoint::Discovery => "discovery",
        }
    }
}

impl fmt::Display for FaultPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rule target: a single point, or both transfer stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Point(FaultPoint),
    AnyTransfer,
}

impl Target {
    fn matches(self, point: FaultPoint) -> bool {
        match self {
            Target::Point(p) => p == point,
            Target::AnyTransfer => matches!(point, FaultPoint::TransferStage1 | FaultPoint::TransferStage2),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Target::Point(p) => p.as_str(),
            Target::AnyTransfer => "transfer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultDirection {
    Send,
    Receive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultAction {
    /// Sends fail with `InjectedFault`; received requests are answered with a failure.
    Fail,
    /// Outgoing code bytes get one bit flipped.
    CorruptCode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultRule {
    target: Target,
    pub direction: FaultDirection,
    pub count: u32,
    pub action: FaultAction,
}

impl FaultRule {
    pub fn new(point: FaultPoint, direction: FaultDirection, count: u32) -> Self {
        Self {
            target: Target::Point(point),
            direction,
            count,
            action: FaultAction::Fail,
        }
    }

    pub fn corrupt_code(count: u32) -> Self {
        Self {
            target: Target::Point(FaultPoint::TransferStage2),
            direction: FaultDirection::Send,
            count,
            action: FaultAction::CorruptCode,
        }
    }
}

impl FromStr for FaultRule {
    type Err = InvalidFaultRule;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || InvalidFaultRule(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(bad());
        }
        let target = match parts[0] {
            "transfer" => Target::AnyTransfer,
            name => Target::Point(
                [
                    FaultPoint::Main,
                    FaultPoint::PreTransfer,
                    FaultPoint::TransferStage1,
                    FaultPoint::TransferStage2,
                    FaultPoint::PostTransfer,
                    FaultPoint::Registration,
                    FaultPoint::PowerUp,
                    FaultPoint::Discovery,
                ]
                .into_iter()
                .find(|p| p.as_str() == name)
                .ok_or_else(bad)?,
            ),
        };
        let direction = match parts[1] {
            "send" => FaultDirection::Send,
            "receive" => FaultDirection::Receive,
            _ => return Err(bad()),
        };
        let count = parts[2].parse().map_err(|_| bad())?;
        let action = match parts.get(3).copied() {
            None | Some("fail") => FaultAction::Fail,
            Some("corrupt-code") => FaultAction::CorruptCode,
            Some(_) => return Err(bad()),
        };
        Ok(Self {
            target,
            direction,
            count,
            action,
        })
    }
}

impl fmt::Display for FaultRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            FaultDirection::Send => "send",
            FaultDirection::Receive => "receive",
        };
        write!(f, "{}:{}:{}", self.target.as_str(), dir, self.count)?;
        if self.action == FaultAction::CorruptCode {
            f.write_str(":corrupt-code")?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct FaultInjector {
    // (rule, remaining budget)
    rules: Mutex<Vec<(FaultRule, u32)>>,
}

impl FaultInjector {
    pub fn new(rules: impl IntoIterator<Item = FaultRule>) -> Self {
        Self {
            rules: Mutex::new(rules.into_iter().map(|r| (r.clone(), r.count)).collect()),
        }
    }

    pub fn add(&self, rule: FaultRule) {
        let budget = rule.count;
        self.rules.lock().unwrap().push((rule, budget));
    }

    /// Consumes one unit of budget from the first matching rule with budget left.
    pub fn trigger(&self, point: FaultPoint, direction: FaultDirection) -> Option<FaultAction> {
        let mut rules = self.rules.lock().unwrap();
        let (rule, remaining) = rules
            .iter_mut()
            .find(|(r, left)| *left > 0 && r.direction == direction && r.target.matches(point))?;
        *remaining -= 1;
        Some(rule.action)
    }

    pub fn is_empty(&self) -> bool {
        self.rules.lock().unwrap().iter().all(|(_, left)| *left == 0)
    }
}
