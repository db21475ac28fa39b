//! Per-session event log. Each event renders as one `key=value` line; values
//! that may contain spaces (reasons) are quoted.

use std::fmt;
use std::sync::Mutex;

use tracing::info;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    StepStarted,
    StageDone,
    StepDone,
    StepFailed,
    Finalized,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::StepStarted => "step-started",
            EventKind::StageDone => "stage-done",
            EventKind::StepDone => "step-done",
            EventKind::StepFailed => "step-failed",
            EventKind::Finalized => "finalized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionEvent {
    pub kind: EventKind,
    pub session: String,
    /// Step name, or `main` for the Main protocol.
    pub step: String,
    pub protocol: String,
    /// Stage number and its closing performative, for `stage-done`.
    pub stage: Option<(u8, String)>,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// `succeeded`, `refused` or `failed`, for `finalized`.
    pub outcome: Option<String>,
    pub reason: Option<String>,
}

impl SessionEvent {
    pub fn new(kind: EventKind, session: &str, step: &str, protocol: &str) -> Self {
        Self {
            kind,
            session: session.to_string(),
            step: step.to_string(),
            protocol: protocol.to_string(),
            stage: None,
            bytes_sent: 0,
            bytes_received: 0,
            outcome: None,
            reason: None,
        }
    }

    pub fn bytes(mut self, sent: u64, received: u64) -> Self {
        self.bytes_sent = sent;
        self.bytes_received = received;
        self
    }
}

impl fmt::Display for SessionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "event={} session={} step={} protocol={}",
            self.kind.as_str(),
            self.session,
            self.step,
            self.protocol
        )?;
        if let Some((n, performative)) = &self.stage {
            write!(f, " stage={n} reply={performative}")?;
        }
        if self.kind != EventKind::StepStarted {
            write!(
                f,
                " bytes-sent={} bytes-received={}",
                self.bytes_sent, self.bytes_received
            )?;
        }
        if let Some(o) = &self.outcome {
            write!(f, " outcome={o}")?;
        }
        if let Some(r) = &self.reason {
            write!(f, " reason={r:?}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<SessionEvent>>,
}

impl EventLog {
    pub fn record(&self, event: SessionEvent) {
        info!(target: "mobility::events", "{event}");
        self.events.lock().unwrap().push(event);
    }

    pub fn events(&self) -> Vec<SessionEvent> {
        self.events.lock().unwrap().clone()
    }

    pub fn lines(&self) -> Vec<String> {
        self.events().iter().map(ToString::to_string).collect()
    }

    pub fn for_session(&self, session: &str) -> Vec<SessionEvent> {
        self.events().into_iter().filter(|e| e.session == session).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_key_value_lines() {
        let started = SessionEvent::new(EventKind::StepStarted, "s1", "transfer", "push-transfer-protocol-v1");
        assert_eq!(
            started.to_string(),
            "event=step-started session=s1 step=transfer protocol=push-transfer-protocol-v1"
        );
        let mut failed =
            SessionEvent::new(EventKind::StepFailed, "s1", "registration", "registration-protocol-v1").bytes(10, 20);
        failed.reason = Some("name-collision: x".into());
        assert_eq!(
            failed.to_string(),
            "event=step-failed session=s1 step=registration protocol=registration-protocol-v1 \
             bytes-sent=10 bytes-received=20 reason=\"name-collision: x\""
        );
    }
}
