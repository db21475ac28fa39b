//! Registration and power-up: the two protocols every migration ends with.

use crate::acl::{AclMessage, Performative};
use crate::host::HostError;
use crate::interaction::InteractionPattern;
use crate::ontology::{build_action, parse_content, Action, ActionName, ParsedContent, Payload, MIGRATION_ONTOLOGY};
use crate::registry::{
    expect_inform, InitiatorContext, MigrationProtocol, MigrationStep, Reply, ResponderContext, StepError,
    POWER_UP_PROTOCOL, REGISTRATION_PROTOCOL,
};

fn request_identifier(ctx: &mut InitiatorContext<'_>, action: ActionName) -> Result<(), StepError> {
    let content =
        build_action(action, Payload::Identifier(ctx.agent().clone())).map_err(|e| StepError(e.to_string()))?;
    let reply = ctx.exchange(
        InteractionPattern::FipaRequestSimplified,
        Performative::Request,
        MIGRATION_ONTOLOGY,
        content,
    )?;
    expect_inform(&reply)
}

pub struct RegistrationProtocol;

impl MigrationProtocol for RegistrationProtocol {
    fn name(&self) -> &str {
        REGISTRATION_PROTOCOL
    }

    fn step(&self) -> MigrationStep {
        MigrationStep::Registration
    }

    fn initiate(&self, ctx: &mut InitiatorContext<'_>) -> Result<(), StepError> {
        request_identifier(ctx, ActionName::Register)
    }

    /// Rebuilds the staged agent under the requested identifier, Suspended.
    fn respond(&self, ctx: &mut ResponderContext<'_>, msg: &AclMessage) -> Reply {
        let id = match parse_content(&msg.content, &msg.ontology) {
            Ok(ParsedContent::Action(Action::Register(id))) => id,
            Ok(_) => return Reply::failure("validation: expected the register action"),
            Err(e) => return Reply::failure(format!("validation: {e}")),
        };
        if ctx.registered().is_some() {
            return Reply::failure("protocol-violation: agent already registered in this session");
        }
        let Some(package) = ctx.staged_package().cloned() else {
            return Reply::failure("no-staged-package");
        };
        match ctx.host.install_agent(&package, &id) {
            Ok(()) => {
                ctx.set_registered(id);
                Reply::done()
            }
            Err(HostError::NameCollision(name)) => Reply::failure(format!("name-collision: {name}")),
            Err(e) => Reply::failure(format!("rebuild-error: {e}")),
        }
    }
}

pub struct PowerUpProtocol;

impl MigrationProtocol for PowerUpProtocol {
    fn name(&self) -> &str {
        POWER_UP_PROTOCOL
    }

    fn step(&self) -> MigrationStep {
        MigrationStep::PowerUp
    }

    fn initiate(&self, ctx: &mut InitiatorContext<'_>) -> Result<(), StepError> {
        request_identifier(ctx, ActionName::PowerUp)
    }

    fn respond(&self, ctx: &mut ResponderContext<'_>, msg: &AclMessage) -> Reply {
        let id = match parse_content(&msg.content, &msg.ontology) {
            Ok(ParsedContent::Action(Action::PowerUp(id))) => id,
            Ok(_) => return Reply::failure("validation: expected the power-up action"),
            Err(e) => return Reply::failure(format!("validation: {e}")),
        };
        if ctx.registered().map(|r| r.name()) != Some(id.name()) {
            return Reply::failure(format!("not-registered: {id}"));
        }
        match ctx.host.resume_agent(id.name()) {
            Ok(()) => Reply::done(),
            Err(e) => Reply::failure(format!("resume-error: {e}")),
        }
    }
}
