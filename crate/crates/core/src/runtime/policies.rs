//! Offline stand-ins for LLM agents.

use std::sync::Arc;

use super::{NegotiationContext, Observation, Policy, RuntimeError};
use crate::cot::{short_term_step, CompensationDirection, CotError, Reasoner};
use crate::env::{Action, EscapeAction, Skill, Snapshot};
use crate::negotiation::NegotiationMessage;

pub const SCRIPTED_POLICIES: [&str; 4] = ["greedy_selfish", "role_balanced", "shapley_negotiator", "idle"];

pub fn policy_by_name(name: &str, reasoner: Arc<dyn Reasoner>) -> Result<Box<dyn Policy>, RuntimeError> {
    match name {
        "greedy_selfish" => Ok(Box::new(GreedySelfish)),
        "role_balanced" => Ok(Box::new(RoleBalanced)),
        "shapley_negotiator" => Ok(Box::new(ShapleyNegotiator::new(reasoner))),
        "idle" => Ok(Box::new(Idle)),
        other => Err(RuntimeError::UnknownPolicy(other.to_string())),
    }
}

fn pick(obs: &Observation<'_>, preferred: &[Action]) -> Option<Action> {
    preferred.iter().copied().find(|a| obs.legal.contains(a)).or_else(|| obs.legal.first().copied())
}

fn intent_message(action: Action) -> String {
    NegotiationMessage::intent(action.describe()).render()
}

/// Takes whatever pays most right now: Door, or Fireball.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedySelfish;

impl Policy for GreedySelfish {
    fn name(&self) -> &str {
        "greedy_selfish"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Option<Action>, RuntimeError> {
        Ok(pick(obs, &[Action::Escape(EscapeAction::Door), Action::Raid(Skill::Fireball)]))
    }
}

/// Never acts.
#[derive(Debug, Clone, Copy, Default)]
pub struct Idle;

impl Policy for Idle {
    fn name(&self) -> &str {
        "idle"
    }

    fn act(&mut self, _obs: &Observation<'_>) -> Result<Option<Action>, RuntimeError> {
        Ok(None)
    }
}

/// Support duty by turn (rows) and hero (columns); everyone else casts
/// Fireball. Heroes 0 and 1 trade off healing, 2 and 3 share the taunts.
pub const ROLE_SCHEDULE: [[Skill; 4]; 4] = {
    use Skill::{Fireball as F, Heal as H, Taunt as T};
    [[H, F, F, F], [F, F, T, F], [F, H, F, F], [F, F, T, T]]
};

/// Fixed roles: agent 0 pulls the lever in the escape room; raid heroes
/// follow [`ROLE_SCHEDULE`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RoleBalanced;

impl RoleBalanced {
    fn choose(obs: &Observation<'_>) -> Option<Action> {
        match obs.snapshot {
            Snapshot::EscapeRoom { .. } => {
                let role = if obs.agent == 0 { EscapeAction::Lever } else { EscapeAction::Door };
                pick(obs, &[Action::Escape(role)])
            }
            Snapshot::Raid { .. } => {
                let duty = ROLE_SCHEDULE[obs.turn % ROLE_SCHEDULE.len()][obs.agent % 4];
                pick(obs, &[Action::Raid(duty), Action::Raid(Skill::Fireball)])
            }
        }
    }
}

impl Policy for RoleBalanced {
    fn name(&self) -> &str {
        "role_balanced"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Option<Action>, RuntimeError> {
        Ok(Self::choose(obs))
    }

    fn negotiate(&mut self, ctx: &NegotiationContext<'_>) -> Result<Option<String>, RuntimeError> {
        if ctx.round > 1 {
            return Ok(None);
        }
        Ok(Self::choose(&ctx.obs).map(intent_message))
    }
}

/// Announces a plan, checks it for externalities when short-term reasoning
/// is on, and prices the result.
///
/// Escape room: the first agent to speak takes the lever; the door agent
/// offers the drafted transfer and the lever agent accepts any offer that
/// covers its request. Raid: Fireball unless the check says it leaves an
/// ally exposed, in which case Taunt (or Heal while Taunt cools down).
pub struct ShapleyNegotiator {
    reasoner: Arc<dyn Reasoner>,
}

impl ShapleyNegotiator {
    pub fn new(reasoner: Arc<dyn Reasoner>) -> Self {
        Self { reasoner }
    }

    fn planned_with(obs: &Observation<'_>, own: Action) -> Vec<Option<Action>> {
        let mut planned = obs.intents.to_vec();
        planned[obs.agent] = Some(own);
        planned
    }

    fn escape_plan(obs: &Observation<'_>) -> Action {
        let lever = Action::Escape(EscapeAction::Lever);
        let other_lever = obs.intents.iter().enumerate().any(|(a, i)| a != obs.agent && *i == Some(lever));
        if other_lever {
            Action::Escape(EscapeAction::Door)
        } else {
            lever
        }
    }

    fn raid_plan(&self, obs: &Observation<'_>) -> Result<Option<Action>, RuntimeError> {
        let fireball = Action::Raid(Skill::Fireball);
        if !obs.legal.contains(&fireball) {
            return Ok(pick(obs, &[Action::Raid(Skill::Heal)]));
        }
        if obs.pipeline.variant.short_term() {
            let mut planned = Self::planned_with(obs, fireball);
            for slot in planned.iter_mut().filter(|s| s.is_none()) {
                *slot = Some(fireball);
            }
            let out = match short_term_step(self.reasoner.as_ref(), obs.snapshot, &planned, obs.agent) {
                Err(CotError::Unparsable(_)) => return Ok(Some(fireball)),
                other => other?,
            };
            if out.assessment.direction == CompensationDirection::OfferCompensation {
                return Ok(pick(obs, &[Action::Raid(Skill::Taunt), Action::Raid(Skill::Heal)]));
            }
        }
        Ok(Some(fireball))
    }

    fn plan(&self, obs: &Observation<'_>) -> Result<Option<Action>, RuntimeError> {
        match obs.snapshot {
            Snapshot::EscapeRoom { .. } => Ok(Some(Self::escape_plan(obs))),
            Snapshot::Raid { .. } => self.raid_plan(obs),
        }
    }

    fn escape_round(&self, ctx: &NegotiationContext<'_>) -> Result<Option<String>, RuntimeError> {
        let obs = &ctx.obs;
        let Some(own) = obs.intents[obs.agent] else {
            return Ok(Some(intent_message(Self::escape_plan(obs))));
        };
        if !obs.pipeline.variant.short_term() || obs.intents.iter().any(Option::is_none) {
            return Ok(None);
        }
        let out = match short_term_step(self.reasoner.as_ref(), obs.snapshot, obs.intents, obs.agent) {
            Err(CotError::Unparsable(_)) => return Ok(None),
            other => other?,
        };
        let offer = out.proposal;
        match (ctx.standing, out.assessment.direction) {
            (None, CompensationDirection::OfferCompensation) if offer.amount > 0.0 => {
                Ok(Some(NegotiationMessage::TransferProposal(offer).render()))
            }
            (Some(s), _) if s.proposer == obs.agent => Ok(None),
            // Standing amounts are paid by their proposer, so in a two-agent
            // room a positive amount is money coming to us.
            (Some(s), CompensationDirection::RequestCompensation) => {
                if s.proposal.amount + 1e-9 >= -offer.amount {
                    let why = format!("{} covers my cost of choosing {own}", s.proposal.amount);
                    Ok(Some(NegotiationMessage::agree(why).render()))
                } else {
                    Ok(Some(NegotiationMessage::counter(offer.amount, out.assessment.rationale).render()))
                }
            }
            (Some(s), CompensationDirection::OfferCompensation) => {
                if -s.proposal.amount <= offer.amount + 1e-9 {
                    let why = format!("paying {} still leaves me my fair share", -s.proposal.amount);
                    Ok(Some(NegotiationMessage::agree(why).render()))
                } else {
                    Ok(Some(NegotiationMessage::counter(offer.amount, out.assessment.rationale).render()))
                }
            }
            _ => Ok(None),
        }
    }
}

impl Policy for ShapleyNegotiator {
    fn name(&self) -> &str {
        "shapley_negotiator"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Option<Action>, RuntimeError> {
        if let Some(announced) = obs.intents[obs.agent] {
            if obs.legal.contains(&announced) {
                return Ok(Some(announced));
            }
        }
        match obs.snapshot {
            // Without a channel to coordinate on, fall back to the door.
            Snapshot::EscapeRoom { .. } if !obs.pipeline.variant.negotiation() => {
                Ok(pick(obs, &[Action::Escape(EscapeAction::Door)]))
            }
            _ => self.plan(obs),
        }
    }

    fn negotiate(&mut self, ctx: &NegotiationContext<'_>) -> Result<Option<String>, RuntimeError> {
        match ctx.obs.snapshot {
            Snapshot::EscapeRoom { .. } => self.escape_round(ctx),
            Snapshot::Raid { .. } if ctx.obs.intents[ctx.obs.agent].is_none() => {
                Ok(self.plan(&ctx.obs)?.map(intent_message))
            }
            Snapshot::Raid { .. } => Ok(None),
        }
    }
}
