use serde::{Deserialize, Serialize};

use super::CotError;
use crate::coalition::AgentId;
use crate::env::escape_room::{escape_action, payoffs_with_absent};
use crate::env::raid_battle::{self, RaidConfig, RaidState, Skill, HEROES};
use crate::env::{Action, Snapshot};
use crate::negotiation::TransferProposal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExternalitySign {
    Positive,
    Negative,
}

impl ExternalitySign {
    pub fn symbol(self) -> char {
        match self {
            ExternalitySign::Positive => '+',
            ExternalitySign::Negative => '-',
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            ExternalitySign::Positive => "positive",
            ExternalitySign::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompensationDirection {
    RequestCompensation,
    OfferCompensation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalityAssessment {
    pub agent: AgentId,
    pub sign: ExternalitySign,
    pub rationale: String,
    pub direction: CompensationDirection,
}

impl ExternalityAssessment {
    /// Harmful actions offer compensation, helpful ones request it.
    pub fn new(agent: AgentId, sign: ExternalitySign, rationale: impl Into<String>) -> Self {
        let direction = match sign {
            ExternalitySign::Positive => CompensationDirection::RequestCompensation,
            ExternalitySign::Negative => CompensationDirection::OfferCompensation,
        };
        Self { agent, sign, rationale: rationale.into(), direction }
    }
}

/// Rough value of the whole team's cooperative outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffEstimate {
    pub value: f64,
    pub confidence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTermOutcome {
    pub estimate: PayoffEstimate,
    pub assessment: ExternalityAssessment,
    /// `amount` is what the agent pays the others; negative means it asks to
    /// be paid.
    pub proposal: TransferProposal,
}

/// The three judgement calls behind an act-time check. Implementations may
/// block (LLM-backed ones do), so callers own the timeout.
pub trait Reasoner: Send + Sync {
    fn estimate_cooperative_payoff(&self, state: &Snapshot, planned: &[Option<Action>])
        -> Result<PayoffEstimate, CotError>;

    fn classify_externality(
        &self,
        state: &Snapshot,
        agent: AgentId,
        planned: &[Option<Action>],
    ) -> Result<(ExternalitySign, String), CotError>;

    fn draft_adjustment(
        &self,
        state: &Snapshot,
        planned: &[Option<Action>],
        estimate: &PayoffEstimate,
        assessment: &ExternalityAssessment,
    ) -> Result<TransferProposal, CotError>;
}

/// Runs estimate → externality sign → proposal draft for `agent`.
pub fn short_term_step(
    reasoner: &dyn Reasoner,
    state: &Snapshot,
    planned: &[Option<Action>],
    agent: AgentId,
) -> Result<ShortTermOutcome, CotError> {
    if planned.len() < 2 {
        return Err(CotError::NoCounterparty);
    }
    match planned.get(agent) {
        None => return Err(CotError::UnknownAgent(agent)),
        Some(None) => return Err(CotError::MissingPlan(agent)),
        Some(Some(_)) => {}
    }
    let estimate = reasoner.estimate_cooperative_payoff(state, planned)?;
    let (sign, rationale) = reasoner.classify_externality(state, agent, planned)?;
    let assessment = ExternalityAssessment::new(agent, sign, rationale);
    let proposal = reasoner.draft_adjustment(state, planned, &estimate, &assessment)?;
    Ok(ShortTermOutcome { estimate, assessment, proposal })
}

/// Deterministic reasoner that reads payoffs straight from the environment.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedReasoner;

impl RuleBasedReasoner {
    fn raid_estimate(config: &RaidConfig, state: &RaidState) -> f64 {
        // Best case: every living hero casts Fireball at the mean from now on.
        let living = HEROES - state.dead_count();
        if living == 0 {
            return 0.0;
        }
        let per_turn = living as f64 * config.fireball_mean;
        let turns_needed = (state.boss_hp / per_turn).ceil() as usize;
        let finish = state.turn + turns_needed;
        if finish > config.max_turns {
            return 0.0;
        }
        raid_battle::global_reward(state.dead_count(), HEROES, finish, config.max_turns)
    }

    /// An ally the boss would hit this turn who cannot take another attack.
    fn endangered_ally(config: &RaidConfig, state: &RaidState, agent: AgentId, planned: &[Option<Action>]) -> Option<AgentId> {
        let heals = planned.iter().filter(|a| **a == Some(Action::Raid(Skill::Heal))).count();
        let heal_target = state.most_injured();
        state
            .boss_targets(&[])
            .into_iter()
            .map(|(h, _)| h)
            .filter(|&h| h != agent)
            .find(|&h| {
                let healed = if Some(h) == heal_target { heals as f64 * config.heal_mean } else { 0.0 };
                state.heroes[h].hp + healed <= config.boss_attack
            })
    }
}

impl Reasoner for RuleBasedReasoner {
    fn estimate_cooperative_payoff(
        &self,
        state: &Snapshot,
        _planned: &[Option<Action>],
    ) -> Result<PayoffEstimate, CotError> {
        Ok(match state {
            Snapshot::EscapeRoom { matrix } => {
                PayoffEstimate { value: matrix.cooperative_value(), confidence: "exact: best joint cell of the matrix".into() }
            }
            Snapshot::Raid { config, state } => PayoffEstimate {
                value: Self::raid_estimate(config, state),
                confidence: "heuristic: all living heroes casting Fireball at the mean".into(),
            },
        })
    }

    fn classify_externality(
        &self,
        state: &Snapshot,
        agent: AgentId,
        planned: &[Option<Action>],
    ) -> Result<(ExternalitySign, String), CotError> {
        let own = planned.get(agent).copied().flatten().ok_or(CotError::MissingPlan(agent))?;
        match state {
            Snapshot::EscapeRoom { matrix } => {
                if planned.len() != 2 {
                    return Err(CotError::Replay(format!("escape room has 2 agents, plan has {}", planned.len())));
                }
                let a1 = escape_action(planned[0])?;
                let a2 = escape_action(planned[1])?;
                let other = 1 - agent;
                let with_me = payoffs_with_absent(matrix, a1, a2);
                let with_me = if other == 0 { with_me.0 } else { with_me.1 };
                // Without me nobody escapes and nobody pays.
                let without_me = 0.0;
                let sign = if with_me >= without_me { ExternalitySign::Positive } else { ExternalitySign::Negative };
                Ok((sign, format!("choosing {own} moves agent {other}'s payoff from {without_me} to {with_me}")))
            }
            Snapshot::Raid { config, state } => match own {
                Action::Raid(Skill::Fireball) => {
                    let taunting = planned.contains(&Some(Action::Raid(Skill::Taunt)));
                    match Self::endangered_ally(config, state, agent, planned) {
                        Some(ally) if !taunting => Ok((
                            ExternalitySign::Negative,
                            format!(
                                "nobody taunts and hero {ally} ({} HP) is in the boss's line of fire",
                                state.heroes[ally].hp
                            ),
                        )),
                        _ => Ok((ExternalitySign::Positive, "damage shortens the fight for everyone".into())),
                    }
                }
                Action::Raid(Skill::Taunt) => {
                    Ok((ExternalitySign::Positive, format!("taunting absorbs {} damage meant for allies", config.boss_attack)))
                }
                Action::Raid(Skill::Heal) => Ok((ExternalitySign::Positive, "healing keeps the weakest ally alive".into())),
                other => Err(CotError::Env(crate::env::EnvError::ForeignAction { action: other, env: raid_battle::ENV_ID })),
            },
        }
    }

    fn draft_adjustment(
        &self,
        state: &Snapshot,
        planned: &[Option<Action>],
        estimate: &PayoffEstimate,
        assessment: &ExternalityAssessment,
    ) -> Result<TransferProposal, CotError> {
        let agent = assessment.agent;
        let raw = match state {
            Snapshot::EscapeRoom { matrix } => {
                let (p1, p2) = payoffs_with_absent(matrix, escape_action(planned[0])?, escape_action(planned[1])?);
                let own = if agent == 0 { p1 } else { p2 };
                own - estimate.value / planned.len() as f64
            }
            Snapshot::Raid { config, .. } => {
                let skill = match planned[agent] {
                    Some(Action::Raid(s)) => s,
                    _ => return Err(CotError::MissingPlan(agent)),
                };
                let gap = config.local_reward.fireball - config.local_reward.get(skill);
                match (assessment.direction, skill) {
                    (CompensationDirection::OfferCompensation, _) => config.local_reward.fireball - config.local_reward.taunt,
                    (CompensationDirection::RequestCompensation, Skill::Fireball) => 0.0,
                    (CompensationDirection::RequestCompensation, _) => -gap,
                }
            }
        };
        let amount = match assessment.direction {
            CompensationDirection::OfferCompensation => raw.max(0.0),
            CompensationDirection::RequestCompensation => raw.min(0.0),
        };
        let reasoning = match assessment.direction {
            CompensationDirection::OfferCompensation => format!(
                "my action has a {} externality ({}), so I pay {amount} toward a fair share of the joint {}",
                assessment.sign.word(),
                assessment.rationale,
                estimate.value
            ),
            CompensationDirection::RequestCompensation => format!(
                "my action has a {} externality ({}), so I ask for {} toward a fair share of the joint {}",
                assessment.sign.word(),
                assessment.rationale,
                -amount,
                estimate.value
            ),
        };
        Ok(TransferProposal::new(amount, reasoning))
    }
}
