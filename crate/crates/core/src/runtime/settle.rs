//! Post-episode settlement: realized payoffs, task-time deals, or a
//! negotiated Shapley split.

use log::debug;
use serde::{Deserialize, Serialize};

use super::{transfer_plan, Phase, Policy, PipelineConfig, RuntimeError, SessionRecord, SettlementContext, SkippedTurn};
use crate::coalition::{AgentId, Allocation, TransferPlan};
use crate::cot::{shapley_from_trajectory, CounterfactualMode, ShapleyMode};
use crate::negotiation::{parse_message, NegotiationMessage, Session, SessionStatus};
use crate::trajectory::TrajectoryRecord;

/// Claims within this distance of the Shapley value are accepted.
pub const CLAIM_TOLERANCE: f64 = 1e-9;

/// A transfer agreed before acting: `proposer` pays `amount`, split evenly
/// over the other participants (a negative amount is a payment received).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deal {
    pub turn: usize,
    pub participants: Vec<AgentId>,
    pub proposer: AgentId,
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claimant: AgentId,
    pub round: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub realized: Allocation,
    pub allocation: Allocation,
    pub transfers: TransferPlan,
    /// Negotiation failed and the realized payoffs were kept.
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shapley: Option<Allocation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub claims: Vec<ClaimRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deals: Vec<Deal>,
}

impl Settlement {
    /// Latest claim per agent as of each round `1..=max_round`, for agents
    /// that made at least one claim.
    pub fn claims_by_round(&self, max_round: usize) -> Vec<Vec<f64>> {
        let n = self.realized.len();
        (1..=max_round)
            .map(|r| {
                (0..n)
                    .map(|a| {
                        self.claims
                            .iter()
                            .rfind(|c| c.claimant == a && c.round <= r)
                            .map_or(f64::NAN, |c| c.amount)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Claim for `round` of `rounds`: opens at the larger of the realized payoff
/// and the Shapley value and walks linearly down to the Shapley value by the
/// last round.
pub(crate) fn scheduled_claim(shapley: f64, realized: f64, round: usize, rounds: usize) -> f64 {
    let anchor = shapley.max(realized);
    if rounds <= 1 || round >= rounds {
        return shapley;
    }
    shapley + (anchor - shapley) * (rounds - round) as f64 / (rounds - 1) as f64
}

/// A claimant following the schedule above, and responders who accept
/// exactly the Shapley value.
pub fn compliant_settlement(ctx: &SettlementContext<'_>) -> Option<NegotiationMessage> {
    let phi = ctx.shapley[ctx.claimant];
    if ctx.agent == ctx.claimant {
        if ctx.standing.is_some_and(|s| s.proposer == ctx.agent && (s.proposal.amount - phi).abs() <= CLAIM_TOLERANCE) {
            return None;
        }
        let claim = scheduled_claim(phi, ctx.realized[ctx.claimant], ctx.round, ctx.max_rounds);
        return Some(NegotiationMessage::proposal(
            claim,
            format!("my Shapley value is {phi} and I realized {}", ctx.realized[ctx.claimant]),
        ));
    }
    let standing = ctx.standing?;
    if (standing.proposal.amount - phi).abs() <= CLAIM_TOLERANCE {
        Some(NegotiationMessage::agree(format!("{phi} matches agent {}'s Shapley value", ctx.claimant)))
    } else {
        Some(NegotiationMessage::disagree(format!("agent {}'s Shapley value is {phi}", ctx.claimant)))
    }
}

pub(super) fn settle(
    traj: &TrajectoryRecord,
    policies: &mut [Box<dyn Policy>],
    cfg: &PipelineConfig,
    deals: Vec<Deal>,
    sessions: &mut Vec<SessionRecord>,
) -> Result<Settlement, RuntimeError> {
    let n = traj.n_agents();
    let realized = Allocation::new(traj.agent_totals())?;
    if !cfg.variant.negotiation() {
        return Ok(Settlement {
            transfers: transfer_plan(&realized, &realized)?,
            allocation: realized.clone(),
            realized,
            fallback: false,
            shapley: None,
            claims: Vec::new(),
            deals: Vec::new(),
        });
    }
    if !cfg.variant.long_term() {
        let mut payoffs = realized.payoffs().to_vec();
        for deal in &deals {
            let others = deal.participants.len().saturating_sub(1);
            if others == 0 {
                continue;
            }
            payoffs[deal.proposer] -= deal.amount;
            for &p in deal.participants.iter().filter(|&&p| p != deal.proposer) {
                payoffs[p] += deal.amount / others as f64;
            }
        }
        let allocation = Allocation::new(payoffs)?;
        return Ok(Settlement {
            transfers: transfer_plan(&realized, &allocation)?,
            allocation,
            realized,
            fallback: false,
            shapley: None,
            claims: Vec::new(),
            deals,
        });
    }

    let shapley = shapley_from_trajectory(traj, ShapleyMode::FullCoalition, CounterfactualMode::AblateLog)?;
    let mut claims = Vec::new();
    let mut settled = vec![None; n];
    #[allow(clippy::needless_range_loop)]
    for claimant in 0..n {
        let order: Vec<AgentId> = (0..n).map(|k| (claimant + k) % n).collect();
        let mut session = Session::new(order.clone(), cfg.max_negotiation_rounds)?;
        let mut skipped = Vec::new();
        while let Some(speaker) = session.next_speaker() {
            let round = session.round();
            let ctx = SettlementContext {
                agent: speaker,
                claimant,
                round,
                max_rounds: cfg.max_negotiation_rounds,
                realized: &realized,
                shapley: &shapley,
                transcript: session.transcript(),
                standing: session.standing_proposal(),
            };
            match policies[speaker].settle(&ctx)?.map(|raw| (parse_message(&raw), raw)) {
                None => {
                    session.skip(speaker)?;
                }
                Some((Ok(message), _)) => {
                    if let Some(p) = message.proposal_payload() {
                        claims.push(ClaimRecord { claimant, round, amount: p.amount });
                    }
                    session.advance(speaker, message)?;
                }
                Some((Err(e), raw)) => {
                    debug!("agent {speaker} sent an unparsable settlement reply: {e}");
                    skipped.push(SkippedTurn { round, sender: speaker, raw, error: e.to_string() });
                    session.skip(speaker)?;
                }
            }
        }
        if let SessionStatus::Agreed(a) = session.status() {
            settled[claimant] = Some(a.proposal.amount);
        }
        sessions.push(SessionRecord {
            phase: Phase::Settle,
            turn: None,
            claimant: Some(claimant),
            participants: order,
            outcome: session.status().clone(),
            messages: session.transcript_lines(),
            skipped,
        });
    }

    let agreed: Option<Vec<f64>> = settled.into_iter().collect();
    let allocation = match agreed {
        Some(values) if (values.iter().sum::<f64>() - realized.total()).abs() <= 1e-6 * realized.total().abs().max(1.0) => {
            Some(Allocation::new(values)?)
        }
        _ => None,
    };
    let fallback = allocation.is_none();
    let allocation = allocation.unwrap_or_else(|| realized.clone());
    Ok(Settlement {
        transfers: transfer_plan(&realized, &allocation)?,
        allocation,
        realized,
        fallback,
        shapley: Some(shapley),
        claims,
        deals,
    })
}
