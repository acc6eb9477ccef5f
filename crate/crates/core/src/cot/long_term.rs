use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CotError;
use crate::coalition::{
    shapley_exact, Allocation, AgentId, CharacteristicGame, Coalition, GameError, DEFAULT_ENUMERATION_CAP,
};
use crate::env::escape_room::{self, payoffs_with_absent, PayoffMatrix};
use crate::env::{raid_battle, Action, EscapeAction};
use crate::negotiation::TransferProposal;
use crate::trajectory::TrajectoryRecord;

/// How `R(C, τ)` is evaluated for a coalition other than the one that played.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterfactualMode {
    /// Replay the logged actions (and logged draws) with outsiders as no-ops.
    #[default]
    AblateLog,
    /// Rerun the episode from its seed with outsiders removed and everyone
    /// else's policy intact.
    Resimulate,
}

impl FromStr for CounterfactualMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ablate_log" => Ok(Self::AblateLog),
            "resimulate" => Ok(Self::Resimulate),
            other => Err(format!("unknown counterfactual mode {other:?} (expected ablate_log or resimulate)")),
        }
    }
}

impl fmt::Display for CounterfactualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AblateLog => "ablate_log",
            Self::Resimulate => "resimulate",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyMode {
    /// The grand-coalition marginal `Δ_i(N, τ)` weighted by the full set of
    /// Shapley coefficients. The weights sum to one, so this is `Δ_i`.
    PaperLiteral,
    /// Exact Shapley values of the game `v(C) = R(C, τ)`.
    #[default]
    FullCoalition,
}

impl FromStr for ShapleyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper_literal" => Ok(Self::PaperLiteral),
            "full_coalition" => Ok(Self::FullCoalition),
            other => Err(format!("unknown Shapley mode {other:?} (expected paper_literal or full_coalition)")),
        }
    }
}

/// Sum of every reward in the trajectory, terminal rewards included.
pub fn collective_outcome(traj: &TrajectoryRecord) -> f64 {
    traj.steps.iter().flat_map(|s| s.rewards.iter()).sum()
}

fn check_replayable(traj: &TrajectoryRecord) -> Result<(), CotError> {
    if traj.seed().is_none() {
        return Err(CotError::Provenance("trajectory header has no seed".into()));
    }
    match traj.env_id() {
        escape_room::ENV_ID | raid_battle::ENV_ID => Ok(()),
        other => Err(CotError::Replay(format!("unknown environment {other:?}"))),
    }
}

fn escape_ablated(traj: &TrajectoryRecord, members: Coalition) -> Result<f64, CotError> {
    let matrix: PayoffMatrix = match &traj.header.config {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| CotError::Replay(e.to_string()))?,
        None => PayoffMatrix::canonical(),
    };
    let mut total = 0.0;
    for step in traj.action_steps() {
        let mut acts = [None, None];
        for (agent, slot) in acts.iter_mut().enumerate() {
            if !members.contains(agent) {
                continue;
            }
            if let Some(name) = step.actions.get(agent).cloned().flatten() {
                match Action::from_name(&name)? {
                    Action::Escape(a) => *slot = Some::<EscapeAction>(a),
                    other => {
                        return Err(CotError::Replay(format!("{other} is not an escape-room action")));
                    }
                }
            }
        }
        let (r1, r2) = payoffs_with_absent(&matrix, acts[0], acts[1]);
        total += r1 + r2;
    }
    Ok(total)
}

/// `R(C, τ)`: what `members` would have collected on their own. `R(∅) = 0`.
pub fn coalition_outcome(traj: &TrajectoryRecord, members: Coalition, mode: CounterfactualMode) -> Result<f64, CotError> {
    check_replayable(traj)?;
    let n = traj.n_agents();
    if let Some(outside) = members.members().find(|&a| a >= n) {
        return Err(CotError::UnknownAgent(outside));
    }
    if members.is_empty() {
        return Ok(0.0);
    }
    match mode {
        CounterfactualMode::AblateLog => match traj.env_id() {
            escape_room::ENV_ID => escape_ablated(traj, members),
            _ => Ok(raid_battle::replay(traj, members)?.total_reward),
        },
        CounterfactualMode::Resimulate => {
            crate::runtime::resimulate_outcome(traj, members).map_err(|e| CotError::Replay(e.to_string()))
        }
    }
}

/// `Δ_i = R(N, τ) − R(N \ {i}, τ)`, with `R(N, τ)` read from the log.
pub fn marginal_contribution_traj(traj: &TrajectoryRecord, agent: AgentId, mode: CounterfactualMode) -> Result<f64, CotError> {
    check_replayable(traj)?;
    let n = traj.n_agents();
    if agent >= n {
        return Err(CotError::UnknownAgent(agent));
    }
    let without = coalition_outcome(traj, Coalition::grand(n).without(agent), mode)?;
    Ok(collective_outcome(traj) - without)
}

/// `Σ_{C ⊆ N\{i}} |C|!(n−|C|−1)!/n!`, summed coalition by coalition size.
pub fn literal_weight_sum(n: usize) -> f64 {
    let weights = crate::coalition::coalition_weights(n);
    let mut binom: u128 = 1;
    let mut sum = 0.0;
    for (s, w) in weights.iter().enumerate() {
        if s > 0 {
            binom = binom * (n - s) as u128 / s as u128;
        }
        sum += binom as f64 * w;
    }
    sum
}

/// The game `v(C) = R(C, τ)` with `v(N)` taken from the log.
pub fn coalition_game(traj: &TrajectoryRecord, mode: CounterfactualMode) -> Result<CharacteristicGame, CotError> {
    check_replayable(traj)?;
    let n = traj.n_agents();
    if n == 0 {
        return Err(CotError::Game(GameError::PlayerCount(0)));
    }
    if n > DEFAULT_ENUMERATION_CAP {
        return Err(CotError::Game(GameError::EnumerationCap { n, cap: DEFAULT_ENUMERATION_CAP }));
    }
    let full = (1u64 << n) - 1;
    let grand = collective_outcome(traj);
    let table = (0..=full)
        .into_par_iter()
        .map(|bits| match bits {
            0 => Ok(0.0),
            b if b == full => Ok(grand),
            b => coalition_outcome(traj, Coalition::from_bits(b), mode),
        })
        .collect::<Result<Vec<f64>, CotError>>()?;
    Ok(CharacteristicGame::from_table(n, table)?)
}

pub fn shapley_from_trajectory(
    traj: &TrajectoryRecord,
    mode: ShapleyMode,
    counterfactual: CounterfactualMode,
) -> Result<Allocation, CotError> {
    match mode {
        ShapleyMode::PaperLiteral => {
            let n = traj.n_agents();
            let weight = literal_weight_sum(n);
            let phi = (0..n)
                .map(|i| marginal_contribution_traj(traj, i, counterfactual).map(|d| d * weight))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Allocation::new(phi)?)
        }
        ShapleyMode::FullCoalition => Ok(shapley_exact(&coalition_game(traj, counterfactual)?)?),
    }
}

/// Claim on `pool` proportional to `agent`'s Shapley value.
pub fn build_offer(phi: &Allocation, pool: f64, agent: AgentId) -> Result<TransferProposal, CotError> {
    if agent >= phi.len() {
        return Err(CotError::UnknownAgent(agent));
    }
    let total = phi.total();
    if total == 0.0 {
        return Err(CotError::Game(GameError::DegenerateSplit));
    }
    let share = phi[agent] / total;
    let amount = pool * share;
    Ok(TransferProposal::new(
        amount,
        format!(
            "my Shapley value is {} ({:.2}% of the total), so my share of the {pool} pool is {amount}",
            phi[agent],
            100.0 * share
        ),
    ))
}
