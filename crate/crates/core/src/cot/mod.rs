//! Shapley chain-of-thought: an act-time externality check and post-episode
//! credit assignment over logged trajectories.

mod long_term;
mod short_term;

use thiserror::Error;

use crate::coalition::{AgentId, GameError};
use crate::env::EnvError;

pub use long_term::{
    build_offer, coalition_game, coalition_outcome, collective_outcome, literal_weight_sum,
    marginal_contribution_traj, shapley_from_trajectory, CounterfactualMode, ShapleyMode,
};
pub use short_term::{
    short_term_step, CompensationDirection, ExternalityAssessment, ExternalitySign, PayoffEstimate, Reasoner,
    RuleBasedReasoner, ShortTermOutcome,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CotError {
    #[error("externalities need at least two agents")]
    NoCounterparty,
    #[error("agent {0} has no planned action")]
    MissingPlan(AgentId),
    #[error("agent {0} does not appear in the trajectory")]
    UnknownAgent(AgentId),
    #[error("trajectory cannot be replayed: {0}")]
    Provenance(String),
    #[error("replay failed: {0}")]
    Replay(String),
    #[error("unparsable reasoner reply: {0:?}")]
    Unparsable(String),
    #[error("reasoner backend failed after {attempts} attempt(s): {message}")]
    Backend { attempts: u32, message: String },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Env(#[from] EnvError),
}
