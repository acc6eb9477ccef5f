//! Shapley-value credit assignment for cooperating agents: exact and sampled
//! solvers, a tagged negotiation protocol, trajectory-based credit, two
//! seeded social-dilemma environments, scripted and LLM-backed agents, and a
//! weighted-earned-value allocator.

pub mod coalition;
pub mod cot;
pub mod env;
pub mod negotiation;
pub mod runtime;
pub mod trajectory;
pub mod wev;

pub use coalition::{
    marginal_contribution, shapley_exact, shapley_sampled, shapley_two_agent, side_payments, AgentId, Allocation,
    CharacteristicGame, Coalition, ExactSolver, GameError, TransferPlan,
};
pub use cot::{
    build_offer, collective_outcome, marginal_contribution_traj, shapley_from_trajectory, short_term_step, CotError,
    CounterfactualMode, ExternalityAssessment, Reasoner, RuleBasedReasoner, ShapleyMode,
};
pub use env::{Action, EnvError, MultiAgentEnv, Snapshot};
pub use negotiation::{parse_message, render_message, NegotiationMessage, Session, SessionStatus, TransferProposal};
pub use runtime::{run_episode, EpisodeResult, PipelineConfig, Policy, RuntimeError, Settlement, Variant};
pub use trajectory::{StepRecord, TrajectoryHeader, TrajectoryRecord};
