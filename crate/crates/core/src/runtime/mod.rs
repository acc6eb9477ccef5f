//! Policies, the four pipeline variants, and the episode loop.

pub mod batch;
pub mod llm;
mod policies;
mod settle;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coalition::{AgentId, Allocation, Coalition, GameError, TransferPlan};
use crate::cot::{collective_outcome, CotError, Reasoner, RuleBasedReasoner};
use crate::env::escape_room::{self, EscapeRoomEnv, PayoffMatrix};
use crate::env::raid_battle::{self, RaidConfig, RaidEnv};
use crate::env::{Action, EnvError, MultiAgentEnv, Snapshot};
use crate::negotiation::{
    parse_message, AgreedProposal, NegotiationMessage, Session, SessionError, SessionStatus, TranscriptEntry,
    TranscriptLine,
};
use crate::trajectory::{AgentInfo, TrajectoryError, TrajectoryHeader, TrajectoryRecord};

pub use policies::{policy_by_name, GreedySelfish, Idle, RoleBalanced, ShapleyNegotiator, ROLE_SCHEDULE, SCRIPTED_POLICIES};
pub use settle::{compliant_settlement, ClaimRecord, Deal, Settlement, CLAIM_TOLERANCE};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("expected {expected} policies, got {got}")]
    PolicyCount { expected: usize, got: usize },
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
    #[error("unknown environment {0:?}")]
    UnknownEnv(String),
    #[error("agent {agent} chose illegal action {action}")]
    IllegalAction { agent: AgentId, action: Action },
    #[error("backend failed after {attempts} attempt(s): {message}")]
    Backend { attempts: u32, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Cot(#[from] CotError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

impl RuntimeError {
    pub fn is_backend(&self) -> bool {
        matches!(self, RuntimeError::Backend { .. } | RuntimeError::Cot(CotError::Backend { .. }))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "LLM_ONLY")]
    LlmOnly,
    #[serde(rename = "NEG")]
    Neg,
    #[serde(rename = "STS")]
    Sts,
    #[serde(rename = "SC")]
    Sc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::LlmOnly, Variant::Neg, Variant::Sts, Variant::Sc];

    pub fn negotiation(self) -> bool {
        self != Variant::LlmOnly
    }

    pub fn short_term(self) -> bool {
        matches!(self, Variant::Sts | Variant::Sc)
    }

    pub fn long_term(self) -> bool {
        self == Variant::Sc
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::LlmOnly => "LLM_ONLY",
            Variant::Neg => "NEG",
            Variant::Sts => "STS",
            Variant::Sc => "SC",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let key = s.trim().to_ascii_uppercase().replace("LLM+", "");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == key)
            .ok_or_else(|| format!("unknown pipeline variant {s:?} (expected LLM_ONLY, NEG, STS or SC)"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonerKind {
    #[default]
    RuleBased,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub max_negotiation_rounds: usize,
    pub reasoner: ReasonerKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { variant: Variant::LlmOnly, max_negotiation_rounds: 3, reasoner: ReasonerKind::RuleBased }
    }
}

impl PipelineConfig {
    pub fn new(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.max_negotiation_rounds == 0 {
            return Err(RuntimeError::InvalidConfig("max_negotiation_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// What a policy sees when choosing an action.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub agent: AgentId,
    pub env_id: &'static str,
    pub turn: usize,
    pub snapshot: &'a Snapshot,
    pub legal: &'a [Action],
    /// Actions announced during this turn's negotiation, by agent.
    pub intents: &'a [Option<Action>],
    pub pipeline: &'a PipelineConfig,
}

/// A policy's view of a pre-act negotiation session.
#[derive(Debug, Clone, Copy)]
pub struct NegotiationContext<'a> {
    pub obs: Observation<'a>,
    pub round: usize,
    pub participants: &'a [AgentId],
    pub transcript: &'a [TranscriptEntry],
    pub standing: Option<&'a AgreedProposal>,
}

/// A policy's view of one post-episode claim session. Amounts in these
/// sessions are the payoff claimed for `claimant`.
#[derive(Debug, Clone, Copy)]
pub struct SettlementContext<'a> {
    pub agent: AgentId,
    pub claimant: AgentId,
    pub round: usize,
    pub max_rounds: usize,
    pub realized: &'a Allocation,
    pub shapley: &'a Allocation,
    pub transcript: &'a [TranscriptEntry],
    pub standing: Option<&'a AgreedProposal>,
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    /// `None` is a no-op. Must be one of `obs.legal` otherwise.
    fn act(&mut self, obs: &Observation<'_>) -> Result<Option<Action>, RuntimeError>;

    /// Raw protocol text for this turn; `None` passes.
    fn negotiate(&mut self, _ctx: &NegotiationContext<'_>) -> Result<Option<String>, RuntimeError> {
        Ok(None)
    }

    /// Raw protocol text in a claim session; defaults to a compliant
    /// Shapley claimant.
    fn settle(&mut self, ctx: &SettlementContext<'_>) -> Result<Option<String>, RuntimeError> {
        Ok(compliant_settlement(ctx).map(|m| m.render()))
    }
}

/// A reply that could not be parsed; it cost the sender its turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTurn {
    pub round: usize,
    pub sender: AgentId,
    pub raw: String,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Act,
    Settle,
}

/// One negotiation session, as exported to transcript files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claimant: Option<AgentId>,
    pub participants: Vec<AgentId>,
    pub outcome: SessionStatus,
    pub messages: Vec<TranscriptLine>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedTurn>,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub trajectory: TrajectoryRecord,
    /// `None` when the episode was aborted.
    pub settlement: Option<Settlement>,
    pub sessions: Vec<SessionRecord>,
    pub aborted: Option<String>,
}

impl EpisodeResult {
    pub fn transcripts_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.sessions {
            out.push_str(&serde_json::to_string(s).expect("session serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn make_env(env_id: &str, config: Option<&serde_json::Value>) -> Result<Box<dyn MultiAgentEnv>, RuntimeError> {
    let bad = |e: serde_json::Error| RuntimeError::InvalidConfig(e.to_string());
    match env_id {
        escape_room::ENV_ID => {
            let matrix = match config {
                Some(v) if !v.is_null() => serde_json::from_value::<PayoffMatrix>(v.clone()).map_err(bad)?,
                _ => PayoffMatrix::canonical(),
            };
            Ok(Box::new(EscapeRoomEnv::with_matrix(matrix)))
        }
        raid_battle::ENV_ID => {
            let config = match config {
                Some(v) if !v.is_null() => serde_json::from_value::<RaidConfig>(v.clone()).map_err(bad)?,
                _ => RaidConfig::default(),
            };
            Ok(Box::new(RaidEnv::new(config)?))
        }
        other => Err(RuntimeError::UnknownEnv(other.to_string())),
    }
}

pub fn default_reasoner() -> Arc<dyn Reasoner> {
    Arc::new(RuleBasedReasoner)
}

/// Plays one episode and settles it.
pub fn run_episode(
    env: &mut dyn MultiAgentEnv,
    policies: &mut [Box<dyn Policy>],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<EpisodeResult, RuntimeError> {
    let n = env.n_agents();
    run_masked(env, policies, cfg, seed, Coalition::grand(n), true)
}

fn ask<T>(
    result: Result<T, RuntimeError>,
    aborted: &mut Option<String>,
) -> Result<Option<T>, RuntimeError> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_backend() => {
            warn!("aborting episode: {e}");
            *aborted = Some(e.to_string());
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Episode loop. Agents outside `members` never act or negotiate.
fn run_masked(
    env: &mut dyn MultiAgentEnv,
    policies: &mut [Box<dyn Policy>],
    cfg: &PipelineConfig,
    seed: u64,
    members: Coalition,
    settle: bool,
) -> Result<EpisodeResult, RuntimeError> {
    cfg.validate()?;
    let n = env.n_agents();
    if policies.len() != n {
        return Err(RuntimeError::PolicyCount { expected: n, got: policies.len() });
    }
    env.reset(seed);
    let header = TrajectoryHeader {
        env_id: env.env_id().to_string(),
        seed: Some(seed),
        agents: policies.iter().enumerate().map(|(id, p)| AgentInfo { id, policy: p.name().to_string() }).collect(),
        config: env.config_json(),
        pipeline: Some(serde_json::to_value(cfg).expect("pipeline serializes")),
    };
    let mut trajectory = TrajectoryRecord::new(header);
    let mut sessions = Vec::new();
    let mut deals = Vec::new();
    let mut aborted = None;
    let mut turn = 0;

    'episode: while !env.is_done() {
        let snapshot = env.snapshot();
        let live: Vec<AgentId> = env.live_agents().into_iter().filter(|&a| members.contains(a)).collect();
        let legal: Vec<Vec<Action>> = (0..n).map(|a| env.legal_actions(a)).collect();
        let mut intents: Vec<Option<Action>> = vec![None; n];

        if cfg.variant.negotiation() && live.len() >= 2 {
            let mut session = Session::new(live.clone(), cfg.max_negotiation_rounds)?;
            let mut skipped = Vec::new();
            let mut spoke_this_round = false;
            let mut turns = 0;
            while let Some(speaker) = session.next_speaker() {
                let round = session.round();
                let obs = Observation {
                    agent: speaker,
                    env_id: env.env_id(),
                    turn,
                    snapshot: &snapshot,
                    legal: &legal[speaker],
                    intents: &intents,
                    pipeline: cfg,
                };
                let ctx = NegotiationContext {
                    obs,
                    round,
                    participants: &live,
                    transcript: session.transcript(),
                    standing: session.standing_proposal(),
                };
                let reply = match policies[speaker].negotiate(&ctx) {
                    Err(RuntimeError::Cot(CotError::Unparsable(raw))) => Ok(Some(raw)),
                    other => other,
                };
                let Some(reply) = ask(reply, &mut aborted)? else {
                    break 'episode;
                };
                match reply.map(|raw| (parse_message(&raw), raw)) {
                    None => {
                        session.skip(speaker)?;
                    }
                    Some((Ok(message), _)) => {
                        if let NegotiationMessage::Intent { action } = &message {
                            intents[speaker] = Action::from_intent(action).filter(|a| legal[speaker].contains(a));
                        }
                        spoke_this_round = true;
                        session.advance(speaker, message)?;
                    }
                    Some((Err(e), raw)) => {
                        debug!("agent {speaker} sent an unparsable reply: {e}");
                        skipped.push(SkippedTurn { round, sender: speaker, raw, error: e.to_string() });
                        session.skip(speaker)?;
                    }
                }
                turns += 1;
                if turns % live.len() == 0 {
                    if !spoke_this_round {
                        break;
                    }
                    spoke_this_round = false;
                }
            }
            if let SessionStatus::Agreed(deal) = session.status() {
                deals.push(Deal { turn, participants: live.clone(), proposer: deal.proposer, amount: deal.proposal.amount });
            }
            sessions.push(SessionRecord {
                phase: Phase::Act,
                turn: Some(turn),
                claimant: None,
                participants: live.clone(),
                outcome: session.status().clone(),
                messages: session.transcript_lines(),
                skipped,
            });
        }

        let mut actions = vec![None; n];
        for &agent in &live {
            let obs = Observation {
                agent,
                env_id: env.env_id(),
                turn,
                snapshot: &snapshot,
                legal: &legal[agent],
                intents: &intents,
                pipeline: cfg,
            };
            let Some(choice) = ask(policies[agent].act(&obs), &mut aborted)? else {
                break 'episode;
            };
            if let Some(action) = choice {
                if !legal[agent].contains(&action) {
                    return Err(RuntimeError::IllegalAction { agent, action });
                }
            }
            actions[agent] = choice;
        }
        trajectory.steps.push(env.step(&actions)?);
        turn += 1;
    }

    if aborted.is_some() {
        return Ok(EpisodeResult { trajectory, settlement: None, sessions, aborted });
    }
    if let Some(terminal) = env.terminal_record() {
        trajectory.steps.push(terminal);
    }
    let settlement = if settle {
        match settle::settle(&trajectory, policies, cfg, deals, &mut sessions) {
            Ok(s) => Some(s),
            Err(e) if e.is_backend() => {
                aborted = Some(e.to_string());
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(EpisodeResult { trajectory, settlement, sessions, aborted })
}

/// Settles a logged episode without replaying it (no task-time deals).
pub fn settle_trajectory(
    traj: &TrajectoryRecord,
    policies: &mut [Box<dyn Policy>],
    cfg: &PipelineConfig,
) -> Result<(Settlement, Vec<SessionRecord>), RuntimeError> {
    cfg.validate()?;
    if policies.len() != traj.n_agents() {
        return Err(RuntimeError::PolicyCount { expected: traj.n_agents(), got: policies.len() });
    }
    let mut sessions = Vec::new();
    let settlement = settle::settle(traj, policies, cfg, Vec::new(), &mut sessions)?;
    Ok((settlement, sessions))
}

/// Builds scripted policies for the given names.
pub fn scripted_policies(names: &[String], reasoner: &Arc<dyn Reasoner>) -> Result<Vec<Box<dyn Policy>>, RuntimeError> {
    names.iter().map(|n| policy_by_name(n, reasoner.clone())).collect()
}

/// Reruns a logged episode from its seed with only `members` playing, using
/// the policies and pipeline named in the header. Returns the new collective
/// outcome.
pub fn resimulate_outcome(traj: &TrajectoryRecord, members: Coalition) -> Result<f64, RuntimeError> {
    let seed = traj.seed().ok_or_else(|| CotError::Provenance("trajectory header has no seed".into()))?;
    let mut env = make_env(traj.env_id(), traj.header.config.as_ref())?;
    let cfg: PipelineConfig = match &traj.header.pipeline {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| RuntimeError::InvalidConfig(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if cfg.reasoner == ReasonerKind::Llm {
        return Err(RuntimeError::InvalidConfig("resimulation needs an offline reasoner".into()));
    }
    let names: Vec<String> = traj.header.agents.iter().map(|a| a.policy.clone()).collect();
    let mut policies = scripted_policies(&names, &default_reasoner())?;
    let out = run_masked(env.as_mut(), &mut policies, &cfg, seed, members, false)?;
    if let Some(reason) = out.aborted {
        return Err(RuntimeError::Backend { attempts: 0, message: reason });
    }
    Ok(collective_outcome(&out.trajectory))
}

/// Convenience wrapper: builds env and scripted policies, then runs.
pub fn run_scripted(
    env_id: &str,
    env_config: Option<&serde_json::Value>,
    policy_names: &[String],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<EpisodeResult, RuntimeError> {
    let mut env = make_env(env_id, env_config)?;
    let mut policies = scripted_policies(policy_names, &default_reasoner())?;
    run_episode(env.as_mut(), &mut policies, cfg, seed)
}

pub(crate) fn transfer_plan(realized: &Allocation, target: &Allocation) -> Result<TransferPlan, RuntimeError> {
    Ok(crate::coalition::side_payments(realized, target)?)
}
