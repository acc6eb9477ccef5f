//! Seeded multi-agent environments with social-dilemma payoffs.

pub mod escape_room;
pub mod raid_battle;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coalition::AgentId;
use crate::trajectory::StepRecord;

pub use escape_room::{EscapeAction, EscapeRoomEnv, PayoffMatrix};
pub use raid_battle::{RaidConfig, RaidEnv, RaidState, Skill};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("hero {0} is dead and cannot act")]
    DeadHeroAction(AgentId),
    #[error("hero {hero} cannot use {skill:?}: cooldown active")]
    SkillOnCooldown { hero: AgentId, skill: Skill },
    #[error("action {action} does not belong to {env}")]
    ForeignAction { action: Action, env: &'static str },
    #[error("episode is already over")]
    EpisodeOver,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("trajectory from {found} cannot be read by {expected}")]
    EnvMismatch { expected: &'static str, found: String },
    #[error("unknown action name {0:?}")]
    UnknownAction(String),
    #[error("{0}")]
    Invalid(String),
}

/// An action in either environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Escape(EscapeAction),
    Raid(Skill),
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Escape(EscapeAction::Door),
        Action::Escape(EscapeAction::Lever),
        Action::Raid(Skill::Taunt),
        Action::Raid(Skill::Fireball),
        Action::Raid(Skill::Heal),
    ];

    /// Short name used in trajectory files.
    pub fn name(self) -> &'static str {
        match self {
            Action::Escape(EscapeAction::Door) => "door",
            Action::Escape(EscapeAction::Lever) => "lever",
            Action::Raid(Skill::Taunt) => "taunt",
            Action::Raid(Skill::Fireball) => "fireball",
            Action::Raid(Skill::Heal) => "heal",
        }
    }

    /// Phrase used in `I propose to ...` intents.
    pub fn describe(self) -> &'static str {
        match self {
            Action::Escape(EscapeAction::Door) => "open the door",
            Action::Escape(EscapeAction::Lever) => "pull the lever",
            Action::Raid(Skill::Taunt) => "taunt the boss",
            Action::Raid(Skill::Fireball) => "cast fireball",
            Action::Raid(Skill::Heal) => "heal the most injured hero",
        }
    }

    pub fn from_name(name: &str) -> Result<Action, EnvError> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| EnvError::UnknownAction(name.to_string()))
    }

    /// Reads an intent phrase back; accepts either the canonical phrase or
    /// any text naming exactly one action keyword.
    pub fn from_intent(text: &str) -> Option<Action> {
        let lower = text.to_ascii_lowercase();
        if let Some(a) = Action::ALL.into_iter().find(|a| a.describe() == lower) {
            return Some(a);
        }
        let mut hits = Action::ALL.into_iter().filter(|a| lower.contains(a.name()));
        match (hits.next(), hits.next()) {
            (Some(a), None) => Some(a),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a policy or reasoner may inspect about the current state.
#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    EscapeRoom { matrix: PayoffMatrix },
    Raid { config: RaidConfig, state: RaidState },
}

pub trait MultiAgentEnv: Send {
    fn env_id(&self) -> &'static str;

    fn n_agents(&self) -> usize;

    /// Restart the episode; all randomness derives from `seed`.
    fn reset(&mut self, seed: u64);

    fn snapshot(&self) -> Snapshot;

    fn live_agents(&self) -> Vec<AgentId>;

    /// Legal actions for `agent`; empty when the agent cannot act.
    fn legal_actions(&self, agent: AgentId) -> Vec<Action>;

    fn step(&mut self, actions: &[Option<Action>]) -> Result<StepRecord, EnvError>;

    fn is_done(&self) -> bool;

    /// Shared end-of-episode reward, once the episode is done.
    fn terminal_record(&self) -> Option<StepRecord>;

    /// Config recorded in the trajectory header so the episode can be replayed.
    fn config_json(&self) -> Option<serde_json::Value>;
}

pub(crate) fn action_names(actions: &[Option<Action>]) -> Vec<Option<String>> {
    actions.iter().map(|a| a.map(|a| a.name().to_string())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_names_round_trip() {
        for a in Action::ALL {
            assert_eq!(Action::from_name(a.name()).unwrap(), a);
            assert_eq!(Action::from_intent(a.describe()), Some(a));
        }
        assert!(Action::from_name("jump").is_err());
        assert_eq!(Action::from_intent("I will cast a Fireball now"), Some(Action::Raid(Skill::Fireball)));
        assert_eq!(Action::from_intent("door or lever"), None);
    }
}
