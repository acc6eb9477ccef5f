//! Logged episodes: a JSONL header line followed by one line per step.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coalition::AgentId;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trajectory file is empty")]
    MissingHeader,
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub id: AgentId,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub env_id: String,
    /// `None` marks a trajectory that cannot be replayed.
    #[serde(default)]
    pub seed: Option<u64>,
    pub agents: Vec<AgentInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<serde_json::Value>,
}

/// One environment step. `actions[j] == None` is a no-op (dead, ablated or
/// idle agent). A `terminal` step carries the shared end-of-episode reward
/// and no actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    #[serde(default)]
    pub actions: Vec<Option<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub draws: Vec<Option<f64>>,
    pub rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hp: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boss_hp: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub header: TrajectoryHeader,
    pub steps: Vec<StepRecord>,
}

impl TrajectoryRecord {
    pub fn new(header: TrajectoryHeader) -> Self {
        Self { header, steps: Vec::new() }
    }

    pub fn env_id(&self) -> &str {
        &self.header.env_id
    }

    pub fn seed(&self) -> Option<u64> {
        self.header.seed
    }

    pub fn n_agents(&self) -> usize {
        self.header.agents.len()
    }

    /// Step count `T`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Steps that carry agent actions (everything but the terminal reward).
    pub fn action_steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(|s| !s.terminal)
    }

    /// Total reward collected by each agent.
    pub fn agent_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.n_agents()];
        for step in &self.steps {
            for (t, r) in totals.iter_mut().zip(&step.rewards) {
                *t += r;
            }
        }
        totals
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let n = self.n_agents();
        for (k, a) in self.header.agents.iter().enumerate() {
            if a.id != k {
                return Err(TrajectoryError::Invalid(format!("agent ids must be 0..{n} in order")));
            }
        }
        for step in &self.steps {
            if step.rewards.len() != n {
                return Err(TrajectoryError::Invalid(format!(
                    "step {} has {} rewards for {n} agents",
                    step.t,
                    step.rewards.len()
                )));
            }
            if !step.terminal && step.actions.len() != n {
                return Err(TrajectoryError::Invalid(format!(
                    "step {} has {} actions for {n} agents",
                    step.t,
                    step.actions.len()
                )));
            }
            if step.rewards.iter().any(|r| !r.is_finite()) {
                return Err(TrajectoryError::Invalid(format!("step {} has a non-finite reward", step.t)));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TrajectoryError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (idx, first) = lines.next().ok_or(TrajectoryError::MissingHeader)?;
        let header: TrajectoryHeader = serde_json::from_str(first)
            .map_err(|e| TrajectoryError::Parse { line: idx + 1, message: e.to_string() })?;
        let mut record = TrajectoryRecord::new(header);
        for (idx, line) in lines {
            let step: StepRecord = serde_json::from_str(line)
                .map_err(|e| TrajectoryError::Parse { line: idx + 1, message: e.to_string() })?;
            record.steps.push(step);
        }
        record.validate()?;
        Ok(record)
    }

    pub fn write(&self, path: &Path) -> Result<(), TrajectoryError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, TrajectoryError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}
