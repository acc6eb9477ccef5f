//! Two-agent escape room: one agent pays 1 to pull a lever so the other can
//! leave through the door for +10. Played as a one-shot matrix game.

use serde::{Deserialize, Serialize};

use super::{action_names, Action, EnvError, MultiAgentEnv, Snapshot};
use crate::coalition::{AgentId, Allocation, CharacteristicGame, GameError};
use crate::trajectory::{AgentInfo, StepRecord, TrajectoryHeader, TrajectoryRecord};

pub const ENV_ID: &str = "escape_room";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EscapeAction {
    Door,
    Lever,
}

impl EscapeAction {
    fn index(self) -> usize {
        match self {
            EscapeAction::Door => 0,
            EscapeAction::Lever => 1,
        }
    }
}

/// Payoff pairs indexed by `(agent 1 action, agent 2 action)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    cells: [[(f64, f64); 2]; 2],
}

impl Default for PayoffMatrix {
    fn default() -> Self {
        Self::canonical()
    }
}

impl PayoffMatrix {
    pub fn canonical() -> Self {
        Self { cells: [[(-1.0, -1.0), (10.0, -1.0)], [(-1.0, 10.0), (-1.0, -1.0)]] }
    }

    pub fn cell(&self, a1: EscapeAction, a2: EscapeAction) -> (f64, f64) {
        self.cells[a1.index()][a2.index()]
    }

    /// Escape happens when exactly one agent pulls the lever.
    pub fn is_success(a1: EscapeAction, a2: EscapeAction) -> bool {
        a1 != a2
    }

    /// Best joint total, `v({1,2})`.
    pub fn cooperative_value(&self) -> f64 {
        self.cells.iter().flatten().map(|(a, b)| a + b).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lone agents cannot escape, so `v({i}) = 0`; the pair earns the best
    /// joint total.
    pub fn characteristic_game(&self) -> Result<CharacteristicGame, GameError> {
        let grand = self.cooperative_value();
        CharacteristicGame::new(2, move |c| if c.len() == 2 { grand } else { 0.0 })
    }
}

pub fn step(a1: EscapeAction, a2: EscapeAction) -> (f64, f64) {
    PayoffMatrix::canonical().cell(a1, a2)
}

/// Payoffs when either agent may be absent (`None`): nobody escapes and
/// nobody pays, matching the standalone values of the characteristic game.
pub fn payoffs_with_absent(matrix: &PayoffMatrix, a1: Option<EscapeAction>, a2: Option<EscapeAction>) -> (f64, f64) {
    match (a1, a2) {
        (Some(a1), Some(a2)) => matrix.cell(a1, a2),
        _ => (0.0, 0.0),
    }
}

/// Success cells replaced by `(φ1, φ2)`; failure cells unchanged.
pub fn compensated_matrix(matrix: &PayoffMatrix, phi: &Allocation) -> Result<PayoffMatrix, EnvError> {
    if phi.len() != 2 {
        return Err(EnvError::Invalid(format!("escape room needs a 2-agent allocation, got {}", phi.len())));
    }
    let mut out = *matrix;
    for a1 in [EscapeAction::Door, EscapeAction::Lever] {
        for a2 in [EscapeAction::Door, EscapeAction::Lever] {
            if PayoffMatrix::is_success(a1, a2) {
                out.cells[a1.index()][a2.index()] = (phi[0], phi[1]);
            }
        }
    }
    Ok(out)
}

/// One-step trajectory for the given joint action.
pub fn trajectory(a1: Option<EscapeAction>, a2: Option<EscapeAction>, seed: u64, policies: [&str; 2]) -> TrajectoryRecord {
    let mut env = EscapeRoomEnv::new();
    let actions = [a1.map(Action::Escape), a2.map(Action::Escape)];
    let step = env.step(&actions).expect("escape room accepts any joint action");
    let mut record = TrajectoryRecord::new(TrajectoryHeader {
        env_id: ENV_ID.into(),
        seed: Some(seed),
        agents: policies
            .iter()
            .enumerate()
            .map(|(id, p)| AgentInfo { id, policy: p.to_string() })
            .collect(),
        config: env.config_json(),
        pipeline: None,
    });
    record.steps.push(step);
    record
}

#[derive(Debug, Clone, Default)]
pub struct EscapeRoomEnv {
    matrix: PayoffMatrix,
    done: bool,
}

impl EscapeRoomEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_matrix(matrix: PayoffMatrix) -> Self {
        Self { matrix, done: false }
    }

    pub fn matrix(&self) -> &PayoffMatrix {
        &self.matrix
    }
}

pub(crate) fn escape_action(action: Option<Action>) -> Result<Option<EscapeAction>, EnvError> {
    match action {
        None => Ok(None),
        Some(Action::Escape(a)) => Ok(Some(a)),
        Some(other) => Err(EnvError::ForeignAction { action: other, env: ENV_ID }),
    }
}

impl MultiAgentEnv for EscapeRoomEnv {
    fn env_id(&self) -> &'static str {
        ENV_ID
    }

    fn n_agents(&self) -> usize {
        2
    }

    fn reset(&mut self, _seed: u64) {
        self.done = false;
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot::EscapeRoom { matrix: self.matrix }
    }

    fn live_agents(&self) -> Vec<AgentId> {
        vec![0, 1]
    }

    fn legal_actions(&self, _agent: AgentId) -> Vec<Action> {
        if self.done {
            Vec::new()
        } else {
            vec![Action::Escape(EscapeAction::Door), Action::Escape(EscapeAction::Lever)]
        }
    }

    fn step(&mut self, actions: &[Option<Action>]) -> Result<StepRecord, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        if actions.len() != 2 {
            return Err(EnvError::ActionCount { expected: 2, got: actions.len() });
        }
        let (a1, a2) = (escape_action(actions[0])?, escape_action(actions[1])?);
        let (r1, r2) = payoffs_with_absent(&self.matrix, a1, a2);
        self.done = true;
        Ok(StepRecord {
            t: 0,
            actions: action_names(actions),
            draws: Vec::new(),
            rewards: vec![r1, r2],
            hp: None,
            boss_hp: None,
            terminal: false,
        })
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn terminal_record(&self) -> Option<StepRecord> {
        None
    }

    fn config_json(&self) -> Option<serde_json::Value> {
        Some(serde_json::to_value(self.matrix).expect("matrix serializes"))
    }
}
