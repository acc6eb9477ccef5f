//! Four heroes against one boss, at most ten turns.
//!
//! Turn order: heroes act simultaneously (Fireball damages the boss, Heal
//! restores the most injured living hero, Taunt reserves one boss attack),
//! then the boss makes two attacks, then deaths resolve and cooldowns tick.
//! Every Fireball/Heal magnitude comes from its own ChaCha stream keyed by
//! `(seed, turn, hero)`, so removing one hero's action never shifts another
//! hero's draw.
//!
//! Interpretation choices not fixed by the game description:
//! `hero_max_hp` (1000), `skill_std` (10), `taunt_cooldown` (1 turn), the
//! skill means (interval midpoints 125 / 175), and the attack schedule: each
//! taunt absorbs exactly one attack, remaining attacks hit the lowest-HP
//! living heroes not yet targeted this turn (a lone survivor takes both).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{action_names, Action, EnvError, MultiAgentEnv, Snapshot};
use crate::coalition::{AgentId, Coalition};
use crate::trajectory::{StepRecord, TrajectoryRecord};

pub const ENV_ID: &str = "raid_battle";
pub const HEROES: usize = 4;
pub const MAX_TURNS: usize = 10;
const BOSS_ATTACKS_PER_TURN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Skill {
    Taunt,
    Fireball,
    Heal,
}

impl Skill {
    pub const ALL: [Skill; 3] = [Skill::Taunt, Skill::Fireball, Skill::Heal];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalRewards {
    pub fireball: f64,
    pub taunt: f64,
    pub heal: f64,
}

impl Default for LocalRewards {
    fn default() -> Self {
        Self { fireball: 2.0, taunt: 0.5, heal: 0.5 }
    }
}

impl LocalRewards {
    pub fn get(&self, skill: Skill) -> f64 {
        match skill {
            Skill::Fireball => self.fireball,
            Skill::Taunt => self.taunt,
            Skill::Heal => self.heal,
        }
    }
}

/// Raid parameters. Omitted JSON fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaidConfig {
    /// 1, 2 or 3; boss HP 2000 / 2500 / 3000.
    pub level: u8,
    pub max_turns: usize,
    pub seed: u64,
    /// Must lie in the open interval (100, 150).
    pub fireball_mean: f64,
    /// Must lie in the open interval (150, 200).
    pub heal_mean: f64,
    pub skill_std: f64,
    pub hero_max_hp: f64,
    pub boss_attack: f64,
    pub local_reward: LocalRewards,
    pub taunt_cooldown: usize,
}

impl Default for RaidConfig {
    fn default() -> Self {
        Self {
            level: 1,
            max_turns: MAX_TURNS,
            seed: 0,
            fireball_mean: 125.0,
            heal_mean: 175.0,
            skill_std: 10.0,
            hero_max_hp: 1000.0,
            boss_attack: 300.0,
            local_reward: LocalRewards::default(),
            taunt_cooldown: 1,
        }
    }
}

impl RaidConfig {
    pub fn level(level: u8) -> Self {
        Self { level, ..Self::default() }
    }

    pub fn boss_max_hp(&self) -> f64 {
        match self.level {
            1 => 2000.0,
            2 => 2500.0,
            _ => 3000.0,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if !(1..=3).contains(&self.level) {
            return bad(format!("level must be 1, 2 or 3, got {}", self.level));
        }
        if self.max_turns != MAX_TURNS {
            return bad(format!("max_turns is fixed at {MAX_TURNS}"));
        }
        if !(self.fireball_mean > 100.0 && self.fireball_mean < 150.0) {
            return bad(format!("fireball_mean {} outside (100, 150)", self.fireball_mean));
        }
        if !(self.heal_mean > 150.0 && self.heal_mean < 200.0) {
            return bad(format!("heal_mean {} outside (150, 200)", self.heal_mean));
        }
        if !(self.skill_std >= 0.0 && self.skill_std.is_finite()) {
            return bad("skill_std must be a finite non-negative number".into());
        }
        if !(self.hero_max_hp > 0.0 && self.hero_max_hp.is_finite()) {
            return bad("hero_max_hp must be positive".into());
        }
        if !(self.boss_attack > 0.0 && self.boss_attack.is_finite()) {
            return bad("boss_attack must be positive".into());
        }
        if self.local_reward != LocalRewards::default() {
            return bad("local rewards are fixed at fireball 2, taunt 0.5, heal 0.5".into());
        }
        Ok(())
    }

    fn mean(&self, skill: Skill) -> f64 {
        match skill {
            Skill::Fireball => self.fireball_mean,
            Skill::Heal => self.heal_mean,
            Skill::Taunt => 0.0,
        }
    }
}

/// Magnitude for `hero`'s Fireball/Heal on `turn`, clamped at zero.
pub fn skill_draw(config: &RaidConfig, turn: usize, hero: AgentId, skill: Skill) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream((turn * HEROES + hero) as u64);
    let normal = Normal::new(config.mean(skill), config.skill_std).expect("validated std");
    normal.sample(&mut rng).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeroState {
    pub hp: f64,
    pub max_hp: f64,
    pub alive: bool,
    /// Remaining turns per skill, indexed Taunt / Fireball / Heal.
    pub cooldowns: [usize; 3],
}

impl HeroState {
    pub fn can_use(&self, skill: Skill) -> bool {
        self.alive && self.cooldowns[skill.index()] == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub damage_dealt: f64,
    pub healing_done: f64,
    pub taunt_blocked: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaidState {
    pub heroes: Vec<HeroState>,
    pub boss_hp: f64,
    /// Completed turns.
    pub turn: usize,
    pub ledger: Vec<Ledger>,
}

impl RaidState {
    pub fn new(config: &RaidConfig) -> Self {
        let hero = HeroState { hp: config.hero_max_hp, max_hp: config.hero_max_hp, alive: true, cooldowns: [0; 3] };
        Self {
            heroes: vec![hero; HEROES],
            boss_hp: config.boss_max_hp(),
            turn: 0,
            ledger: vec![Ledger::default(); HEROES],
        }
    }

    pub fn is_won(&self) -> bool {
        self.boss_hp <= 0.0
    }

    pub fn dead_count(&self) -> usize {
        self.heroes.iter().filter(|h| !h.alive).count()
    }

    pub fn is_over(&self, config: &RaidConfig) -> bool {
        self.is_won() || self.dead_count() == HEROES || self.turn >= config.max_turns
    }

    pub fn hp(&self) -> Vec<f64> {
        self.heroes.iter().map(|h| h.hp).collect()
    }

    /// Living hero with the largest HP deficit, lowest index on ties.
    pub fn most_injured(&self) -> Option<AgentId> {
        let mut best: Option<(AgentId, f64)> = None;
        for (i, h) in self.heroes.iter().enumerate().filter(|(_, h)| h.alive) {
            let deficit = h.max_hp - h.hp;
            if best.is_none_or(|(_, d)| deficit > d) {
                best = Some((i, deficit));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Heroes the boss would hit this turn given the taunters, in attack order.
    /// The flag marks attacks absorbed by a taunt.
    pub fn boss_targets(&self, taunters: &[AgentId]) -> Vec<(AgentId, bool)> {
        let mut hits = Vec::with_capacity(BOSS_ATTACKS_PER_TURN);
        let mut targeted = [false; HEROES];
        for &h in taunters.iter().filter(|&&h| self.heroes[h].alive) {
            if hits.len() == BOSS_ATTACKS_PER_TURN {
                break;
            }
            hits.push((h, true));
            targeted[h] = true;
        }
        while hits.len() < BOSS_ATTACKS_PER_TURN {
            let lowest = |allow_repeat: bool| {
                self.heroes
                    .iter()
                    .enumerate()
                    .filter(|(i, h)| h.alive && (allow_repeat || !targeted[*i]))
                    .min_by(|a, b| a.1.hp.total_cmp(&b.1.hp).then(a.0.cmp(&b.0)))
                    .map(|(i, _)| i)
            };
            let Some(target) = lowest(false).or_else(|| lowest(true)) else { break };
            hits.push((target, false));
            targeted[target] = true;
        }
        hits
    }
}

/// Where Fireball/Heal magnitudes come from.
#[derive(Debug, Clone, Copy)]
pub enum DrawSource<'a> {
    Seeded,
    Logged(&'a [Option<f64>]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaidStep {
    pub state: RaidState,
    pub rewards: Vec<f64>,
    pub draws: Vec<Option<f64>>,
}

/// Advances one turn. `actions[h] == None` is a no-op.
pub fn step(
    config: &RaidConfig,
    state: &RaidState,
    actions: &[Option<Skill>],
    draws: DrawSource<'_>,
) -> Result<RaidStep, EnvError> {
    if state.is_over(config) {
        return Err(EnvError::EpisodeOver);
    }
    if actions.len() != HEROES {
        return Err(EnvError::ActionCount { expected: HEROES, got: actions.len() });
    }
    for (h, a) in actions.iter().enumerate() {
        if let Some(skill) = a {
            if !state.heroes[h].alive {
                return Err(EnvError::DeadHeroAction(h));
            }
            if !state.heroes[h].can_use(*skill) {
                return Err(EnvError::SkillOnCooldown { hero: h, skill: *skill });
            }
        }
    }

    let mut next = state.clone();
    let mut rewards = vec![0.0; HEROES];
    let mut used_draws = vec![None; HEROES];
    let heal_target = state.most_injured();
    let mut taunters = Vec::new();

    for (h, a) in actions.iter().enumerate() {
        let Some(skill) = *a else { continue };
        rewards[h] = config.local_reward.get(skill);
        if skill == Skill::Taunt {
            taunters.push(h);
            next.heroes[h].cooldowns[Skill::Taunt.index()] = config.taunt_cooldown + 1;
            continue;
        }
        let amount = match draws {
            DrawSource::Seeded => skill_draw(config, state.turn, h, skill),
            DrawSource::Logged(logged) => logged
                .get(h)
                .copied()
                .flatten()
                .ok_or_else(|| EnvError::Invalid(format!("missing logged draw for hero {h}")))?,
        };
        used_draws[h] = Some(amount);
        match skill {
            Skill::Fireball => {
                let dealt = amount.min(next.boss_hp);
                next.boss_hp -= dealt;
                next.ledger[h].damage_dealt += dealt;
            }
            Skill::Heal => {
                if let Some(t) = heal_target {
                    let target = &mut next.heroes[t];
                    let restored = amount.min(target.max_hp - target.hp);
                    target.hp += restored;
                    next.ledger[h].healing_done += restored;
                }
            }
            Skill::Taunt => unreachable!(),
        }
    }

    if next.boss_hp > 0.0 {
        for (target, absorbed) in next.boss_targets(&taunters) {
            let hero = &mut next.heroes[target];
            hero.hp = (hero.hp - config.boss_attack).max(0.0);
            if absorbed {
                next.ledger[target].taunt_blocked += config.boss_attack;
            }
        }
        for hero in &mut next.heroes {
            if hero.hp <= 0.0 {
                hero.alive = false;
            }
        }
    }
    for hero in &mut next.heroes {
        for c in &mut hero.cooldowns {
            *c = c.saturating_sub(1);
        }
    }
    next.turn += 1;
    Ok(RaidStep { state: next, rewards, draws: used_draws })
}

/// Shared reward on victory: `100 · (1 − dead/heroes) · (1 − turns/max_turns)`.
pub fn global_reward(dead: usize, total_heroes: usize, turns_used: usize, max_turns: usize) -> f64 {
    debug_assert!(dead <= total_heroes && turns_used <= max_turns && total_heroes > 0 && max_turns > 0);
    100.0 * (1.0 - dead as f64 / total_heroes as f64) * (1.0 - turns_used as f64 / max_turns as f64)
}

/// Terminal reward for a finished state; zero unless the boss is dead.
pub fn terminal_reward(config: &RaidConfig, state: &RaidState) -> f64 {
    if state.is_won() {
        global_reward(state.dead_count(), HEROES, state.turn, config.max_turns)
    } else {
        0.0
    }
}

fn terminal_step(config: &RaidConfig, state: &RaidState) -> StepRecord {
    let share = terminal_reward(config, state) / HEROES as f64;
    StepRecord {
        t: state.turn,
        actions: Vec::new(),
        draws: Vec::new(),
        rewards: vec![share; HEROES],
        hp: None,
        boss_hp: None,
        terminal: true,
    }
}

pub(crate) fn raid_skill(action: Option<Action>) -> Result<Option<Skill>, EnvError> {
    match action {
        None => Ok(None),
        Some(Action::Raid(s)) => Ok(Some(s)),
        Some(other) => Err(EnvError::ForeignAction { action: other, env: ENV_ID }),
    }
}

#[derive(Debug, Clone)]
pub struct RaidEnv {
    config: RaidConfig,
    state: RaidState,
}

impl RaidEnv {
    pub fn new(config: RaidConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let state = RaidState::new(&config);
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &RaidConfig {
        &self.config
    }

    pub fn state(&self) -> &RaidState {
        &self.state
    }
}

impl MultiAgentEnv for RaidEnv {
    fn env_id(&self) -> &'static str {
        ENV_ID
    }

    fn n_agents(&self) -> usize {
        HEROES
    }

    fn reset(&mut self, seed: u64) {
        self.config.seed = seed;
        self.state = RaidState::new(&self.config);
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot::Raid { config: self.config.clone(), state: self.state.clone() }
    }

    fn live_agents(&self) -> Vec<AgentId> {
        (0..HEROES).filter(|&h| self.state.heroes[h].alive).collect()
    }

    fn legal_actions(&self, agent: AgentId) -> Vec<Action> {
        if self.state.is_over(&self.config) {
            return Vec::new();
        }
        let hero = &self.state.heroes[agent];
        Skill::ALL.into_iter().filter(|&s| hero.can_use(s)).map(Action::Raid).collect()
    }

    fn step(&mut self, actions: &[Option<Action>]) -> Result<StepRecord, EnvError> {
        let skills = actions.iter().map(|&a| raid_skill(a)).collect::<Result<Vec<_>, _>>()?;
        let t = self.state.turn;
        let out = step(&self.config, &self.state, &skills, DrawSource::Seeded)?;
        self.state = out.state;
        Ok(StepRecord {
            t,
            actions: action_names(actions),
            draws: out.draws,
            rewards: out.rewards,
            hp: Some(self.state.hp()),
            boss_hp: Some(self.state.boss_hp),
            terminal: false,
        })
    }

    fn is_done(&self) -> bool {
        self.state.is_over(&self.config)
    }

    fn terminal_record(&self) -> Option<StepRecord> {
        self.is_done().then(|| terminal_step(&self.config, &self.state))
    }

    fn config_json(&self) -> Option<serde_json::Value> {
        Some(serde_json::to_value(&self.config).expect("config serializes"))
    }
}

/// Result of re-running logged actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub state: RaidState,
    /// Local rewards plus the terminal reward if the boss died.
    pub total_reward: f64,
    pub global_reward: f64,
}

pub fn config_from_trajectory(traj: &TrajectoryRecord) -> Result<RaidConfig, EnvError> {
    if traj.env_id() != ENV_ID {
        return Err(EnvError::EnvMismatch { expected: ENV_ID, found: traj.env_id().to_string() });
    }
    let mut config: RaidConfig = match &traj.header.config {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| EnvError::InvalidConfig(e.to_string()))?,
        None => RaidConfig::default(),
    };
    if let Some(seed) = traj.seed() {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

/// Replays the logged actions of `members` with logged draws; everyone else
/// (and any hero already dead in the replay) does nothing. Stops when the
/// replayed episode ends or the log runs out.
pub fn replay(traj: &TrajectoryRecord, members: Coalition) -> Result<ReplayOutcome, EnvError> {
    let config = config_from_trajectory(traj)?;
    let mut state = RaidState::new(&config);
    let mut total = 0.0;
    for record in traj.action_steps() {
        if state.is_over(&config) {
            break;
        }
        if record.actions.len() != HEROES {
            return Err(EnvError::ActionCount { expected: HEROES, got: record.actions.len() });
        }
        let mut skills = Vec::with_capacity(HEROES);
        for (h, name) in record.actions.iter().enumerate() {
            let skill = match name {
                Some(n) if members.contains(h) && state.heroes[h].alive => raid_skill(Some(Action::from_name(n)?))?,
                _ => None,
            };
            skills.push(skill);
        }
        let out = step(&config, &state, &skills, DrawSource::Logged(&record.draws))?;
        total += out.rewards.iter().sum::<f64>();
        state = out.state;
    }
    let global = terminal_reward(&config, &state);
    Ok(ReplayOutcome { state, total_reward: total + global, global_reward: global })
}

/// Per-hero damage / healing / absorbed-damage totals of a logged episode.
pub fn contribution_ledger(traj: &TrajectoryRecord) -> Result<Vec<Ledger>, EnvError> {
    if traj.is_empty() {
        config_from_trajectory(traj)?;
        return Ok(vec![Ledger::default(); HEROES]);
    }
    Ok(replay(traj, Coalition::grand(HEROES))?.state.ledger)
}
