#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use shapcoop::env::escape_room::{self, EscapeAction};
use shapcoop::env::raid_battle::{RaidConfig, RaidEnv, Skill};
use shapcoop::runtime::Observation;
use shapcoop::{run_episode, Action, PipelineConfig, Policy, RuntimeError, TrajectoryRecord, Variant};

/// Shapley values by walking every ordering (Heap's algorithm). Slow and
/// deliberately unrelated to the subset-enumeration solver.
pub fn permutation_shapley(n: usize, table: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut phi = vec![0.0; n];
    let mut count = 0u64;
    let mut visit = |order: &[usize]| {
        let mut mask = 0usize;
        for &a in order {
            let before = table[mask];
            mask |= 1 << a;
            phi[a] += table[mask] - before;
        }
        count += 1;
    };
    let mut c = vec![0usize; n];
    visit(&order);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            visit(&order);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    phi.iter().map(|p| p / count as f64).collect()
}

/// Random normalized game table with values in [-10, 10).
pub fn random_table(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..1usize << n).map(|_| rng.random_range(-10.0..10.0)).collect();
    t[0] = 0.0;
    t
}

/// Plays a fixed action list per turn, then passes.
pub struct ScriptPolicy {
    pub agent: usize,
    pub script: Vec<Vec<Option<Skill>>>,
}

impl Policy for ScriptPolicy {
    fn name(&self) -> &str {
        "script"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Option<Action>, RuntimeError> {
        let planned = self.script.get(obs.turn).and_then(|row| row[self.agent]).map(Action::Raid);
        Ok(planned.filter(|a| obs.legal.contains(a)))
    }
}

pub fn std0_config() -> RaidConfig {
    RaidConfig { skill_std: 0.0, ..RaidConfig::default() }
}

pub fn raid_fixture(script: &[Vec<Option<Skill>>]) -> TrajectoryRecord {
    let mut env = RaidEnv::new(std0_config()).unwrap();
    let mut policies: Vec<Box<dyn Policy>> = (0..4)
        .map(|agent| Box::new(ScriptPolicy { agent, script: script.to_vec() }) as Box<dyn Policy>)
        .collect();
    let out = run_episode(&mut env, &mut policies, &PipelineConfig::new(Variant::LlmOnly), 0).unwrap();
    out.trajectory
}

const F: Option<Skill> = Some(Skill::Fireball);
const T: Option<Skill> = Some(Skill::Taunt);
const H: Option<Skill> = Some(Skill::Heal);
const X: Option<Skill> = None;

/// Three scripted turns, nobody dies while acting, boss survives.
///
/// Local rewards: fireball 2, taunt 0.5, heal 0.5, so removing a hero removes
/// exactly its own rewards:
/// hero 0: F F T = 4.5, hero 1: F H F = 4.5, hero 2: T F F = 4.5,
/// hero 3: H F H = 3.0. R(N) = 16.5.
pub fn fixture_a() -> (Vec<Vec<Option<Skill>>>, f64, [f64; 4]) {
    (vec![vec![F, F, T, H], vec![F, H, F, F], vec![T, F, F, H]], 16.5, [4.5, 4.5, 4.5, 3.0])
}

/// Five turns; sixteen 125-point fireballs kill the 2000 HP boss on turn 5.
///
/// Full run (boss hits two heroes per turn, lowest HP first, taunt absorbs):
///   t0 F F T F  hp 700 1000 700 1000           local 6.5
///   t1 F F F F  hp 400 1000 400 1000           local 8
///   t2 F F T F  hp 100 1000 100 1000           local 6.5
///   t3 F F F F  heroes 0 and 2 die             local 8
///   t4 - F - F  boss dies, no counterattack    local 4
///   global 100 · (1 − 2/4) · (1 − 5/10) = 25, R(N) = 58.
/// Without hero 0 or 1 or 3 the boss survives (at most 15 fireballs), so
/// R(N∖i) = 33 − own local: 25, 23, 23. Δ = 33, 35, 35.
/// Without hero 2 nobody taunts: heroes 0 and 1 take every hit, die after
/// acting on t3, and hero 1's t4 fireball never happens:
///   R = 6 + 6 + 6 + 6 + 2 = 26, Δ_2 = 32.
pub fn fixture_b() -> (Vec<Vec<Option<Skill>>>, f64, [f64; 4]) {
    (
        vec![vec![F, F, T, F], vec![F, F, F, F], vec![F, F, T, F], vec![F, F, F, F], vec![X, F, X, F]],
        58.0,
        [33.0, 35.0, 32.0, 35.0],
    )
}

pub fn escape_fixtures() -> Vec<(TrajectoryRecord, [f64; 2])> {
    use EscapeAction::{Door, Lever};
    // Δ_i = R(N) − R({j}); an agent alone collects its solo cell against an
    // absent partner (0 for Lever alone or Door alone).
    vec![
        (escape_room::trajectory(Some(Lever), Some(Door), 0, ["a", "b"]), [9.0, 9.0]),
        (escape_room::trajectory(Some(Door), Some(Door), 1, ["a", "b"]), [-2.0, -2.0]),
        (escape_room::trajectory(Some(Lever), Some(Lever), 2, ["a", "b"]), [-2.0, -2.0]),
        (escape_room::trajectory(None, Some(Door), 3, ["a", "b"]), [0.0, 0.0]),
    ]
}

/// Every row of the published allocation table:
/// (role, code, dec, doc, fix, wev_lo, wev_hi, reward, adjustment).
pub type WevRow = (&'static str, [u64; 4], f64, f64, f64, f64);

pub const BMI: [WevRow; 6] = [
    ("CEO", [0, 3, 0, 0], 7.5, 17.5, 15.0, 0.0),
    ("Counselor", [0, 0, 3, 0], 2.1, 6.4, 3.0, 0.0),
    ("CPO", [0, 1, 4, 0], 5.4, 14.4, 20.0, -5.6),
    ("CTO", [0, 2, 0, 0], 5.0, 11.7, 25.0, -13.3),
    ("Programmer", [45, 0, 0, 3], 30.9, 47.1, 25.0, 5.9),
    ("Reviewer", [7, 0, 0, 3], 11.1, 17.9, 12.0, 0.0),
];

pub const ARTCANVAS: [WevRow; 6] = [
    ("CEO", [0, 2, 0, 0], 4.3, 10.0, 5.0, 0.0),
    ("Counselor", [0, 0, 2, 0], 1.3, 3.8, 5.0, -1.3),
    ("CPO", [0, 1, 6, 0], 5.9, 16.3, 20.0, -3.8),
    ("CTO", [0, 4, 0, 0], 8.6, 20.0, 10.0, 0.0),
    ("Programmer", [41, 0, 0, 0], 26.4, 39.1, 35.0, 0.0),
    ("Reviewer", [1, 0, 0, 2], 15.6, 25.9, 25.0, 0.0),
];
