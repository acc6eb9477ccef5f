//! Characteristic-function games and Shapley-value credit assignment.
//!
//! Coalitions are bitmasks over `0..n`. Exact values enumerate all `2^n`
//! coalitions once (memoized) and weight each marginal contribution by
//! `|C|!(n-|C|-1)!/n!`; larger games go through Monte Carlo permutation
//! sampling.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of an agent inside a game, `0..n`.
pub type AgentId = usize;

/// Largest player count a [`Coalition`] bitmask can hold.
pub const MAX_PLAYERS: usize = 64;

/// Default limit for exact enumeration; `2^16` oracle calls.
pub const DEFAULT_ENUMERATION_CAP: usize = 16;

/// Tolerance used when comparing allocation totals.
pub const TOTAL_TOLERANCE: f64 = 1e-9;

const SAMPLING_CHUNK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("a game needs between 1 and {MAX_PLAYERS} players, got {0}")]
    PlayerCount(usize),
    #[error("value of the empty coalition must be 0, got {0}")]
    NotNormalized(f64),
    #[error("agent {agent} is already a member of the coalition")]
    AgentInCoalition { agent: AgentId },
    #[error("agent {agent} is out of range for a {n}-player game")]
    AgentOutOfRange { agent: AgentId, n: usize },
    #[error("coalition {0} contains players outside the game")]
    CoalitionOutOfRange(Coalition),
    #[error("{n} players exceeds the exact enumeration cap of {cap}; use shapley_sampled")]
    EnumerationCap { n: usize, cap: usize },
    #[error("games have different player counts ({0} vs {1})")]
    PlayerCountMismatch(usize, usize),
    #[error("value oracle returned a non-finite value {value} for coalition {coalition}")]
    NonFinite { coalition: Coalition, value: f64 },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("allocations have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("allocation entry {index} is not finite")]
    NonFiniteAllocation { index: usize },
    #[error("infeasible settlement: realized total {realized} differs from target total {target}")]
    TotalsMismatch { realized: f64, target: f64 },
    #[error("cannot normalize an allocation whose total is zero")]
    DegenerateSplit,
}

/// A set of agents stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coalition(u64);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub fn from_bits(bits: u64) -> Self {
        Coalition(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// All agents `0..n`.
    pub fn grand(n: usize) -> Self {
        assert!(n <= MAX_PLAYERS);
        if n == MAX_PLAYERS {
            Coalition(u64::MAX)
        } else {
            Coalition((1u64 << n) - 1)
        }
    }

    pub fn singleton(agent: AgentId) -> Self {
        assert!(agent < MAX_PLAYERS);
        Coalition(1u64 << agent)
    }

    pub fn from_members<I: IntoIterator<Item = AgentId>>(members: I) -> Self {
        members.into_iter().fold(Coalition::EMPTY, Coalition::with)
    }

    pub fn contains(self, agent: AgentId) -> bool {
        agent < MAX_PLAYERS && self.0 & (1u64 << agent) != 0
    }

    #[must_use]
    pub fn with(self, agent: AgentId) -> Self {
        Coalition(self.0 | Self::singleton(agent).0)
    }

    #[must_use]
    pub fn without(self, agent: AgentId) -> Self {
        Coalition(self.0 & !Self::singleton(agent).0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }

    /// Members in increasing index order.
    pub fn members(self) -> impl Iterator<Item = AgentId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let idx = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(idx)
            }
        })
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, m) in self.members().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{m}")?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coalition{self}")
    }
}

type ValueOracle = dyn Fn(Coalition) -> f64 + Send + Sync;

/// A cooperative game `(n, v)` with `v(∅) = 0`.
///
/// The oracle must be pure: the solvers may call it from several threads and
/// in any order.
#[derive(Clone)]
pub struct CharacteristicGame {
    n: usize,
    oracle: Arc<ValueOracle>,
}

impl fmt::Debug for CharacteristicGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CharacteristicGame").field("n", &self.n).finish_non_exhaustive()
    }
}

impl CharacteristicGame {
    pub fn new<F>(n: usize, value: F) -> Result<Self, GameError>
    where
        F: Fn(Coalition) -> f64 + Send + Sync + 'static,
    {
        if n == 0 || n > MAX_PLAYERS {
            return Err(GameError::PlayerCount(n));
        }
        let empty = value(Coalition::EMPTY);
        if empty != 0.0 {
            return Err(GameError::NotNormalized(empty));
        }
        Ok(Self { n, oracle: Arc::new(value) })
    }

    /// Game backed by a dense table indexed by coalition bitmask.
    pub fn from_table(n: usize, values: Vec<f64>) -> Result<Self, GameError> {
        if n == 0 || n > 30 {
            return Err(GameError::PlayerCount(n));
        }
        if values.len() != 1usize << n {
            return Err(GameError::LengthMismatch(values.len(), 1usize << n));
        }
        let values = Arc::new(values);
        Self::new(n, move |c| values[c.bits() as usize])
    }

    /// `v(C) = Σ_{j∈C} w_j`.
    pub fn additive(weights: Vec<f64>) -> Result<Self, GameError> {
        let n = weights.len();
        Self::new(n, move |c| c.members().map(|j| weights[j]).sum())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grand_coalition(&self) -> Coalition {
        Coalition::grand(self.n)
    }

    pub fn value(&self, coalition: Coalition) -> f64 {
        debug_assert!(coalition.is_subset_of(self.grand_coalition()));
        (self.oracle)(coalition)
    }

    /// The game whose value oracle is the sum of both oracles.
    pub fn combine(&self, other: &CharacteristicGame) -> Result<Self, GameError> {
        if self.n != other.n {
            return Err(GameError::PlayerCountMismatch(self.n, other.n));
        }
        let (a, b) = (self.oracle.clone(), other.oracle.clone());
        Self::new(self.n, move |c| a(c) + b(c))
    }

    /// Evaluates every coalition once; index is the coalition bitmask.
    pub fn tabulate(&self) -> Result<Vec<f64>, GameError> {
        if self.n > 30 {
            return Err(GameError::EnumerationCap { n: self.n, cap: 30 });
        }
        let table: Vec<f64> = (0..1u64 << self.n)
            .into_par_iter()
            .map(|bits| (self.oracle)(Coalition(bits)))
            .collect();
        if let Some((bits, value)) = table.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GameError::NonFinite { coalition: Coalition(bits as u64), value: *value });
        }
        Ok(table)
    }

    fn check_agent(&self, agent: AgentId) -> Result<(), GameError> {
        if agent >= self.n {
            Err(GameError::AgentOutOfRange { agent, n: self.n })
        } else {
            Ok(())
        }
    }
}

/// Per-agent payoff vector in the host environment's utility units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Allocation(Vec<f64>);

impl Allocation {
    pub fn new(payoffs: Vec<f64>) -> Result<Self, GameError> {
        if let Some(index) = payoffs.iter().position(|p| !p.is_finite()) {
            return Err(GameError::NonFiniteAllocation { index });
        }
        Ok(Allocation(payoffs))
    }

    pub fn zeros(n: usize) -> Self {
        Allocation(vec![0.0; n])
    }

    pub fn payoffs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Each entry as a percentage of the total.
    pub fn shares_percent(&self) -> Result<Vec<f64>, GameError> {
        let total = self.total();
        if total == 0.0 {
            return Err(GameError::DegenerateSplit);
        }
        Ok(self.0.iter().map(|p| 100.0 * p / total).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Allocation {
    type Error = GameError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Allocation::new(v)
    }
}

impl From<Allocation> for Vec<f64> {
    fn from(a: Allocation) -> Self {
        a.0
    }
}

impl std::ops::Index<AgentId> for Allocation {
    type Output = f64;

    fn index(&self, i: AgentId) -> &f64 {
        &self.0[i]
    }
}

/// `v(C ∪ {i}) − v(C)`.
pub fn marginal_contribution(
    game: &CharacteristicGame,
    agent: AgentId,
    coalition: Coalition,
) -> Result<f64, GameError> {
    game.check_agent(agent)?;
    if !coalition.is_subset_of(game.grand_coalition()) {
        return Err(GameError::CoalitionOutOfRange(coalition));
    }
    if coalition.contains(agent) {
        return Err(GameError::AgentInCoalition { agent });
    }
    Ok(game.value(coalition.with(agent)) - game.value(coalition))
}

/// Shapley weight `s!(n-s-1)!/n!` for every coalition size `s` in `0..n`.
///
/// Written as `1 / (n · C(n-1, s))`; the binomial is an exact integer for
/// every `n` the enumerator accepts.
pub fn coalition_weights(n: usize) -> Vec<f64> {
    assert!(n >= 1);
    let mut binom: u128 = 1;
    let mut out = Vec::with_capacity(n);
    for s in 0..n {
        if s > 0 {
            binom = binom * (n - s) as u128 / s as u128;
        }
        out.push(1.0 / (n as f64 * binom as f64));
    }
    out
}

/// Exact Shapley values by subset enumeration.
#[derive(Debug, Clone, Copy)]
pub struct ExactSolver {
    pub cap: usize,
}

impl Default for ExactSolver {
    fn default() -> Self {
        Self { cap: DEFAULT_ENUMERATION_CAP }
    }
}

impl ExactSolver {
    pub fn with_cap(cap: usize) -> Self {
        Self { cap: cap.min(30) }
    }

    pub fn solve(&self, game: &CharacteristicGame) -> Result<Allocation, GameError> {
        let n = game.n();
        if n > self.cap {
            return Err(GameError::EnumerationCap { n, cap: self.cap });
        }
        let table = game.tabulate()?;
        let weights = coalition_weights(n);
        let phi = (0..n)
            .into_par_iter()
            .map(|i| {
                let bit = 1usize << i;
                let mut acc = 0.0;
                for mask in 0..table.len() {
                    if mask & bit == 0 {
                        let size = mask.count_ones() as usize;
                        acc += weights[size] * (table[mask | bit] - table[mask]);
                    }
                }
                acc
            })
            .collect();
        Allocation::new(phi)
    }
}

pub fn shapley_exact(game: &CharacteristicGame) -> Result<Allocation, GameError> {
    ExactSolver::default().solve(game)
}

/// Closed form for two agents: average of standalone value and marginal
/// contribution to the other agent.
pub fn shapley_two_agent(v1: f64, v2: f64, v12: f64) -> (f64, f64) {
    (0.5 * v1 + 0.5 * (v12 - v2), 0.5 * v2 + 0.5 * (v12 - v1))
}

/// Monte Carlo estimate over `samples` uniformly random orderings.
///
/// Permutation `k` draws from its own ChaCha stream (`seed`, stream `k`), and
/// partial sums are reduced in a fixed chunk order, so the result does not
/// depend on the rayon thread count.
pub fn shapley_sampled(
    game: &CharacteristicGame,
    samples: usize,
    seed: u64,
) -> Result<Allocation, GameError> {
    if samples == 0 {
        return Err(GameError::NoSamples);
    }
    let n = game.n();
    let chunks = samples.div_ceil(SAMPLING_CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * SAMPLING_CHUNK;
            let end = (start + SAMPLING_CHUNK).min(samples);
            let mut sums = vec![0.0; n];
            let mut order: Vec<AgentId> = (0..n).collect();
            for k in start..end {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                order.sort_unstable();
                order.shuffle(&mut rng);
                let mut coalition = Coalition::EMPTY;
                let mut last = 0.0;
                for &agent in &order {
                    coalition = coalition.with(agent);
                    let v = game.value(coalition);
                    sums[agent] += v - last;
                    last = v;
                }
            }
            sums
        })
        .collect();
    let mut total = vec![0.0; n];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    Allocation::new(total.into_iter().map(|s| s / samples as f64).collect())
}

/// Pairwise payments that move realized payoffs onto a target allocation.
///
/// `amount(i, j)` is what agent `i` pays agent `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    transfers: Vec<Vec<f64>>,
}

impl TransferPlan {
    pub fn empty(n: usize) -> Self {
        Self { transfers: vec![vec![0.0; n]; n] }
    }

    pub fn n(&self) -> usize {
        self.transfers.len()
    }

    pub fn amount(&self, from: AgentId, to: AgentId) -> f64 {
        self.transfers[from][to]
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.transfers
    }

    /// Nonzero `(from, to, amount)` entries in index order.
    pub fn entries(&self) -> Vec<(AgentId, AgentId, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.transfers.iter().enumerate() {
            for (j, &amt) in row.iter().enumerate() {
                if amt != 0.0 {
                    out.push((i, j, amt));
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.transfers.iter().flatten().all(|&a| a == 0.0)
    }

    pub fn total_volume(&self) -> f64 {
        self.transfers.iter().flatten().sum()
    }

    /// Net amount received by each agent.
    pub fn net(&self) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|k| {
                let received: f64 = (0..n).map(|i| self.transfers[i][k]).sum();
                let paid: f64 = self.transfers[k].iter().sum();
                received - paid
            })
            .collect()
    }

    pub fn apply(&self, realized: &Allocation) -> Result<Allocation, GameError> {
        if realized.len() != self.n() {
            return Err(GameError::LengthMismatch(realized.len(), self.n()));
        }
        Allocation::new(realized.payoffs().iter().zip(self.net()).map(|(r, d)| r + d).collect())
    }
}

/// Settles `realized` onto `target`: agents in surplus pay agents in deficit,
/// both visited in index order. Total volume equals the summed surplus, the
/// minimum any plan can achieve.
pub fn side_payments(realized: &Allocation, target: &Allocation) -> Result<TransferPlan, GameError> {
    if realized.len() != target.len() {
        return Err(GameError::LengthMismatch(realized.len(), target.len()));
    }
    let (rt, tt) = (realized.total(), target.total());
    if (rt - tt).abs() > TOTAL_TOLERANCE * rt.abs().max(tt.abs()).max(1.0) {
        return Err(GameError::TotalsMismatch { realized: rt, target: tt });
    }
    let n = realized.len();
    let mut plan = TransferPlan::empty(n);
    let mut surplus: Vec<f64> = (0..n).map(|i| realized[i] - target[i]).collect();
    let eps = 1e-12;
    let mut payer = 0;
    let mut payee = 0;
    loop {
        while payer < n && surplus[payer] <= eps {
            payer += 1;
        }
        while payee < n && surplus[payee] >= -eps {
            payee += 1;
        }
        if payer == n || payee == n {
            break;
        }
        let amount = surplus[payer].min(-surplus[payee]);
        plan.transfers[payer][payee] += amount;
        surplus[payer] -= amount;
        surplus[payee] += amount;
    }
    Ok(plan)
}
