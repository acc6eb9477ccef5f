//! Weighted earned value: per-role contribution ranges from artifact counts,
//! and the smallest change that moves an assigned reward into range.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WevError {
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("a contribution matrix needs at least one role")]
    NoRoles,
    #[error("duplicate role {0:?}")]
    DuplicateRole(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("reward for {role:?} must be a finite non-negative percentage, got {value}")]
    InvalidReward { role: String, value: f64 },
    #[error("expected {expected} rewards, got {got}")]
    RewardCount { expected: usize, got: usize },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Artifact {
    Code,
    Dec,
    Doc,
    Fix,
}

impl Artifact {
    pub const ALL: [Artifact; 4] = [Artifact::Code, Artifact::Dec, Artifact::Doc, Artifact::Fix];

    pub fn name(self) -> &'static str {
        match self {
            Artifact::Code => "code",
            Artifact::Dec => "dec",
            Artifact::Doc => "doc",
            Artifact::Fix => "fix",
        }
    }
}

/// Artifact counts per role, columns in [`Artifact::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMatrix {
    roles: Vec<String>,
    counts: Vec<[u64; 4]>,
}

impl ContributionMatrix {
    pub fn new(rows: Vec<(String, [u64; 4])>) -> Result<Self, WevError> {
        if rows.is_empty() {
            return Err(WevError::NoRoles);
        }
        let mut roles = Vec::with_capacity(rows.len());
        let mut counts = Vec::with_capacity(rows.len());
        for (role, c) in rows {
            if roles.contains(&role) {
                return Err(WevError::DuplicateRole(role));
            }
            roles.push(role);
            counts.push(c);
        }
        Ok(Self { roles, counts })
    }

    pub fn roles(&self) -> &[String] {
        &self.roles
    }

    pub fn counts(&self, role: usize) -> [u64; 4] {
        self.counts[role]
    }

    pub fn index_of(&self, role: &str) -> Result<usize, WevError> {
        self.roles.iter().position(|r| r == role).ok_or_else(|| WevError::UnknownRole(role.to_string()))
    }

    pub fn column_total(&self, artifact: Artifact) -> u64 {
        self.counts.iter().map(|c| c[artifact as usize]).sum()
    }

    /// `θ[r][i] / Σ_k θ[k][i]`, zero when nobody produced artifact `i`.
    pub fn share(&self, role: usize, artifact: Artifact) -> f64 {
        let total = self.column_total(artifact);
        if total == 0 {
            0.0
        } else {
            self.counts[role][artifact as usize] as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRange {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightRanges {
    pub code: WeightRange,
    pub dec: WeightRange,
    pub doc: WeightRange,
    pub fix: WeightRange,
}

impl Default for WeightRanges {
    fn default() -> Self {
        Self {
            code: WeightRange { lo: 0.27, hi: 0.40 },
            dec: WeightRange { lo: 0.15, hi: 0.35 },
            doc: WeightRange { lo: 0.05, hi: 0.15 },
            fix: WeightRange { lo: 0.15, hi: 0.25 },
        }
    }
}

impl WeightRanges {
    pub fn get(&self, artifact: Artifact) -> WeightRange {
        match artifact {
            Artifact::Code => self.code,
            Artifact::Dec => self.dec,
            Artifact::Doc => self.doc,
            Artifact::Fix => self.fix,
        }
    }

    pub fn validate(&self) -> Result<(), WevError> {
        for a in Artifact::ALL {
            let w = self.get(a);
            if !(0.0 <= w.lo && w.lo <= w.hi && w.hi <= 1.0) {
                return Err(WevError::InvalidWeights(format!("{} range [{}, {}] is not within 0 <= lo <= hi <= 1", a.name(), w.lo, w.hi)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, WevError> {
        let w: WeightRanges = serde_json::from_str(text)
            .map_err(|e| WevError::Parse { line: e.line() as u64, message: format!("column {}: {e}", e.column()) })?;
        w.validate()?;
        Ok(w)
    }
}

/// WEV interval for one role, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WevRange {
    pub lo: f64,
    pub hi: f64,
}

impl WevRange {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

pub fn wev_range(m: &ContributionMatrix, w: &WeightRanges, role: &str) -> Result<WevRange, WevError> {
    w.validate()?;
    Ok(range_at(m, w, m.index_of(role)?))
}

fn range_at(m: &ContributionMatrix, w: &WeightRanges, r: usize) -> WevRange {
    let (mut lo, mut hi) = (0.0, 0.0);
    for a in Artifact::ALL {
        let s = m.share(r, a);
        lo += s * w.get(a).lo;
        hi += s * w.get(a).hi;
    }
    WevRange { lo: 100.0 * lo, hi: 100.0 * hi }
}

/// Signed distance from `reward_pct` to the nearest bound of `range`
/// (zero inside it). Positive means the role deserves more.
pub fn minimal_adjustment(reward_pct: f64, range: WevRange) -> f64 {
    if reward_pct < range.lo {
        range.lo - reward_pct
    } else if reward_pct > range.hi {
        range.hi - reward_pct
    } else {
        0.0
    }
}

/// One decimal, halves away from zero. The nudge absorbs representation
/// error such as `16.25` arriving as `16.249999999999996`.
pub fn round1(x: f64) -> f64 {
    let scaled = x * 10.0;
    let nudged = scaled + scaled.signum() * 1e-9;
    let r = nudged.round() / 10.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub role: String,
    pub counts: [u64; 4],
    pub range: WevRange,
    pub reward_pct: f64,
    /// Computed from the unrounded range.
    pub adjustment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WevReport {
    pub rows: Vec<ReportRow>,
}

pub fn report(m: &ContributionMatrix, w: &WeightRanges, rewards: &[f64]) -> Result<WevReport, WevError> {
    w.validate()?;
    if rewards.len() != m.roles().len() {
        return Err(WevError::RewardCount { expected: m.roles().len(), got: rewards.len() });
    }
    let mut rows = Vec::with_capacity(rewards.len());
    for (r, (role, &reward)) in m.roles().iter().zip(rewards).enumerate() {
        if !(reward >= 0.0 && reward.is_finite()) {
            return Err(WevError::InvalidReward { role: role.clone(), value: reward });
        }
        let range = range_at(m, w, r);
        rows.push(ReportRow {
            role: role.clone(),
            counts: m.counts(r),
            range,
            reward_pct: reward,
            adjustment: minimal_adjustment(reward, range),
        });
    }
    Ok(WevReport { rows })
}

fn fmt1(x: f64) -> String {
    format!("{:.1}", round1(x))
}

fn fmt_adj(x: f64) -> String {
    let r = round1(x);
    if r > 0.0 {
        format!("+{r:.1}")
    } else if r < 0.0 {
        format!("{r:.1}")
    } else {
        "0".into()
    }
}

fn fmt_reward(x: f64) -> String {
    format!("{x}")
}

impl WevReport {
    pub const CSV_HEADER: [&'static str; 9] =
        ["role", "code", "dec", "doc", "fix", "wev_lo", "wev_hi", "reward_pct", "adjustment"];

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER).expect("in-memory write");
        for row in &self.rows {
            let mut rec = vec![row.role.clone()];
            rec.extend(row.counts.iter().map(u64::to_string));
            rec.extend([fmt1(row.range.lo), fmt1(row.range.hi), fmt_reward(row.reward_pct), fmt1(row.adjustment)]);
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_text(&self) -> String {
        let header = ["Role", "Code", "Dec.", "Docs", "Fixes", "WEV(%)", "Reward(%)", "Adj.(%)"];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for row in &self.rows {
            let mut line = vec![row.role.clone()];
            line.extend(row.counts.iter().map(u64::to_string));
            line.push(format!("{}-{}", fmt1(row.range.lo), fmt1(row.range.hi)));
            line.push(fmt_reward(row.reward_pct));
            line.push(fmt_adj(row.adjustment));
            cells.push(line);
        }
        let widths: Vec<usize> =
            (0..header.len()).map(|c| cells.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for line in &cells {
            let mut text = String::new();
            for (c, cell) in line.iter().enumerate() {
                if c == 0 {
                    let _ = write!(text, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(text, "  {cell:>w$}", w = widths[c]);
                }
            }
            out.push_str(text.trim_end());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Deserialize)]
struct InputRow {
    role: String,
    code: u64,
    dec: u64,
    doc: u64,
    fix: u64,
    reward_pct: f64,
}

/// Matrix plus assigned rewards, as read from `role,code,dec,doc,fix,reward_pct` CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct WevInput {
    pub matrix: ContributionMatrix,
    pub rewards: Vec<f64>,
}

impl WevInput {
    pub fn from_csv(text: &str) -> Result<Self, WevError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        let mut rewards = Vec::new();
        for record in reader.deserialize::<InputRow>() {
            let row = record.map_err(|e| WevError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            rows.push((row.role, [row.code, row.dec, row.doc, row.fix]));
            rewards.push(row.reward_pct);
        }
        Ok(Self { matrix: ContributionMatrix::new(rows)?, rewards })
    }

    pub fn report(&self, w: &WeightRanges) -> Result<WevReport, WevError> {
        report(&self.matrix, w, &self.rewards)
    }
}
