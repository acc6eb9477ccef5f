//! Report bundles: trajectories, transcripts, contribution and allocation
//! tables, and a summary per job.

use std::fs;
use std::path::Path;

use serde::Serialize;
use shapcoop::env::raid_battle::{self, contribution_ledger};
use shapcoop::{
    collective_outcome, marginal_contribution_traj, shapley_from_trajectory, Allocation, CounterfactualMode,
    EpisodeResult, ShapleyMode, TrajectoryRecord,
};

use crate::error::{CliError, CliResult};
use crate::manifest::JobSpec;

pub const CONTRIBUTION_HEADER: [&str; 10] = [
    "job", "seed", "agent", "policy", "local_reward", "damage_dealt", "healing_done", "taunt_blocked", "delta", "shapley",
];
pub const ALLOCATION_HEADER: [&str; 8] =
    ["job", "seed", "agent", "realized", "allocation", "actual_pct", "expected_pct", "fallback"];

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Ok,
    Aborted,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub status: EpisodeStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collective_outcome: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turns: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub won: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dead: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settlement_fallback: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobSummary {
    pub job: String,
    pub env_id: String,
    pub variant: String,
    pub policies: Vec<String>,
    pub episodes: usize,
    pub completed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_collective_outcome: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub win_rate: Option<f64>,
    pub seeds: Vec<EpisodeSummary>,
}

/// What happened to one seed of a job.
pub enum EpisodeOutcome {
    Done(Box<EpisodeResult>),
    Skipped(String),
    Failed(String),
}

fn write(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn shares(a: &Allocation) -> Vec<Option<f64>> {
    match a.shares_percent() {
        Ok(s) => s.into_iter().map(Some).collect(),
        Err(_) => vec![None; a.len()],
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory csv")
}

fn final_state(traj: &TrajectoryRecord) -> (Option<bool>, Option<usize>) {
    if traj.env_id() != raid_battle::ENV_ID {
        return (None, None);
    }
    let Some(last) = traj.action_steps().last() else { return (Some(false), Some(0)) };
    let won = last.boss_hp.is_some_and(|hp| hp <= 0.0);
    let dead = last.hp.as_ref().map(|hp| hp.iter().filter(|&&h| h <= 0.0).count());
    (Some(won), dead)
}

fn contribution_rows(job: &JobSpec, seed: u64, traj: &TrajectoryRecord, w: &mut csv::Writer<Vec<u8>>) -> CliResult<()> {
    let n = traj.n_agents();
    let ledgers = if traj.env_id() == raid_battle::ENV_ID {
        Some(contribution_ledger(traj).map_err(|e| CliError::data(format!("job {} seed {seed}", job.id), e))?)
    } else {
        None
    };
    let phi = shapley_from_trajectory(traj, ShapleyMode::FullCoalition, CounterfactualMode::AblateLog)
        .map_err(|e| CliError::data(format!("job {} seed {seed}", job.id), e))?;
    let local: Vec<f64> = (0..n)
        .map(|a| traj.action_steps().map(|s| s.rewards.get(a).copied().unwrap_or(0.0)).sum())
        .collect();
    for agent in 0..n {
        let delta = marginal_contribution_traj(traj, agent, CounterfactualMode::AblateLog)
            .map_err(|e| CliError::data(format!("job {} seed {seed}", job.id), e))?;
        let l = ledgers.as_ref().map(|l| &l[agent]);
        w.write_record([
            job.id.clone(),
            seed.to_string(),
            agent.to_string(),
            traj.header.agents[agent].policy.clone(),
            num(local[agent]),
            opt(l.map(|l| l.damage_dealt)),
            opt(l.map(|l| l.healing_done)),
            opt(l.map(|l| l.taunt_blocked)),
            num(delta),
            num(phi[agent]),
        ])
        .map_err(|e| CliError::data("contributions.csv", e))?;
    }
    Ok(())
}

/// Writes every file of a job's bundle into `dir`.
pub fn write_bundle(dir: &Path, job: &JobSpec, outcomes: &[(u64, EpisodeOutcome)]) -> CliResult<JobSummary> {
    let mut contributions = csv_writer();
    contributions.write_record(CONTRIBUTION_HEADER).map_err(|e| CliError::data("contributions.csv", e))?;
    let mut allocations = csv_writer();
    allocations.write_record(ALLOCATION_HEADER).map_err(|e| CliError::data("allocations.csv", e))?;
    let mut seeds = Vec::new();

    for (seed, outcome) in outcomes {
        let seed = *seed;
        let blank = |status, reason| EpisodeSummary {
            seed,
            status,
            reason,
            collective_outcome: None,
            turns: None,
            won: None,
            dead: None,
            settlement_fallback: None,
        };
        let result = match outcome {
            EpisodeOutcome::Skipped(reason) => {
                seeds.push(blank(EpisodeStatus::Skipped, Some(reason.clone())));
                continue;
            }
            EpisodeOutcome::Failed(reason) => {
                seeds.push(blank(EpisodeStatus::Failed, Some(reason.clone())));
                continue;
            }
            EpisodeOutcome::Done(r) => r,
        };
        let traj = &result.trajectory;
        write(&dir.join(format!("trajectories/seed-{seed}.jsonl")), traj.to_jsonl().as_bytes())?;
        write(&dir.join(format!("transcripts/seed-{seed}.jsonl")), result.transcripts_jsonl().as_bytes())?;
        let (won, dead) = final_state(traj);
        let mut summary = EpisodeSummary {
            turns: Some(traj.action_steps().count()),
            won,
            dead,
            ..blank(EpisodeStatus::Ok, None)
        };
        if let Some(reason) = &result.aborted {
            summary.status = EpisodeStatus::Aborted;
            summary.reason = Some(reason.clone());
            seeds.push(summary);
            continue;
        }
        summary.collective_outcome = Some(collective_outcome(traj));
        contribution_rows(job, seed, traj, &mut contributions)?;
        if let Some(s) = &result.settlement {
            summary.settlement_fallback = Some(s.fallback);
            let actual = shares(&s.allocation);
            let expected = match &s.shapley {
                Some(phi) => shares(phi),
                None => vec![None; s.allocation.len()],
            };
            for agent in 0..s.allocation.len() {
                allocations
                    .write_record([
                        job.id.clone(),
                        seed.to_string(),
                        agent.to_string(),
                        num(s.realized[agent]),
                        num(s.allocation[agent]),
                        opt(actual[agent]),
                        opt(expected[agent]),
                        s.fallback.to_string(),
                    ])
                    .map_err(|e| CliError::data("allocations.csv", e))?;
            }
        }
        seeds.push(summary);
    }

    let done: Vec<&EpisodeSummary> = seeds.iter().filter(|s| s.status == EpisodeStatus::Ok).collect();
    let mean = (!done.is_empty())
        .then(|| done.iter().filter_map(|s| s.collective_outcome).sum::<f64>() / done.len() as f64);
    let win_rate = (job.env_id == raid_battle::ENV_ID && !done.is_empty())
        .then(|| done.iter().filter(|s| s.won == Some(true)).count() as f64 / done.len() as f64);
    let summary = JobSummary {
        job: job.id.clone(),
        env_id: job.env_id.clone(),
        variant: job.pipeline.variant.as_str().to_string(),
        policies: job.policies.clone(),
        episodes: seeds.len(),
        completed: done.len(),
        mean_collective_outcome: mean,
        win_rate,
        seeds,
    };
    write(&dir.join("contributions.csv"), &finish(contributions))?;
    write(&dir.join("allocations.csv"), &finish(allocations))?;
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write(&dir.join("summary.json"), json.as_bytes())?;
    Ok(summary)
}
