use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use shapcoop::{
    collective_outcome, marginal_contribution_traj, shapley_from_trajectory, CotError, CounterfactualMode,
    ShapleyMode, TrajectoryRecord,
};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ablate {
    None,
    All,
    Agent(usize),
}

impl FromStr for Ablate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Ablate::None),
            "all" => Ok(Ablate::All),
            other => other
                .parse()
                .map(Ablate::Agent)
                .map_err(|_| format!("expected an agent index, \"all\" or \"none\", got {other:?}")),
        }
    }
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trajectory file (JSONL).
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Agent whose marginal contribution to report: an index, "all" or "none".
    #[arg(long)]
    pub ablate: Ablate,
    #[arg(long, default_value = "ablate_log")]
    pub mode: CounterfactualMode,
    /// How the Shapley column is computed.
    #[arg(long, default_value = "full_coalition")]
    pub shapley: ShapleyMode,
}

fn cot_error(e: CotError) -> CliError {
    match e {
        CotError::Backend { .. } => CliError::Backend(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

pub fn run(args: &ReplayArgs) -> CliResult<()> {
    let traj = TrajectoryRecord::read(&args.trajectory).map_err(|e| CliError::data(args.trajectory.display(), e))?;
    let n = traj.n_agents();
    if let Ablate::Agent(i) = args.ablate {
        if i >= n {
            return Err(CliError::Usage(format!("--ablate {i}: the trajectory has {n} agents")));
        }
    }
    if traj.seed().is_none() {
        return Err(CliError::Data(format!("{}: trajectory header has no seed", args.trajectory.display())));
    }
    let phi = shapley_from_trajectory(&traj, args.shapley, args.mode).map_err(cot_error)?;
    println!("R(N) = {}", collective_outcome(&traj));
    println!("agent,policy,delta,shapley");
    for agent in 0..n {
        let delta = match args.ablate {
            Ablate::All => Some(agent),
            Ablate::Agent(i) if i == agent => Some(agent),
            _ => None,
        }
        .map(|a| marginal_contribution_traj(&traj, a, args.mode).map_err(cot_error))
        .transpose()?;
        println!(
            "{agent},{},{},{}",
            traj.header.agents[agent].policy,
            delta.map(|d| d.to_string()).unwrap_or_default(),
            phi[agent]
        );
    }
    Ok(())
}
