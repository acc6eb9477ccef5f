use std::path::PathBuf;

use clap::Args;
use log::info;
use shapcoop::{shapley_sampled, ExactSolver};

use crate::error::{read_file, CliError, CliResult};
use crate::game::parse_game;

#[derive(Debug, Args)]
pub struct ShapleyArgs {
    /// Game file (JSON).
    #[arg(long)]
    pub game: PathBuf,
    /// Estimate from this many random orderings instead of enumerating.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest player count solved exactly; bigger games are sampled.
    #[arg(long, default_value_t = 16)]
    pub cap: usize,
    /// Samples used when a game exceeds the cap and --samples is absent.
    #[arg(long, default_value_t = 100_000)]
    pub fallback_samples: usize,
    /// Also write the allocation as CSV to this path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn run(args: &ShapleyArgs) -> CliResult<()> {
    let loaded = parse_game(&read_file(&args.game)?)?;
    let n = loaded.game.n();
    let phi = match args.samples {
        Some(0) => return Err(CliError::Usage("--samples must be positive".into())),
        Some(k) => {
            info!("sampling {k} orderings (seed {})", args.seed);
            shapley_sampled(&loaded.game, k, args.seed)
        }
        None if n > args.cap => {
            info!("{n} players exceed the exact cap {}; sampling {} orderings", args.cap, args.fallback_samples);
            shapley_sampled(&loaded.game, args.fallback_samples, args.seed)
        }
        None => ExactSolver::with_cap(args.cap).solve(&loaded.game),
    }
    .map_err(|e| CliError::data("solver", e))?;

    println!("{}", phi.payoffs().iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", "));
    if let Some(path) = &args.csv {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(|e| CliError::data(path.display(), e))?;
        w.write_record(["agent", "name", "shapley", "share_pct"]).map_err(|e| CliError::data(path.display(), e))?;
        let shares = phi.shares_percent().ok();
        for (i, name) in loaded.names.iter().enumerate() {
            let share = shares.as_ref().map(|s| s[i].to_string()).unwrap_or_default();
            w.write_record([i.to_string(), name.clone(), phi[i].to_string(), share])
                .map_err(|e| CliError::data(path.display(), e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}
