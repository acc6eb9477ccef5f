use std::path::PathBuf;

use clap::{Args, ValueEnum};
use shapcoop::wev::{WeightRanges, WevInput};

use crate::error::{read_file, CliError, CliResult};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WevFormat {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct WevArgs {
    /// CSV with columns role,code,dec,doc,fix,reward_pct.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON weight ranges; omitted artifacts keep their defaults.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = WevFormat::Text)]
    pub format: WevFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(args: &WevArgs) -> CliResult<()> {
    let input = WevInput::from_csv(&read_file(&args.input)?).map_err(|e| CliError::data(args.input.display(), e))?;
    let weights = match &args.weights {
        Some(p) => WeightRanges::from_json(&read_file(p)?).map_err(|e| CliError::data(p.display(), e))?,
        None => WeightRanges::default(),
    };
    let report = input.report(&weights).map_err(|e| CliError::data(args.input.display(), e))?;
    let text = match args.format {
        WevFormat::Text => report.to_text(),
        WevFormat::Csv => report.to_csv(),
    };
    match &args.output {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
