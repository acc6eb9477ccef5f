use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use log::{info, warn};
use shapcoop::runtime::batch::run_batch;
use shapcoop::runtime::llm::{ChatBackend, HttpBackend};

use crate::bundle::{write_bundle, EpisodeOutcome, EpisodeStatus};
use crate::error::{CliError, CliResult};
use crate::manifest::load;

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Batch manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Clear existing output directories instead of refusing to run.
    #[arg(long)]
    pub force: bool,
    /// Backend config (JSON) overriding the manifest's.
    #[arg(long)]
    pub backend: Option<PathBuf>,
}

fn prepare_dir(dir: &Path, force: bool) -> CliResult<()> {
    match fs::read_dir(dir) {
        Ok(mut entries) => {
            if entries.next().is_none() {
                return Ok(());
            }
            if !force {
                return Err(CliError::Data(format!(
                    "output directory {} is not empty (pass --force to overwrite)",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        Err(e) => Err(CliError::io(dir, e)),
    }
}

pub fn run(args: &RunArgs) -> CliResult<()> {
    let loaded = load(&args.manifest, args.backend.as_deref())?;
    let jobs = &loaded.manifest.jobs;
    if jobs.is_empty() {
        println!("manifest has no jobs");
        return Ok(());
    }
    for job in jobs {
        prepare_dir(&loaded.output_dir(job), args.force)?;
    }

    let mut backend_problem = None;
    let backend: Option<Arc<dyn ChatBackend>> = if jobs.iter().any(|j| j.needs_backend()) {
        match loaded.backend.clone() {
            None => {
                backend_problem = Some("no chat backend configured".to_string());
                None
            }
            Some(cfg) => match HttpBackend::new(cfg) {
                Ok(b) => Some(Arc::new(b)),
                Err(e) => {
                    backend_problem = Some(format!("chat backend unavailable: {e}"));
                    None
                }
            },
        }
    } else {
        None
    };

    let runnable: Vec<bool> = jobs.iter().map(|j| !j.needs_backend() || backend.is_some()).collect();
    let episodes: Vec<_> = jobs
        .iter()
        .zip(&runnable)
        .filter(|(_, &ok)| ok)
        .flat_map(|(job, _)| job.seeds.iter().map(|&s| job.episode(s)))
        .collect();
    info!("running {} episode(s) with parallelism {}", episodes.len(), loaded.manifest.parallelism);
    let mut results = run_batch(&episodes, loaded.manifest.parallelism, backend, &loaded.prompts).into_iter();

    let mut degraded = false;
    for (job, ok) in jobs.iter().zip(runnable) {
        let mut outcomes = Vec::with_capacity(job.seeds.len());
        for &seed in &job.seeds {
            let outcome = if !ok {
                EpisodeOutcome::Skipped(backend_problem.clone().unwrap_or_default())
            } else {
                match results.next().expect("one result per episode") {
                    Ok(r) => EpisodeOutcome::Done(Box::new(r)),
                    Err(e) if e.is_backend() => EpisodeOutcome::Failed(e.to_string()),
                    Err(e) => return Err(CliError::data(format!("job {:?} seed {seed}", job.id), e)),
                }
            };
            outcomes.push((seed, outcome));
        }
        let dir = loaded.output_dir(job);
        let summary = write_bundle(&dir, job, &outcomes)?;
        let bad = summary.seeds.iter().filter(|s| s.status != EpisodeStatus::Ok).count();
        if bad > 0 {
            degraded = true;
            warn!("job {}: {bad} episode(s) skipped, failed or aborted", job.id);
        }
        let mean = summary.mean_collective_outcome.map(|m| format!("{m}")).unwrap_or_else(|| "-".into());
        println!(
            "{}: {}/{} episodes, mean R(N) {}, {}",
            job.id,
            summary.completed,
            summary.episodes,
            mean,
            dir.display()
        );
    }
    if degraded {
        return Err(CliError::Backend(
            backend_problem.unwrap_or_else(|| "some episodes did not complete".to_string()),
        ));
    }
    Ok(())
}
