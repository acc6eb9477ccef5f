//! Batch manifests.

use std::collections::BTreeSet;
use std::path::{Component, Path, PathBuf};

use serde::Deserialize;
use shapcoop::runtime::batch::EpisodeJob;
use shapcoop::runtime::llm::{LlmBackendConfig, PromptTemplates};
use shapcoop::PipelineConfig;

use crate::error::{read_file, CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum FileOr<T> {
    Path(PathBuf),
    Inline(T),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Episodes in flight at once; also caps concurrent backend requests.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub backend: Option<FileOr<LlmBackendConfig>>,
    #[serde(default)]
    pub prompts: Option<FileOr<PromptTemplates>>,
    #[serde(default)]
    pub jobs: Vec<JobSpec>,
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub id: String,
    pub env_id: String,
    #[serde(default)]
    pub env_config: Option<serde_json::Value>,
    pub policies: Vec<String>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub seeds: Vec<u64>,
    /// Relative paths resolve against the manifest's directory.
    pub output_dir: PathBuf,
}

impl JobSpec {
    pub fn episode(&self, seed: u64) -> EpisodeJob {
        EpisodeJob {
            env_id: self.env_id.clone(),
            env_config: self.env_config.clone(),
            policies: self.policies.clone(),
            pipeline: self.pipeline.clone(),
            seed,
        }
    }

    pub fn needs_backend(&self) -> bool {
        self.seeds.first().is_some_and(|&s| self.episode(s).needs_backend())
    }
}

pub struct LoadedManifest {
    pub manifest: Manifest,
    pub base: PathBuf,
    pub backend: Option<LlmBackendConfig>,
    pub prompts: PromptTemplates,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Lexical normalization, enough to spot two jobs writing to one directory.
fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

fn load_part<T: serde::de::DeserializeOwned>(base: &Path, part: FileOr<T>, what: &str) -> CliResult<T> {
    match part {
        FileOr::Inline(v) => Ok(v),
        FileOr::Path(p) => {
            let path = resolve(base, &p);
            let text = read_file(&path)?;
            serde_json::from_str(&text).map_err(|e| CliError::data(format!("{what} file {}", path.display()), e))
        }
    }
}

pub fn load(path: &Path, backend_override: Option<&Path>) -> CliResult<LoadedManifest> {
    let text = read_file(path)?;
    let mut manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut seen_ids = BTreeSet::new();
    let mut seen_dirs = BTreeSet::new();
    for job in &manifest.jobs {
        if !seen_ids.insert(job.id.clone()) {
            return Err(CliError::Data(format!("duplicate job id {:?}", job.id)));
        }
        if !seen_dirs.insert(normalize(&resolve(&base, &job.output_dir))) {
            return Err(CliError::Data(format!(
                "job {:?}: output directory {} is used by another job",
                job.id,
                job.output_dir.display()
            )));
        }
        job.pipeline.validate().map_err(|e| CliError::data(format!("job {:?}", job.id), e))?;
        let mut sorted = job.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Data(format!("job {:?}: repeated seed", job.id)));
        }
    }
    if manifest.parallelism == 0 {
        return Err(CliError::Data("parallelism must be at least 1".into()));
    }

    let backend = match (backend_override, manifest.backend.take()) {
        (Some(p), _) => Some(load_part(Path::new(""), FileOr::Path(p.to_path_buf()), "backend")?),
        (None, Some(part)) => Some(load_part(&base, part, "backend")?),
        (None, None) => None,
    };
    let prompts = match manifest.prompts.take() {
        Some(part) => load_part(&base, part, "prompts")?,
        None => PromptTemplates::default(),
    };
    Ok(LoadedManifest { manifest, base, backend, prompts })
}

impl LoadedManifest {
    pub fn output_dir(&self, job: &JobSpec) -> PathBuf {
        resolve(&self.base, &job.output_dir)
    }
}
