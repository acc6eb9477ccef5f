//! Independent episodes in parallel, one seed each.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::llm::{ChatBackend, LlmPolicy, LlmReasoner, PromptTemplates};
use super::{make_env, policy_by_name, run_episode, EpisodeResult, PipelineConfig, Policy, ReasonerKind, RuntimeError};
use crate::cot::{Reasoner, RuleBasedReasoner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeJob {
    pub env_id: String,
    pub env_config: Option<serde_json::Value>,
    pub policies: Vec<String>,
    pub pipeline: PipelineConfig,
    pub seed: u64,
}

impl EpisodeJob {
    /// Whether the job cannot run without a chat backend.
    pub fn needs_backend(&self) -> bool {
        self.pipeline.reasoner == ReasonerKind::Llm || self.policies.iter().any(|p| p == "llm")
    }
}

/// Builds policies by name. `"llm"` and the LLM reasoner need `backend`.
pub fn build_policies(
    names: &[String],
    reasoner_kind: ReasonerKind,
    backend: Option<&Arc<dyn ChatBackend>>,
    prompts: &PromptTemplates,
) -> Result<Vec<Box<dyn Policy>>, RuntimeError> {
    let no_backend = || RuntimeError::Backend { attempts: 0, message: "no chat backend configured".into() };
    let reasoner: Arc<dyn Reasoner> = match reasoner_kind {
        ReasonerKind::RuleBased => Arc::new(RuleBasedReasoner),
        ReasonerKind::Llm => Arc::new(LlmReasoner::new(backend.ok_or_else(no_backend)?.clone(), prompts.clone())),
    };
    names
        .iter()
        .map(|name| match name.as_str() {
            "llm" => {
                let backend = backend.ok_or_else(no_backend)?.clone();
                Ok(Box::new(LlmPolicy::new(backend, prompts.clone())) as Box<dyn Policy>)
            }
            other => policy_by_name(other, reasoner.clone()),
        })
        .collect()
}

pub fn run_job(
    job: &EpisodeJob,
    backend: Option<&Arc<dyn ChatBackend>>,
    prompts: &PromptTemplates,
) -> Result<EpisodeResult, RuntimeError> {
    let mut env = make_env(&job.env_id, job.env_config.as_ref())?;
    let mut policies = build_policies(&job.policies, job.pipeline.reasoner, backend, prompts)?;
    run_episode(env.as_mut(), &mut policies, &job.pipeline, job.seed)
}

/// Runs every job on a pool of at most `parallelism` threads. Results come
/// back in job order and do not depend on the thread count.
pub fn run_batch(
    jobs: &[EpisodeJob],
    parallelism: usize,
    backend: Option<Arc<dyn ChatBackend>>,
    prompts: &PromptTemplates,
) -> Vec<Result<EpisodeResult, RuntimeError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool builds");
    pool.install(|| jobs.par_iter().map(|job| run_job(job, backend.as_ref(), prompts)).collect())
}
