//! Optional LLM backend: an OpenAI-compatible chat-completions client, plus a
//! policy and a reasoner that talk to it.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{NegotiationContext, Observation, Policy, RuntimeError, SettlementContext};
use crate::coalition::AgentId;
use crate::cot::{CotError, ExternalityAssessment, ExternalitySign, PayoffEstimate, Reasoner};
use crate::env::{Action, Snapshot};
use crate::negotiation::{parse_message, TranscriptEntry, TransferProposal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("backend failed after {attempts} attempt(s): {message}")]
    Backend { attempts: u32, message: String },
}

impl From<LlmError> for RuntimeError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Backend { attempts, message } => RuntimeError::Backend { attempts, message },
            other => RuntimeError::Backend { attempts: 0, message: other.to_string() },
        }
    }
}

impl From<LlmError> for CotError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Backend { attempts, message } => CotError::Backend { attempts, message },
            other => CotError::Backend { attempts: 0, message: other.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmBackendConfig {
    /// Base URL up to (not including) `/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Name of the variable holding the API key; `None` sends no key.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub temperature: f64,
    pub initial_backoff_ms: u64,
}

impl Default for LlmBackendConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 60.0,
            max_retries: 3,
            temperature: 0.0,
            initial_backoff_ms: 500,
        }
    }
}

impl LlmBackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(LlmError::InvalidConfig("timeout_secs must be positive".into()));
        }
        if self.base_url.is_empty() || self.model.is_empty() {
            return Err(LlmError::InvalidConfig("base_url and model are required".into()));
        }
        Ok(())
    }

    fn api_key(&self) -> Result<Option<String>, LlmError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| LlmError::MissingKey(var.clone())),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError>;
}

pub const SYSTEM_PROMPT: &str =
    "You are one agent in a cooperative multi-agent game. Follow the requested reply format exactly.";

pub struct HttpBackend {
    cfg: LlmBackendConfig,
    key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("cfg", &self.cfg).field("key", &self.key.as_ref().map(|_| "***")).finish()
    }
}

impl HttpBackend {
    pub fn new(cfg: LlmBackendConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let key = cfg.api_key()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, key, agent })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, (bool, String)> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut request = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|e| (true, format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| (true, format!("reading body: {e}")))?;
        debug!("POST {url} (Authorization: Bearer ***) -> {status}: {text}");
        if status == 429 || status >= 500 {
            return Err((true, format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err((false, format!("HTTP {status}: {text}")));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| (false, format!("response is not JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, "response has no choices[0].message.content".to_string()))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError> {
        let body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        debug!("chat request: {body}");
        let attempts = self.cfg.max_retries + 1;
        let mut backoff = Duration::from_millis(self.cfg.initial_backoff_ms);
        let mut last = String::new();
        for k in 1..=attempts {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, message)) => {
                    warn!("chat attempt {k}/{attempts} failed: {message}");
                    last = message;
                    if !retryable {
                        return Err(LlmError::Backend { attempts: k, message: last });
                    }
                    if k < attempts {
                        thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(LlmError::Backend { attempts, message: last })
    }
}

/// One chat-completion round-trip with retries.
pub fn llm_complete(cfg: &LlmBackendConfig, prompt: &str) -> Result<String, LlmError> {
    HttpBackend::new(cfg.clone())?.complete(SYSTEM_PROMPT, prompt)
}

/// Prompt text; `{name}` is substituted, `{{` / `}}` are literal braces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub act: String,
    pub negotiate: String,
    pub settle: String,
    pub estimate: String,
    pub externality: String,
    pub adjust: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            act: include_str!("prompts/act.txt").into(),
            negotiate: include_str!("prompts/negotiate.txt").into(),
            settle: include_str!("prompts/settle.txt").into(),
            estimate: include_str!("prompts/estimate.txt").into(),
            externality: include_str!("prompts/externality.txt").into(),
            adjust: include_str!("prompts/adjust.txt").into(),
        }
    }
}

pub fn fill(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with('{') {
            if let Some(end) = tail.find('}') {
                let key = &tail[1..end];
                if let Some((_, v)) = vars.iter().find(|(k, _)| *k == key) {
                    out.push_str(v);
                    rest = &tail[end + 1..];
                    continue;
                }
            }
        }
        out.push_str(&tail[..1]);
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

pub fn describe_state(snapshot: &Snapshot) -> String {
    match snapshot {
        Snapshot::EscapeRoom { matrix } => {
            use crate::env::EscapeAction::{Door, Lever};
            let mut s = String::from("Payoffs (agent 0, agent 1) by joint action:\n");
            for a in [Door, Lever] {
                for b in [Door, Lever] {
                    let (x, y) = matrix.cell(a, b);
                    s.push_str(&format!("  {} / {}: ({x}, {y})\n", Action::Escape(a), Action::Escape(b)));
                }
            }
            s
        }
        Snapshot::Raid { config, state } => {
            let mut s = format!("Turn {} of {}. Boss HP {}.\n", state.turn + 1, config.max_turns, state.boss_hp);
            for (i, h) in state.heroes.iter().enumerate() {
                let status = if h.alive { "alive" } else { "dead" };
                s.push_str(&format!("  hero {i}: {} / {} HP, {status}, taunt cooldown {}\n", h.hp, h.max_hp, h.cooldowns[0]));
            }
            s
        }
    }
}

fn describe_intents(intents: &[Option<Action>]) -> String {
    intents
        .iter()
        .enumerate()
        .map(|(i, a)| format!("  agent {i}: {}", a.map_or("undecided", |a| a.name())))
        .collect::<Vec<_>>()
        .join("\n")
}

fn describe_transcript(transcript: &[TranscriptEntry]) -> String {
    if transcript.is_empty() {
        return "  (nothing yet)".into();
    }
    transcript
        .iter()
        .map(|e| format!("  agent {}: {}", e.sender, e.message.render()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn env_name(snapshot: &Snapshot) -> &'static str {
    match snapshot {
        Snapshot::EscapeRoom { .. } => crate::env::escape_room::ENV_ID,
        Snapshot::Raid { .. } => crate::env::raid_battle::ENV_ID,
    }
}

/// Policy that asks the backend for every decision.
pub struct LlmPolicy {
    backend: Arc<dyn ChatBackend>,
    prompts: PromptTemplates,
}

impl LlmPolicy {
    pub fn new(backend: Arc<dyn ChatBackend>, prompts: PromptTemplates) -> Self {
        Self { backend, prompts }
    }
}

impl Policy for LlmPolicy {
    fn name(&self) -> &str {
        "llm"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Option<Action>, RuntimeError> {
        if obs.legal.is_empty() {
            return Ok(None);
        }
        let prompt = fill(
            &self.prompts.act,
            &[
                ("agent", obs.agent.to_string()),
                ("env", obs.env_id.to_string()),
                ("state", describe_state(obs.snapshot)),
                ("intents", describe_intents(obs.intents)),
                ("legal", obs.legal.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")),
            ],
        );
        let reply = self.backend.complete(SYSTEM_PROMPT, &prompt)?;
        match Action::from_intent(reply.trim()).filter(|a| obs.legal.contains(a)) {
            Some(a) => Ok(Some(a)),
            None => {
                warn!("agent {} replied with no legal action ({reply:?}); taking {}", obs.agent, obs.legal[0]);
                Ok(Some(obs.legal[0]))
            }
        }
    }

    fn negotiate(&mut self, ctx: &NegotiationContext<'_>) -> Result<Option<String>, RuntimeError> {
        let obs = &ctx.obs;
        let prompt = fill(
            &self.prompts.negotiate,
            &[
                ("agent", obs.agent.to_string()),
                ("env", obs.env_id.to_string()),
                ("state", describe_state(obs.snapshot)),
                ("intents", describe_intents(obs.intents)),
                ("round", ctx.round.to_string()),
                ("max_rounds", obs.pipeline.max_negotiation_rounds.to_string()),
                ("transcript", describe_transcript(ctx.transcript)),
            ],
        );
        Ok(Some(self.backend.complete(SYSTEM_PROMPT, &prompt)?))
    }

    fn settle(&mut self, ctx: &SettlementContext<'_>) -> Result<Option<String>, RuntimeError> {
        let prompt = fill(
            &self.prompts.settle,
            &[
                ("agent", ctx.agent.to_string()),
                ("claimant", ctx.claimant.to_string()),
                ("total", ctx.realized.total().to_string()),
                ("realized", format!("{:?}", ctx.realized.payoffs())),
                ("shapley", format!("{:?}", ctx.shapley.payoffs())),
                ("round", ctx.round.to_string()),
                ("max_rounds", ctx.max_rounds.to_string()),
                ("transcript", describe_transcript(ctx.transcript)),
            ],
        );
        Ok(Some(self.backend.complete(SYSTEM_PROMPT, &prompt)?))
    }
}

/// Reasoner backed by the chat model. Replies that do not fit the requested
/// shape surface as [`CotError::Unparsable`].
pub struct LlmReasoner {
    backend: Arc<dyn ChatBackend>,
    prompts: PromptTemplates,
}

impl LlmReasoner {
    pub fn new(backend: Arc<dyn ChatBackend>, prompts: PromptTemplates) -> Self {
        Self { backend, prompts }
    }

    fn own_action(planned: &[Option<Action>], agent: AgentId) -> Result<Action, CotError> {
        planned.get(agent).copied().flatten().ok_or(CotError::MissingPlan(agent))
    }
}

impl Reasoner for LlmReasoner {
    fn estimate_cooperative_payoff(
        &self,
        state: &Snapshot,
        planned: &[Option<Action>],
    ) -> Result<PayoffEstimate, CotError> {
        let prompt = fill(
            &self.prompts.estimate,
            &[
                ("env", env_name(state).to_string()),
                ("state", describe_state(state)),
                ("intents", describe_intents(planned)),
            ],
        );
        let reply = self.backend.complete(SYSTEM_PROMPT, &prompt)?;
        let mut lines = reply.trim().lines();
        let value = lines
            .next()
            .and_then(|l| l.trim().trim_end_matches('.').parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| CotError::Unparsable(reply.clone()))?;
        Ok(PayoffEstimate { value, confidence: lines.collect::<Vec<_>>().join(" ").trim().to_string() })
    }

    fn classify_externality(
        &self,
        state: &Snapshot,
        agent: AgentId,
        planned: &[Option<Action>],
    ) -> Result<(ExternalitySign, String), CotError> {
        let own = Self::own_action(planned, agent)?;
        let prompt = fill(
            &self.prompts.externality,
            &[
                ("env", env_name(state).to_string()),
                ("state", describe_state(state)),
                ("intents", describe_intents(planned)),
                ("agent", agent.to_string()),
                ("action", own.describe().to_string()),
            ],
        );
        let reply = self.backend.complete(SYSTEM_PROMPT, &prompt)?;
        let mut lines = reply.trim().lines();
        let sign = match lines.next().map(str::trim) {
            Some("+") => ExternalitySign::Positive,
            Some("-") => ExternalitySign::Negative,
            _ => return Err(CotError::Unparsable(reply.clone())),
        };
        Ok((sign, lines.collect::<Vec<_>>().join(" ").trim().to_string()))
    }

    fn draft_adjustment(
        &self,
        state: &Snapshot,
        planned: &[Option<Action>],
        estimate: &PayoffEstimate,
        assessment: &ExternalityAssessment,
    ) -> Result<TransferProposal, CotError> {
        let own = Self::own_action(planned, assessment.agent)?;
        let prompt = fill(
            &self.prompts.adjust,
            &[
                ("env", env_name(state).to_string()),
                ("state", describe_state(state)),
                ("agent", assessment.agent.to_string()),
                ("action", own.describe().to_string()),
                ("sign", assessment.sign.symbol().to_string()),
                ("rationale", assessment.rationale.clone()),
                ("estimate", estimate.value.to_string()),
            ],
        );
        let reply = self.backend.complete(SYSTEM_PROMPT, &prompt)?;
        match parse_message(&reply) {
            Ok(m) => m.proposal_payload().cloned().ok_or(CotError::Unparsable(reply)),
            Err(_) => Err(CotError::Unparsable(reply)),
        }
    }
}
