//! The judging contract: evaluate a weight configuration and produce a
//! confidence score, an accept/continue decision, the next metric to try,
//! and a structured explanation.
//!
//! Two backends implement the contract. The rule judge is a deterministic
//! nine-aspect rubric. The remote judge talks to an OpenAI-compatible chat
//! endpoint, demands a structured verdict, and falls back to the rule judge
//! when the endpoint misbehaves.

mod remote;
mod rule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Metric;
use crate::optimizer::WeightVector;
use crate::shap::ExplanationClaims;

pub use remote::{
    parse_verdict, remote_chat, ChatMessage, ChatRequest, HttpTransport, RemoteJudge, Transport,
    TransportError,
};
pub use rule::{rule_rubric, RuleJudge};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("remote judge unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("remote judge timed out: {0}")]
    Timeout(String),
    #[error("malformed verdict: {0}")]
    MalformedVerdict(String),
    #[error("remote backend requires an endpoint url")]
    MissingEndpoint,
    #[error("api key environment variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("metric pool is empty")]
    EmptyMetricPool,
}

/// Accept the current weights or continue optimizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Continue,
}

impl Decision {
    pub fn label(self) -> &'static str {
        match self {
            Decision::Accept => "accept",
            Decision::Continue => "continue",
        }
    }
}

/// Cross-validation score table: `scores[model][metric]`, lower is better.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvPerformance {
    pub model_ids: Vec<String>,
    pub metrics: Vec<Metric>,
    pub scores: Vec<Vec<f64>>,
}

impl CvPerformance {
    pub fn score_of(&self, model: usize, metric: Metric) -> Option<f64> {
        let col = self.metrics.iter().position(|m| *m == metric)?;
        self.scores.get(model).and_then(|row| row.get(col)).copied()
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }
}

/// Dataset characteristics the judge reasons over.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataFeatures {
    pub seasonal_strength: f64,
    pub trend_strength: f64,
    /// Seasonal period p, in samples.
    pub period: usize,
    /// Length of the cross-validation window (total forecasted span).
    pub cv_window_length: usize,
}

/// A compact view of one prior iteration, enough for the rubric's history
/// checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub metric: Metric,
    pub confidence: f64,
    pub decision: Decision,
}

/// Everything a judge sees when evaluating one weight configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationContext {
    pub dataset_id: String,
    pub cv_performance: CvPerformance,
    pub current_weights: WeightVector,
    pub current_metric: Metric,
    /// Ensemble score of the current weights under the current metric.
    pub current_score: f64,
    pub data_features: DataFeatures,
    /// Per-model capability tags (e.g. "seasonal", "trend", "local"),
    /// aligned with `cv_performance.model_ids`. Configured, not inferred.
    pub capability_tags: Vec<Vec<String>>,
    /// 1-based iteration counter k.
    pub iteration: usize,
    pub metric_pool: Vec<Metric>,
    pub history: Vec<HistoryEntry>,
}

impl EvaluationContext {
    pub(crate) fn seasonal_weight_sum(&self) -> f64 {
        self.capability_tags
            .iter()
            .zip(self.current_weights.as_slice())
            .filter(|(tags, _)| tags.iter().any(|t| t == "seasonal"))
            .map(|(_, w)| *w)
            .sum()
    }
}

/// The judge's output for one iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub confidence: f64,
    pub decision: Decision,
    /// Required when the decision is `continue`; must differ from the
    /// current metric.
    pub next_metric: Option<Metric>,
    pub claims: ExplanationClaims,
    /// Nine rubric scores in [0,1], grouped Align {0..3}, Match {3..6},
    /// Future {6..9}.
    pub aspect_scores: [f64; 9],
    /// Optional forward-looking weight adjustment Δw applied to the
    /// accepted vector.
    pub weight_adjustment: Option<Vec<f64>>,
    /// Claims were auto-derived because the backend returned prose only.
    pub low_fidelity_claims: bool,
    /// The remote backend failed and the rule judge answered instead.
    pub fallback_used: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    Rule,
    Remote,
}

/// Backend selection and policy knobs shared by both judges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeBackendConfig {
    pub kind: JudgeKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the bearer token. The key
    /// itself never appears in config or audit files.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_accept_threshold")]
    pub accept_threshold: f64,
    #[serde(default = "default_risk_threshold")]
    pub risk_threshold: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Fall back to the rule judge after remote failures instead of erroring.
    #[serde(default = "default_true")]
    pub fallback_to_rule: bool,
}

fn default_max_retries() -> u32 {
    2
}
fn default_timeout() -> u64 {
    30
}
fn default_accept_threshold() -> f64 {
    0.85
}
fn default_risk_threshold() -> f64 {
    1.0
}
fn default_max_iterations() -> usize {
    3
}
fn default_true() -> bool {
    true
}

impl Default for JudgeBackendConfig {
    fn default() -> Self {
        Self {
            kind: JudgeKind::Rule,
            endpoint_url: None,
            api_key_env: None,
            model_name: None,
            max_retries: default_max_retries(),
            timeout_secs: default_timeout(),
            accept_threshold: default_accept_threshold(),
            risk_threshold: default_risk_threshold(),
            max_iterations: default_max_iterations(),
            fallback_to_rule: default_true(),
        }
    }
}

/// The pluggable judging contract.
pub trait Judge {
    fn judge(&mut self, ctx: &EvaluationContext) -> Result<JudgeVerdict, JudgeError>;

    /// Whether verdicts are reproducible run-to-run.
    fn deterministic(&self) -> bool;
}

/// Construct the configured backend and produce a verdict for `ctx`.
pub fn judge(ctx: &EvaluationContext, backend: &JudgeBackendConfig) -> Result<JudgeVerdict, JudgeError> {
    match backend.kind {
        JudgeKind::Rule => RuleJudge::new(backend.clone()).judge(ctx),
        JudgeKind::Remote => {
            let transport = HttpTransport::from_config(backend)?;
            RemoteJudge::new(backend.clone(), transport).judge(ctx)
        }
    }
}

/// Seasonality risk: `seasonal_strength · 1[T_cv < 2p] / Σ_{m seasonal} w_m`.
///
/// Returns 0 when the window covers two full periods, and +∞ when the
/// indicator fires with no weight on seasonal-tagged models (maximal risk).
pub fn compute_seasonality_risk(ctx: &EvaluationContext) -> f64 {
    let f = &ctx.data_features;
    if f.cv_window_length >= 2 * f.period {
        return 0.0;
    }
    let seasonal_mass = ctx.seasonal_weight_sum();
    if seasonal_mass < 1e-9 {
        return f64::INFINITY;
    }
    f.seasonal_strength / seasonal_mass
}

/// Fixed exploration rotation MSE → MAE → SMAPE → MASE → CRPS → RMSE
/// restricted to the configured pool; returns the successor of `current`,
/// skipping `current` itself. `None` when the pool offers no alternative.
pub fn next_metric_in_rotation(pool: &[Metric], current: Metric) -> Option<Metric> {
    let rotation: Vec<Metric> = Metric::ALL.iter().copied().filter(|m| pool.contains(m)).collect();
    if rotation.len() < 2 {
        return None;
    }
    let pos = rotation.iter().position(|m| *m == current).unwrap_or(0);
    Some(rotation[(pos + 1) % rotation.len()])
}
