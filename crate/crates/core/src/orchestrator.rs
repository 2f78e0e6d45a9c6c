//! The iterative optimization loop: per-fold weight optimization, judging,
//! the ground-truth decision policy, refined-weight application, audit-trail
//! accumulation, final selection, and hierarchical reflection.
//!
//! One orchestration per dataset runs sequentially. Each iteration optimizes
//! weights under the current metric on the last fold, attributes each
//! model's error to trend/seasonality/residual, asks the judge for a
//! verdict, scores the verdict's claims for faithfulness, and appends one
//! audit record. The loop ends on accept or at the iteration cap; the final
//! weights are the explored vector with the highest confidence (ties go to
//! the earliest iteration), optionally adjusted by the judge's forward-
//! looking delta and re-projected onto the simplex.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::{
    next_metric_in_rotation, CvPerformance, DataFeatures, Decision, EvaluationContext,
    HistoryEntry, Judge, JudgeError,
};
use crate::metrics::{score, Forecast, MaseContext, Metric, MetricError};
use crate::optimizer::{
    optimize_weights, project_to_simplex, ForecastMatrix, OptimizerError, OptimizerParams,
    WeightVector,
};
use crate::series::{decompose, make_folds, DecompositionParams, SeriesError, TimeSeries};
use crate::shap::{
    faithfulness, shapley_attribution, ComponentClaim, Direction, ShapReport,
};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("bundle mismatch: {0}")]
    BundleMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("audit trail is empty")]
    EmptyTrail,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Accept/continue labeling policy: accept when the score gap to the best
/// falls within tolerance, or when the iteration cap is reached.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecisionPolicy {
    pub tolerance_coefficient: f64,
    pub max_iterations: usize,
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        Self {
            tolerance_coefficient: 0.001,
            max_iterations: 3,
        }
    }
}

/// `accept iff Δ ≤ τ or iteration ≥ max_iterations`, with
/// `Δ = current − best` and `τ = tolerance_coefficient · best`.
pub fn ground_truth_label(
    current_score: f64,
    best_score: f64,
    iteration: usize,
    policy: &DecisionPolicy,
) -> Decision {
    let delta = current_score - best_score;
    let tau = policy.tolerance_coefficient * best_score;
    if delta <= tau || iteration >= policy.max_iterations {
        Decision::Accept
    } else {
        Decision::Continue
    }
}

/// Clip each delta entry to ±`max_step`, add to the weights, and project
/// back onto the simplex.
pub fn apply_refinement(weights: &WeightVector, delta: &[f64], max_step: f64) -> WeightVector {
    let adjusted: Vec<f64> = weights
        .as_slice()
        .iter()
        .zip(delta)
        .map(|(w, d)| w + d.clamp(-max_step, max_step))
        .collect();
    project_to_simplex(&adjusted)
}

/// The explanation payload of one audit record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Explanation {
    pub free_text: String,
    pub claims: Vec<ComponentClaim>,
    pub aspect_scores: [f64; 9],
}

/// One row of the audit trail: `(w_k, L_k, C_k, F_k, D_k, E_k)` plus the
/// operational fields that make the record replayable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub iteration: usize,
    pub weights: WeightVector,
    pub metric: Metric,
    /// Ensemble score under `metric`; absent on failed iterations.
    pub objective: Option<f64>,
    pub confidence: f64,
    pub faithfulness: f64,
    pub decision: Decision,
    /// Label from the ground-truth policy, kept for trajectory export.
    pub ground_truth: Decision,
    pub explanation: Explanation,
    /// This record applies the post-acceptance weight refinement.
    pub refined: bool,
    pub judge_fallback: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditTrail {
    pub dataset_id: String,
    pub records: Vec<AuditRecord>,
}

impl AuditTrail {
    /// One JSON object per line, in iteration order.
    pub fn to_jsonl(&self) -> Result<String, OrchestratorError> {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), OrchestratorError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(self.to_jsonl()?.as_bytes())?;
        file.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path, dataset_id: impl Into<String>) -> Result<Self, OrchestratorError> {
        let content = std::fs::read_to_string(path)?;
        let records = content
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<AuditRecord>, _>>()?;
        Ok(Self {
            dataset_id: dataset_id.into(),
            records,
        })
    }
}

/// Per-record confidence decomposition for the reflection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationInsight {
    pub iteration: usize,
    pub align_score: f64,
    pub match_score: f64,
    pub future_score: f64,
    pub faithfulness: f64,
    pub below_faithfulness_floor: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionInsight {
    pub iteration: usize,
    pub decision: Decision,
    pub rationale: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalInsights {
    /// Mean weight per model across optimization records.
    pub mean_weights: Vec<(String, f64)>,
    /// Models holding zero weight in every record.
    pub excluded_models: Vec<String>,
    pub dominant_model: Option<(String, f64)>,
    /// Systematic claim-vs-SHAP sign disagreements.
    pub sign_disagreements: Vec<String>,
    pub metric_progression: Vec<Metric>,
}

/// Hierarchical synthesis over the whole trail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reflection {
    pub iteration_level: Vec<IterationInsight>,
    pub decision_level: Vec<DecisionInsight>,
    pub final_level: FinalInsights,
}

/// Orchestration knobs; the judge backend is passed separately as a trait
/// object so tests can script it.
#[derive(Debug, Clone)]
pub struct OrchestrationConfig {
    pub metric_pool: Vec<Metric>,
    pub n_folds: usize,
    pub horizon: usize,
    pub optimizer: OptimizerParams,
    pub policy: DecisionPolicy,
    pub refinement_max_step: f64,
    pub faithfulness_floor: f64,
    pub tau_low: f64,
    pub tau_high: f64,
    /// Per-model capability tags aligned with the bundle's model ids.
    pub capability_tags: Vec<Vec<String>>,
    pub decomposition: DecompositionParams,
}

impl Default for OrchestrationConfig {
    fn default() -> Self {
        Self {
            metric_pool: vec![Metric::Mse, Metric::Mae, Metric::Smape],
            n_folds: 5,
            horizon: 24,
            optimizer: OptimizerParams::default(),
            policy: DecisionPolicy::default(),
            refinement_max_step: 0.2,
            faithfulness_floor: 0.5,
            tau_low: 0.1,
            tau_high: 0.4,
            capability_tags: Vec::new(),
            decomposition: DecompositionParams::default(),
        }
    }
}

/// Weights optimized independently for one (fold, metric) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerFoldWeights {
    pub fold: usize,
    pub metric: Metric,
    pub weights: WeightVector,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrchestrationResult {
    pub dataset_id: String,
    pub model_ids: Vec<String>,
    pub final_weights: WeightVector,
    /// Iteration whose weights were selected (before refinement).
    pub selected_iteration: usize,
    pub trail: AuditTrail,
    pub reflection: Reflection,
    pub per_fold: Vec<PerFoldWeights>,
    pub cv_performance: CvPerformance,
    pub data_features: DataFeatures,
    /// Per optimization record, aligned with trail order; `None` for failed
    /// iterations and the refinement record.
    pub shap_reports: Vec<Option<ShapReport>>,
    /// False when a non-deterministic (remote) judge produced any verdict.
    pub deterministic: bool,
}

fn mase_context_for(series: &TimeSeries, train_end: usize) -> MaseContext {
    MaseContext::new(series.values[..train_end].to_vec(), series.period)
}

fn metric_needs_quantiles(pool: &[Metric]) -> bool {
    pool.contains(&Metric::Crps)
}

fn model_score(
    metric: Metric,
    truth: &[f64],
    matrix: &ForecastMatrix,
    model: usize,
    mase_ctx: &MaseContext,
) -> Result<f64, MetricError> {
    match metric {
        Metric::Crps => {
            let quantiles = matrix
                .quantiles
                .as_ref()
                .ok_or(MetricError::MissingQuantiles)?;
            score(metric, truth, Forecast::Quantiles(&quantiles[model]), Some(mase_ctx))
        }
        _ => score(
            metric,
            truth,
            Forecast::Point(&matrix.columns[model]),
            Some(mase_ctx),
        ),
    }
}

/// Score one weight vector under `metric` against a fold's truth window.
fn ensemble_score(
    metric: Metric,
    truth: &[f64],
    matrix: &ForecastMatrix,
    weights: &WeightVector,
    mase_ctx: &MaseContext,
) -> Result<f64, MetricError> {
    match metric {
        Metric::Crps => {
            let quantiles = matrix
                .quantiles
                .as_ref()
                .ok_or(MetricError::MissingQuantiles)?;
            let mixed =
                crate::metrics::QuantileForecast::weighted_mix(quantiles, weights.as_slice())?;
            score(metric, truth, Forecast::Quantiles(&mixed), Some(mase_ctx))
        }
        _ => {
            let combined = matrix.combine(weights.as_slice());
            score(metric, truth, Forecast::Point(&combined), Some(mase_ctx))
        }
    }
}

fn validate_inputs(
    series: &TimeSeries,
    bundles: &[ForecastMatrix],
    config: &OrchestrationConfig,
) -> Result<(), OrchestratorError> {
    if config.metric_pool.is_empty() {
        return Err(OrchestratorError::Config("metric pool is empty".into()));
    }
    if bundles.len() != config.n_folds {
        return Err(OrchestratorError::BundleMismatch(format!(
            "{} bundles for {} folds",
            bundles.len(),
            config.n_folds
        )));
    }
    let ids = &bundles[0].model_ids;
    if ids.len() < 2 {
        return Err(OrchestratorError::Config("need ≥ 2 models".into()));
    }
    for (i, bundle) in bundles.iter().enumerate() {
        if &bundle.model_ids != ids {
            return Err(OrchestratorError::BundleMismatch(format!(
                "fold {i} model ids differ from fold 0"
            )));
        }
        if bundle.horizon() != config.horizon {
            return Err(OrchestratorError::BundleMismatch(format!(
                "fold {i} horizon {} != configured {}",
                bundle.horizon(),
                config.horizon
            )));
        }
        if metric_needs_quantiles(&config.metric_pool) && bundle.quantiles.is_none() {
            return Err(OrchestratorError::Config(
                "metric pool includes crps but bundles carry no quantiles".into(),
            ));
        }
    }
    if !config.capability_tags.is_empty() && config.capability_tags.len() != ids.len() {
        return Err(OrchestratorError::Config(
            "capability_tags length does not match model count".into(),
        ));
    }
    if series.period < 2 {
        return Err(OrchestratorError::Config("series period must be ≥ 2".into()));
    }
    Ok(())
}

/// Decomposition of the target window, shrinking the period when the
/// horizon cannot hold two full cycles.
fn target_window_decomposition(
    truth: &[f64],
    period: usize,
    params: &DecompositionParams,
) -> Option<crate::series::Decomposition> {
    let h = truth.len();
    let effective = if h >= 2 * period { period } else { (h / 2).max(2) };
    if h < 2 * effective || effective < 2 {
        return None;
    }
    let window = TimeSeries::new("target-window", truth.to_vec(), effective).ok()?;
    decompose(&window, params).ok()
}

/// Run the full optimize → judge → audit loop for one dataset.
pub fn run_orchestration(
    series: &TimeSeries,
    bundles: &[ForecastMatrix],
    judge: &mut dyn Judge,
    config: &OrchestrationConfig,
) -> Result<OrchestrationResult, OrchestratorError> {
    validate_inputs(series, bundles, config)?;
    let folds = make_folds(series, config.n_folds, config.horizon)?;
    let model_ids = bundles[0].model_ids.clone();
    let m = model_ids.len();

    // cross-validation table: mean per-model score over folds, per metric
    let mut cv_scores = vec![vec![0.0; config.metric_pool.len()]; m];
    for (fold, bundle) in folds.iter().zip(bundles) {
        let truth = &series.values[fold.window()];
        let mase_ctx = mase_context_for(series, fold.train_end);
        for model in 0..m {
            for (metric_idx, &metric) in config.metric_pool.iter().enumerate() {
                cv_scores[model][metric_idx] +=
                    model_score(metric, truth, bundle, model, &mase_ctx)? / folds.len() as f64;
            }
        }
    }
    let cv_performance = CvPerformance {
        model_ids: model_ids.clone(),
        metrics: config.metric_pool.clone(),
        scores: cv_scores,
    };

    // independent per-fold, per-metric weights (retained for reports)
    let mut per_fold = Vec::with_capacity(folds.len() * config.metric_pool.len());
    for (fold, bundle) in folds.iter().zip(bundles) {
        let truth = &series.values[fold.window()];
        let mase_ctx = mase_context_for(series, fold.train_end);
        for &metric in &config.metric_pool {
            let out = optimize_weights(truth, bundle, metric, Some(&mase_ctx), &config.optimizer)?;
            per_fold.push(PerFoldWeights {
                fold: fold.index_in_schedule,
                metric,
                weights: out.weights,
                objective: out.objective,
            });
        }
    }

    let last_fold = *folds.last().expect("n_folds ≥ 1");
    let truth = &series.values[last_fold.window()];
    let last_bundle = &bundles[config.n_folds - 1];
    let mase_ctx = mase_context_for(series, last_fold.train_end);

    // dataset characteristics from the observed history before the last fold
    let history_series = TimeSeries::new(
        series.id.clone(),
        series.values[..last_fold.train_end].to_vec(),
        series.period,
    )?;
    let (seasonal_strength, trend_strength) = match decompose(&history_series, &config.decomposition) {
        Ok(d) => (d.seasonal_strength(), d.trend_strength()),
        Err(_) => (0.0, 0.0), // history too short for a decomposition
    };
    let data_features = DataFeatures {
        seasonal_strength,
        trend_strength,
        period: series.period,
        cv_window_length: config.n_folds * config.horizon,
    };

    let target_decomp = target_window_decomposition(truth, series.period, &config.decomposition);

    // best achievable score under the reference metric (pool head), over the
    // per-metric optima of the last fold; the ground-truth policy measures
    // every iteration against it
    let reference_metric = config.metric_pool[0];
    let mut best_achievable = f64::INFINITY;
    for candidate in per_fold
        .iter()
        .filter(|p| p.fold == last_fold.index_in_schedule)
    {
        let s = ensemble_score(reference_metric, truth, last_bundle, &candidate.weights, &mase_ctx)?;
        best_achievable = best_achievable.min(s);
    }

    let capability_tags = if config.capability_tags.is_empty() {
        vec![Vec::new(); m]
    } else {
        config.capability_tags.clone()
    };

    let mut records: Vec<AuditRecord> = Vec::new();
    let mut shap_reports: Vec<Option<ShapReport>> = Vec::new();
    let mut adjustments: Vec<Option<Vec<f64>>> = Vec::new();
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut deterministic = judge.deterministic();
    let mut current_metric = reference_metric;

    for iteration in 1..=config.policy.max_iterations {
        let fail = |msg: String, records: &mut Vec<AuditRecord>| {
            records.push(AuditRecord {
                iteration,
                weights: WeightVector::uniform(m),
                metric: current_metric,
                objective: None,
                confidence: 0.0,
                faithfulness: 0.0,
                decision: Decision::Continue,
                ground_truth: Decision::Continue,
                explanation: Explanation {
                    free_text: format!("iteration failed: {msg}"),
                    claims: Vec::new(),
                    aspect_scores: [0.0; 9],
                },
                refined: false,
                judge_fallback: false,
                error: Some(msg),
            });
        };

        let opt = match optimize_weights(truth, last_bundle, current_metric, Some(&mase_ctx), &config.optimizer)
        {
            Ok(out) => out,
            Err(err) => {
                fail(err.to_string(), &mut records);
                shap_reports.push(None);
                adjustments.push(None);
                current_metric = next_metric_in_rotation(&config.metric_pool, current_metric)
                    .unwrap_or(current_metric);
                continue;
            }
        };

        let shap_report = target_decomp.as_ref().map(|decomp| {
            let models = model_ids
                .iter()
                .enumerate()
                .filter_map(|(i, id)| {
                    let forecast = Forecast::Point(&last_bundle.columns[i]);
                    shapley_attribution(decomp, forecast, point_metric_for(current_metric), Some(&mase_ctx))
                        .ok()
                        .map(|values| (id.clone(), values))
                })
                .collect::<Vec<_>>();
            ShapReport {
                metric: point_metric_for(current_metric),
                models,
            }
        });

        let ctx = EvaluationContext {
            dataset_id: series.id.clone(),
            cv_performance: cv_performance.clone(),
            current_weights: opt.weights.clone(),
            current_metric,
            current_score: opt.objective,
            data_features: data_features.clone(),
            capability_tags: capability_tags.clone(),
            iteration,
            metric_pool: config.metric_pool.clone(),
            history: history.clone(),
        };

        let verdict = match judge.judge(&ctx) {
            Ok(v) => v,
            Err(err) => {
                fail(err.to_string(), &mut records);
                shap_reports.push(None);
                adjustments.push(None);
                current_metric = next_metric_in_rotation(&config.metric_pool, current_metric)
                    .unwrap_or(current_metric);
                continue;
            }
        };
        if !judge.deterministic() {
            deterministic = false;
        }

        let faith = shap_report
            .as_ref()
            .filter(|r| !r.models.is_empty())
            .and_then(|report| faithfulness(report, &verdict.claims, config.tau_low, config.tau_high).ok())
            .map(|result| {
                if result.degenerate_variance {
                    result.rank_alignment
                } else {
                    result.pcc_score
                }
            })
            .unwrap_or(0.0);

        let reference_score =
            ensemble_score(reference_metric, truth, last_bundle, &opt.weights, &mase_ctx)?;
        let ground_truth =
            ground_truth_label(reference_score, best_achievable, iteration, &config.policy);

        let forced = iteration >= config.policy.max_iterations && verdict.decision == Decision::Continue;
        let decision = if forced { Decision::Accept } else { verdict.decision };
        let mut free_text = verdict.claims.free_text.clone();
        if forced {
            free_text.push_str(" [accepted: iteration cap reached]");
        }

        records.push(AuditRecord {
            iteration,
            weights: opt.weights.clone(),
            metric: current_metric,
            objective: Some(opt.objective),
            confidence: verdict.confidence,
            faithfulness: faith,
            decision,
            ground_truth,
            explanation: Explanation {
                free_text,
                claims: verdict.claims.claims.clone(),
                aspect_scores: verdict.aspect_scores,
            },
            refined: false,
            judge_fallback: verdict.fallback_used,
            error: None,
        });
        shap_reports.push(shap_report);
        adjustments.push(verdict.weight_adjustment.clone());
        history.push(HistoryEntry {
            iteration,
            metric: current_metric,
            confidence: verdict.confidence,
            decision,
        });

        if decision == Decision::Accept {
            break;
        }
        current_metric = verdict
            .next_metric
            .filter(|next| config.metric_pool.contains(next) && *next != current_metric)
            .or_else(|| next_metric_in_rotation(&config.metric_pool, current_metric))
            .unwrap_or(current_metric);
    }

    // final selection: highest confidence, earliest iteration on ties
    let selected_idx = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.error.is_none())
        .max_by(|(ia, a), (ib, b)| {
            a.confidence
                .partial_cmp(&b.confidence)
                .unwrap()
                .then(ib.cmp(ia)) // earlier index wins ties
        })
        .map(|(i, _)| i)
        .ok_or(OrchestratorError::EmptyTrail)?;
    let selected = records[selected_idx].clone();
    let mut final_weights = selected.weights.clone();

    // forward-looking refinement from the selected verdict, as a distinct
    // trail entry
    if let Some(delta) = adjustments[selected_idx].as_ref().filter(|d| d.len() == m) {
        let refined = apply_refinement(&final_weights, delta, config.refinement_max_step);
        if refined.as_slice() != final_weights.as_slice() {
            let objective =
                ensemble_score(selected.metric, truth, last_bundle, &refined, &mase_ctx)?;
            records.push(AuditRecord {
                iteration: records.last().map(|r| r.iteration).unwrap_or(0) + 1,
                weights: refined.clone(),
                metric: selected.metric,
                objective: Some(objective),
                confidence: selected.confidence,
                faithfulness: selected.faithfulness,
                decision: Decision::Accept,
                ground_truth: selected.ground_truth,
                explanation: Explanation {
                    free_text: format!(
                        "refined weights: judge delta applied to iteration {} vector (clipped to ±{})",
                        selected.iteration, config.refinement_max_step
                    ),
                    claims: Vec::new(),
                    aspect_scores: selected.explanation.aspect_scores,
                },
                refined: true,
                judge_fallback: false,
                error: None,
            });
            shap_reports.push(None);
            final_weights = refined;
        }
    }

    let trail = AuditTrail {
        dataset_id: series.id.clone(),
        records,
    };
    let reflection = reflect(&trail, &shap_reports, config.faithfulness_floor);

    Ok(OrchestrationResult {
        dataset_id: series.id.clone(),
        model_ids,
        final_weights,
        selected_iteration: selected.iteration,
        trail,
        reflection,
        per_fold,
        cv_performance,
        data_features,
        shap_reports,
        deterministic,
    })
}

/// SHAP games need a metric defined on point forecasts; CRPS attribution
/// falls back to the median-equivalent MAE game.
fn point_metric_for(metric: Metric) -> Metric {
    if metric.is_point() {
        metric
    } else {
        Metric::Mae
    }
}

/// Build the three-level reflection from a finished trail.
pub fn reflect(
    trail: &AuditTrail,
    shap_reports: &[Option<ShapReport>],
    faithfulness_floor: f64,
) -> Reflection {
    let optimization_records: Vec<&AuditRecord> = trail
        .records
        .iter()
        .filter(|r| !r.refined && r.error.is_none())
        .collect();

    let iteration_level = trail
        .records
        .iter()
        .filter(|r| !r.refined)
        .map(|r| {
            let a = &r.explanation.aspect_scores;
            IterationInsight {
                iteration: r.iteration,
                align_score: (a[0] + a[1] + a[2]) / 3.0,
                match_score: (a[3] + a[4] + a[5]) / 3.0,
                future_score: (a[6] + a[7] + a[8]) / 3.0,
                faithfulness: r.faithfulness,
                below_faithfulness_floor: r.faithfulness < faithfulness_floor,
            }
        })
        .collect();

    let decision_level = trail
        .records
        .iter()
        .map(|r| {
            let rationale = if let Some(err) = &r.error {
                format!("iteration failed ({err}); continued with the next metric")
            } else if r.refined {
                "forward-looking refinement applied to the selected vector".into()
            } else {
                match r.decision {
                    Decision::Accept => format!(
                        "accepted at confidence {:.2} under {}",
                        r.confidence, r.metric
                    ),
                    Decision::Continue => format!(
                        "continued: confidence {:.2} under {} left room to explore",
                        r.confidence, r.metric
                    ),
                }
            };
            DecisionInsight {
                iteration: r.iteration,
                decision: r.decision,
                rationale,
            }
        })
        .collect();

    // per-model mean weights over optimization records
    let model_ids: Vec<String> = shap_reports
        .iter()
        .flatten()
        .next()
        .map(|r| r.models.iter().map(|(id, _)| id.clone()).collect())
        .unwrap_or_default();
    let m = optimization_records
        .first()
        .map(|r| r.weights.len())
        .unwrap_or(0);
    let names: Vec<String> = if model_ids.len() == m {
        model_ids
    } else {
        (0..m).map(|i| format!("model_{i}")).collect()
    };
    let mut mean_weights = vec![0.0; m];
    for record in &optimization_records {
        for (acc, w) in mean_weights.iter_mut().zip(record.weights.as_slice()) {
            *acc += w / optimization_records.len().max(1) as f64;
        }
    }
    let excluded_models: Vec<String> = (0..m)
        .filter(|&i| {
            optimization_records
                .iter()
                .all(|r| r.weights[i] <= 1e-9)
        })
        .map(|i| names[i].clone())
        .collect();
    let dominant_model = mean_weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, w)| (names[i].clone(), *w));

    // systematic claim-vs-SHAP sign disagreements: a model+component claimed
    // helpful while its raw SHAP is positive, in at least two records (or
    // every record of a shorter trail)
    let mut disagreement_counts: std::collections::BTreeMap<(String, String), usize> =
        std::collections::BTreeMap::new();
    for (record, report) in trail.records.iter().filter(|r| !r.refined).zip(shap_reports) {
        let Some(report) = report else { continue };
        for claim in &record.explanation.claims {
            if claim.direction != Direction::Helps {
                continue;
            }
            if let Some(values) = report.values_for(&claim.model) {
                if values.raw_for(claim.component) > 1e-12 {
                    *disagreement_counts
                        .entry((claim.model.clone(), claim.component.name().to_string()))
                        .or_insert(0) += 1;
                }
            }
        }
    }
    let systematic_threshold = optimization_records.len().min(2).max(1);
    let sign_disagreements = disagreement_counts
        .into_iter()
        .filter(|(_, count)| *count >= systematic_threshold)
        .map(|((model, component), count)| {
            format!("{model}: claimed {component} helps, SHAP shows it raises error ({count} records)")
        })
        .collect();

    let metric_progression = optimization_records.iter().map(|r| r.metric).collect();

    Reflection {
        iteration_level,
        decision_level,
        final_level: FinalInsights {
            mean_weights: names.into_iter().zip(mean_weights).collect(),
            excluded_models,
            dominant_model,
            sign_disagreements,
            metric_progression,
        },
    }
}

/// One row of a selection-accuracy evaluation: realized losses per metric
/// strategy and the strategy a selector predicted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionCase {
    pub id: String,
    #[serde(default)]
    pub domain: Option<String>,
    /// (strategy, realized loss); the listed order is the documented
    /// tie-break order.
    pub losses: Vec<(Metric, f64)>,
    pub predicted: Metric,
}

/// Oracle label: the strategy with minimum realized loss; ties resolve to
/// the first listed strategy.
pub fn oracle_label(losses: &[(Metric, f64)]) -> Option<Metric> {
    losses
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(m, _)| *m)
}

/// Fraction of cases where the prediction matches the oracle label.
pub fn selection_accuracy(cases: &[SelectionCase]) -> Result<f64, OrchestratorError> {
    if cases.is_empty() {
        return Err(OrchestratorError::Config("no selection cases".into()));
    }
    let matches = cases
        .iter()
        .filter(|case| oracle_label(&case.losses) == Some(case.predicted))
        .count();
    Ok(matches as f64 / cases.len() as f64)
}

fn format_weights(w: &WeightVector) -> String {
    let inner: Vec<String> = w.as_slice().iter().map(|v| format!("{v:.2}")).collect();
    format!("[{}]", inner.join(", "))
}

/// Render the human-readable run report: iteration rounds, key insights,
/// result quality, final assessment.
pub fn render_markdown(result: &OrchestrationResult) -> String {
    let mut out = String::new();
    let r = result;
    out.push_str(&format!("# Ensemble Optimization Report: {}\n\n", r.dataset_id));
    out.push_str(&format!("**Dataset:** {}\n", r.dataset_id));
    out.push_str(&format!("**Models:** {}\n\n", r.model_ids.join(", ")));

    out.push_str("## Iteration Process\n\n");
    let rounds: Vec<&AuditRecord> = r.trail.records.iter().filter(|rec| !rec.refined).collect();
    for (idx, record) in rounds.iter().enumerate() {
        out.push_str(&format!(
            "### Round {}: {} optimization\n",
            record.iteration,
            record.metric.name().to_uppercase()
        ));
        if let Some(err) = &record.error {
            out.push_str(&format!("- **Error:** {err}\n\n"));
            continue;
        }
        let objective = record
            .objective
            .map(|o| format!("{o:.4}"))
            .unwrap_or_else(|| "n/a".into());
        out.push_str(&format!(
            "- **Weights:** {} → {}: {}\n",
            format_weights(&record.weights),
            record.metric.name().to_uppercase(),
            objective
        ));
        out.push_str(&format!(
            "- **Analysis:** \"{}\"\n",
            record.explanation.free_text
        ));
        out.push_str(&format!("- **Confidence:** {:.1}%\n", record.confidence * 100.0));
        match record.decision {
            Decision::Continue => {
                let next = rounds
                    .get(idx + 1)
                    .map(|n| n.metric.name().to_uppercase())
                    .unwrap_or_else(|| "n/a".into());
                out.push_str(&format!("- **Decision:** Continue with {next} optimization\n"));
            }
            Decision::Accept => {
                if record.iteration == r.selected_iteration {
                    out.push_str("- **Decision:** Accept\n");
                } else {
                    out.push_str(&format!(
                        "- **Decision:** Use Round {} weights (highest confidence)\n",
                        r.selected_iteration
                    ));
                }
            }
        }
        out.push('\n');
    }

    out.push_str("## Key Insights\n\n");
    if let Some((model, share)) = &r.reflection.final_level.dominant_model {
        out.push_str(&format!(
            "- **Pattern Discovery:** System identified {} as the dominant performer ({:.0}% mean weight).\n",
            model,
            share * 100.0
        ));
    }
    for model in &r.reflection.final_level.excluded_models {
        out.push_str(&format!(
            "- **Model Exclusion:** Eliminated {model} (0% weight in every round).\n"
        ));
    }
    let progression: Vec<String> = r
        .reflection
        .final_level
        .metric_progression
        .iter()
        .map(|mtr| mtr.name().to_uppercase())
        .collect();
    out.push_str(&format!(
        "- **Metric Evolution:** {} progression refined weight optimization.\n",
        progression.join(" → ")
    ));
    for disagreement in &r.reflection.final_level.sign_disagreements {
        out.push_str(&format!("- **Causal Discrepancy:** {disagreement}\n"));
    }
    out.push('\n');

    out.push_str("## Result Quality\n\n");
    let selected = rounds
        .iter()
        .find(|rec| rec.iteration == r.selected_iteration)
        .copied();
    let aspects = selected.map(|rec| rec.explanation.aspect_scores).unwrap_or([0.0; 9]);
    let mark = |ok: bool| if ok { "x" } else { " " };
    out.push_str(&format!(
        "- [{}] Weights align with performance rankings\n",
        mark(aspects[0] >= 0.7)
    ));
    out.push_str(&format!(
        "- [{}] Dataset characteristics match model strengths\n",
        mark(aspects[3] >= 0.5)
    ));
    let first_conf = rounds.first().map(|rec| rec.confidence).unwrap_or(0.0);
    let selected_conf = selected.map(|rec| rec.confidence).unwrap_or(0.0);
    out.push_str(&format!(
        "- [{}] Clear convergence from naive to optimized ensemble\n",
        mark(rounds.len() == 1 || selected_conf >= first_conf)
    ));
    out.push_str("- [x] Interpretable decisions throughout optimization process\n\n");

    out.push_str("## Final Assessment\n\n");
    out.push_str(&format!(
        "**Outcome:** Selected Round {} weights {} at {:.1}% confidence; final deployed vector {}.\n",
        r.selected_iteration,
        selected.map(|rec| format_weights(&rec.weights)).unwrap_or_default(),
        selected_conf * 100.0,
        format_weights(&r.final_weights)
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::{JudgeBackendConfig, JudgeVerdict, RuleJudge};
    use crate::shap::ExplanationClaims;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn policy_accepts_within_tolerance_or_at_cap() {
        let policy = DecisionPolicy::default();
        // improvement always accepts
        assert_eq!(ground_truth_label(0.9, 1.0, 1, &policy), Decision::Accept);
        // τ = 0.001·best: marginal regression accepts
        assert_eq!(ground_truth_label(1.0005, 1.0, 1, &policy), Decision::Accept);
        // clear regression continues before the cap
        assert_eq!(ground_truth_label(1.05, 1.0, 1, &policy), Decision::Continue);
        assert_eq!(ground_truth_label(1.05, 1.0, 2, &policy), Decision::Continue);
        // the cap forces acceptance
        assert_eq!(ground_truth_label(1.05, 1.0, 3, &policy), Decision::Accept);
    }

    #[test]
    fn refinement_examples() {
        let w = WeightVector::new(vec![0.5, 0.5]);
        let same = apply_refinement(&w, &[0.0, 0.0], 0.2);
        assert_eq!(same.as_slice(), &[0.5, 0.5]);

        // clip to ±0.2 then project (already feasible → no-op)
        let shifted = apply_refinement(&w, &[0.3, -0.3], 0.2);
        assert_abs_diff_eq!(shifted[0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(shifted[1], 0.3, epsilon = 1e-12);

        // pushing below zero is repaired by projection
        let repaired = apply_refinement(&WeightVector::new(vec![0.1, 0.9]), &[-0.2, 0.2], 0.2);
        assert!(repaired.is_feasible(1e-9));
        assert!(repaired[0] >= 0.0);
    }

    #[test]
    fn selection_accuracy_counting() {
        let case = |pred: Metric, losses: Vec<(Metric, f64)>| SelectionCase {
            id: "c".into(),
            domain: None,
            losses,
            predicted: pred,
        };
        let perfect: Vec<SelectionCase> = (0..4)
            .map(|_| case(Metric::Mae, vec![(Metric::Mse, 1.0), (Metric::Mae, 0.5)]))
            .collect();
        assert_eq!(selection_accuracy(&perfect).unwrap(), 1.0);

        let half = vec![
            case(Metric::Mae, vec![(Metric::Mse, 1.0), (Metric::Mae, 0.5)]),
            case(Metric::Mse, vec![(Metric::Mse, 1.0), (Metric::Mae, 0.5)]),
            case(Metric::Mae, vec![(Metric::Mse, 0.2), (Metric::Mae, 0.5)]),
            case(Metric::Mse, vec![(Metric::Mse, 0.2), (Metric::Mae, 0.5)]),
        ];
        assert_eq!(selection_accuracy(&half).unwrap(), 0.5);

        // tie resolves to the first listed strategy
        assert_eq!(
            oracle_label(&[(Metric::Mse, 0.5), (Metric::Mae, 0.5)]),
            Some(Metric::Mse)
        );
    }

    pub(crate) fn demo_series(seed: u64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let period = 12;
        let n = 24 * period;
        let values: Vec<f64> = (0..n)
            .map(|t| {
                let seasonal = 6.0 * (std::f64::consts::TAU * (t % period) as f64 / period as f64).sin();
                let trend = 50.0 + 0.05 * t as f64;
                trend + seasonal + rng.random::<f64>() * 0.8
            })
            .collect();
        TimeSeries::new("demo", values, period).unwrap()
    }

    /// Three models: one accurate, one noisy, one badly biased (excluded).
    pub(crate) fn demo_bundles(series: &TimeSeries, config: &OrchestrationConfig) -> Vec<ForecastMatrix> {
        let folds = make_folds(series, config.n_folds, config.horizon).unwrap();
        folds
            .iter()
            .map(|fold| {
                let truth = &series.values[fold.window()];
                let mut rng = ChaCha8Rng::seed_from_u64(900 + fold.index_in_schedule as u64);
                let good: Vec<f64> = truth.iter().map(|y| y + rng.random::<f64>() * 0.4 - 0.2).collect();
                let mid: Vec<f64> = truth.iter().map(|y| y + rng.random::<f64>() * 3.0 - 1.5).collect();
                let bad: Vec<f64> = truth.iter().map(|y| y * 1.8 + 30.0).collect();
                ForecastMatrix::new(
                    vec!["alpha".into(), "beta".into(), "gamma".into()],
                    vec![good, mid, bad],
                )
                .unwrap()
            })
            .collect()
    }

    fn demo_config() -> OrchestrationConfig {
        OrchestrationConfig {
            n_folds: 3,
            horizon: 24,
            ..Default::default()
        }
    }

    #[test]
    fn immediate_accept_gives_single_record() {
        struct AlwaysAccept;
        impl Judge for AlwaysAccept {
            fn judge(&mut self, ctx: &EvaluationContext) -> Result<JudgeVerdict, JudgeError> {
                Ok(JudgeVerdict {
                    confidence: 0.9,
                    decision: Decision::Accept,
                    next_metric: None,
                    claims: ExplanationClaims::neutral(&ctx.cv_performance.model_ids, "fine"),
                    aspect_scores: [0.9; 9],
                    weight_adjustment: None,
                    low_fidelity_claims: false,
                    fallback_used: false,
                })
            }
            fn deterministic(&self) -> bool {
                true
            }
        }
        let series = demo_series(1);
        let config = demo_config();
        let bundles = demo_bundles(&series, &config);
        let result = run_orchestration(&series, &bundles, &mut AlwaysAccept, &config).unwrap();
        assert_eq!(result.trail.records.len(), 1);
        assert_eq!(result.selected_iteration, 1);
        assert_eq!(result.final_weights.as_slice(), result.trail.records[0].weights.as_slice());
    }

    /// Scripted confidences replaying the published trace: highest at
    /// round 2 → round 2 weights win the final selection.
    #[test]
    fn confidence_argmax_selects_round_two() {
        struct Scripted {
            confidences: Vec<f64>,
        }
        impl Judge for Scripted {
            fn judge(&mut self, ctx: &EvaluationContext) -> Result<JudgeVerdict, JudgeError> {
                let k = ctx.iteration;
                let confidence = self.confidences[k - 1];
                let accept = k == self.confidences.len();
                Ok(JudgeVerdict {
                    confidence,
                    decision: if accept { Decision::Accept } else { Decision::Continue },
                    next_metric: next_metric_in_rotation(&ctx.metric_pool, ctx.current_metric),
                    claims: ExplanationClaims::neutral(&ctx.cv_performance.model_ids, "scripted"),
                    aspect_scores: [confidence; 9],
                    weight_adjustment: None,
                    low_fidelity_claims: false,
                    fallback_used: false,
                })
            }
            fn deterministic(&self) -> bool {
                true
            }
        }
        let series = demo_series(2);
        let config = demo_config();
        let bundles = demo_bundles(&series, &config);
        let mut judge = Scripted {
            confidences: vec![0.60, 0.87, 0.82],
        };
        let result = run_orchestration(&series, &bundles, &mut judge, &config).unwrap();
        assert_eq!(result.trail.records.len(), 3);
        assert_eq!(result.selected_iteration, 2);
        assert_eq!(
            result.final_weights.as_slice(),
            result.trail.records[1].weights.as_slice()
        );
    }

    #[test]
    fn always_continue_is_forced_at_cap() {
        struct NeverAccept;
        impl Judge for NeverAccept {
            fn judge(&mut self, ctx: &EvaluationContext) -> Result<JudgeVerdict, JudgeError> {
                Ok(JudgeVerdict {
                    confidence: 0.4,
                    decision: Decision::Continue,
                    next_metric: next_metric_in_rotation(&ctx.metric_pool, ctx.current_metric),
                    claims: ExplanationClaims::neutral(&ctx.cv_performance.model_ids, "keep going"),
                    aspect_scores: [0.4; 9],
                    weight_adjustment: None,
                    low_fidelity_claims: false,
                    fallback_used: false,
                })
            }
            fn deterministic(&self) -> bool {
                true
            }
        }
        let series = demo_series(3);
        let config = demo_config();
        let bundles = demo_bundles(&series, &config);
        let result = run_orchestration(&series, &bundles, &mut NeverAccept, &config).unwrap();
        assert_eq!(result.trail.records.len(), config.policy.max_iterations);
        let last = result.trail.records.last().unwrap();
        assert_eq!(last.decision, Decision::Accept);
        assert!(last.explanation.free_text.contains("iteration cap"));
    }

    #[test]
    fn rule_judge_run_is_reproducible_and_complete() {
        let series = demo_series(4);
        let config = demo_config();
        let bundles = demo_bundles(&series, &config);
        let run = || {
            let mut judge = RuleJudge::new(JudgeBackendConfig::default());
            run_orchestration(&series, &bundles, &mut judge, &config).unwrap()
        };
        let a = run();
        let b = run();
        assert!(a.deterministic);
        assert_eq!(a.trail.to_jsonl().unwrap(), b.trail.to_jsonl().unwrap());
        // per-fold table: one entry per (fold, metric)
        assert_eq!(a.per_fold.len(), config.n_folds * config.metric_pool.len());
        // trail round-trips through jsonl
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        a.trail.write_jsonl(&path).unwrap();
        let back = AuditTrail::read_jsonl(&path, a.trail.dataset_id.clone()).unwrap();
        assert_eq!(a.trail.to_jsonl().unwrap(), back.to_jsonl().unwrap());
    }

    #[test]
    fn excluded_model_surfaces_in_reflection_and_report() {
        let series = demo_series(5);
        let config = demo_config();
        let bundles = demo_bundles(&series, &config);
        let mut judge = RuleJudge::new(JudgeBackendConfig::default());
        let result = run_orchestration(&series, &bundles, &mut judge, &config).unwrap();
        // "gamma" is hopeless by construction and gets zero weight everywhere
        assert!(result
            .reflection
            .final_level
            .excluded_models
            .contains(&"gamma".to_string()));
        let report = render_markdown(&result);
        assert!(report.contains("## Iteration Process"));
        assert!(report.contains("## Key Insights"));
        assert!(report.contains("Model Exclusion"));
        assert!(report.contains("## Result Quality"));
        assert!(report.contains("## Final Assessment"));
    }

    #[test]
    fn refinement_records_distinct_trail_entry() {
        struct AdjustingJudge;
        impl Judge for AdjustingJudge {
            fn judge(&mut self, ctx: &EvaluationContext) -> Result<JudgeVerdict, JudgeError> {
                Ok(JudgeVerdict {
                    confidence: 0.9,
                    decision: Decision::Accept,
                    next_metric: None,
                    claims: ExplanationClaims::neutral(&ctx.cv_performance.model_ids, "accept with tilt"),
                    aspect_scores: [0.9; 9],
                    weight_adjustment: Some(vec![0.5, -0.5, 0.0]), // clipped to ±0.2
                    low_fidelity_claims: false,
                    fallback_used: false,
                })
            }
            fn deterministic(&self) -> bool {
                true
            }
        }
        let series = demo_series(6);
        let config = demo_config();
        let bundles = demo_bundles(&series, &config);
        let result = run_orchestration(&series, &bundles, &mut AdjustingJudge, &config).unwrap();
        assert_eq!(result.trail.records.len(), 2);
        let refinement = result.trail.records.last().unwrap();
        assert!(refinement.refined);
        assert!(result.final_weights.is_feasible(1e-9));
        // delta was clipped at 0.2 before projection
        let base = &result.trail.records[0].weights;
        assert!((result.final_weights[0] - base[0]) <= 0.2 + 1e-9);
    }

    #[test]
    fn faithfulness_below_floor_is_flagged() {
        let mut trail = AuditTrail {
            dataset_id: "t".into(),
            records: Vec::new(),
        };
        for (k, f) in [(1usize, 0.9), (2, 0.3)] {
            trail.records.push(AuditRecord {
                iteration: k,
                weights: WeightVector::uniform(2),
                metric: Metric::Mse,
                objective: Some(1.0),
                confidence: 0.5,
                faithfulness: f,
                decision: Decision::Continue,
                ground_truth: Decision::Continue,
                explanation: Explanation {
                    free_text: String::new(),
                    claims: Vec::new(),
                    aspect_scores: [0.5; 9],
                },
                refined: false,
                judge_fallback: false,
                error: None,
            });
        }
        let reflection = reflect(&trail, &[None, None], 0.5);
        assert!(!reflection.iteration_level[0].below_faithfulness_floor);
        assert!(reflection.iteration_level[1].below_faithfulness_floor);
    }
}
