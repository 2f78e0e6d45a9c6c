//! Deterministic rule-based judge: a nine-aspect rubric over the evaluation
//! context, grouped Align (1–3), Match (4–6), Future (7–9). Confidence is
//! the mean of the nine scores; the decision accepts when confidence clears
//! the threshold and no seasonality-risk override fires, or when the
//! iteration cap forces termination.

use super::{
    compute_seasonality_risk, next_metric_in_rotation, Decision, EvaluationContext, Judge,
    JudgeBackendConfig, JudgeError, JudgeVerdict,
};
use crate::series::Component;
use crate::shap::{ComponentClaim, Direction, ExplanationClaims};

pub struct RuleJudge {
    config: JudgeBackendConfig,
}

impl RuleJudge {
    pub fn new(config: JudgeBackendConfig) -> Self {
        Self { config }
    }
}

fn argmin(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

struct RubricInputs {
    weights: Vec<f64>,
    /// Per-model scores on the current metric.
    scores: Vec<f64>,
    /// Relative best-to-worst gap on the current metric exceeds 1%.
    perf_signal: bool,
    /// Worst model at least 2× the best model's score.
    gap_2x: bool,
    best_model: usize,
    worst_model: usize,
}

impl RubricInputs {
    fn gather(ctx: &EvaluationContext) -> RubricInputs {
        let m = ctx.cv_performance.n_models();
        let weights = ctx.current_weights.as_slice().to_vec();
        let scores: Vec<f64> = (0..m)
            .map(|i| ctx.cv_performance.score_of(i, ctx.current_metric).unwrap_or(f64::NAN))
            .collect();
        let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let worst = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let perf_signal = scores.iter().all(|s| s.is_finite())
            && (worst - best) > 0.01 * best.abs().max(1e-12);
        let gap_2x = perf_signal && worst >= 2.0 * best.max(1e-300);
        RubricInputs {
            best_model: argmin(&scores),
            worst_model: argmax(&scores),
            weights,
            scores,
            perf_signal,
            gap_2x,
        }
    }

    /// Pairwise concordance of weights against inverted scores. Pairs tied
    /// on both sides are uninformative (half credit); pairs tied on exactly
    /// one side earn a quarter.
    fn concordance(&self) -> f64 {
        let m = self.weights.len();
        if m < 2 {
            return 0.5;
        }
        let sign = |d: f64| {
            if d > 1e-12 {
                1i8
            } else if d < -1e-12 {
                -1
            } else {
                0
            }
        };
        let mut credit = 0.0;
        let mut pairs = 0usize;
        for i in 0..m {
            for j in i + 1..m {
                let dw = sign(self.weights[i] - self.weights[j]);
                let ds = sign(self.scores[j] - self.scores[i]); // lower score ↔ higher weight
                credit += match (dw, ds) {
                    (0, 0) => 0.5,
                    (0, _) | (_, 0) => 0.25,
                    (a, b) if a == b => 1.0,
                    _ => 0.0,
                };
                pairs += 1;
            }
        }
        credit / pairs as f64
    }
}

/// The nine rubric aspects and the derived confidence (their mean).
pub fn rule_rubric(ctx: &EvaluationContext) -> ([f64; 9], f64) {
    let inputs = RubricInputs::gather(ctx);
    let feasible = ctx.current_weights.is_feasible(1e-6);
    let max_w = inputs.weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_w = inputs.weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let argmax_w = argmax(&inputs.weights);
    let features = &ctx.data_features;

    // Align group
    let a1 = inputs.concordance();
    let a2 = if !feasible {
        0.0
    } else if !inputs.perf_signal {
        0.5
    } else if argmax_w == inputs.best_model {
        1.0
    } else if inputs.weights[inputs.best_model] < 1.0 / inputs.weights.len() as f64 {
        0.25
    } else {
        0.6
    };
    let a3 = if !inputs.perf_signal {
        0.5
    } else if inputs.gap_2x && (max_w - min_w) < 0.1 {
        0.2
    } else if max_w >= 0.55 && argmax_w == inputs.best_model {
        1.0
    } else if max_w >= 0.55 {
        0.3
    } else {
        0.6
    };

    // Match group
    let a4 = {
        let mut checks = Vec::new();
        let mass_for = |tag: &str| -> f64 {
            ctx.capability_tags
                .iter()
                .zip(&inputs.weights)
                .filter(|(tags, _)| tags.iter().any(|t| t == tag))
                .map(|(_, w)| *w)
                .sum()
        };
        let has_tag = |tag: &str| ctx.capability_tags.iter().any(|t| t.iter().any(|x| x == tag));
        if features.seasonal_strength >= 0.6 && has_tag("seasonal") {
            checks.push((0.2 + 0.8 * mass_for("seasonal")).clamp(0.0, 1.0));
        }
        if features.trend_strength >= 0.6 && has_tag("trend") {
            checks.push((0.2 + 0.8 * mass_for("trend")).clamp(0.0, 1.0));
        }
        if checks.is_empty() {
            0.5
        } else {
            checks.iter().sum::<f64>() / checks.len() as f64
        }
    };
    let a5 = if !inputs.perf_signal {
        0.5
    } else {
        let dominated: Vec<usize> = (0..inputs.weights.len())
            .filter(|&i| {
                ctx.metric_pool.iter().all(|&metric| {
                    let mine = ctx.cv_performance.score_of(i, metric);
                    let best = (0..inputs.weights.len())
                        .filter_map(|j| ctx.cv_performance.score_of(j, metric))
                        .fold(f64::INFINITY, f64::min);
                    matches!(mine, Some(s) if s >= 5.0 * best.max(1e-300))
                })
            })
            .collect();
        if dominated.iter().any(|&i| inputs.weights[i] > 0.2) {
            0.2
        } else if !dominated.is_empty() && dominated.iter().all(|&i| inputs.weights[i] <= 0.05) {
            0.9
        } else if max_w >= 0.6 && argmax_w == inputs.best_model && inputs.gap_2x {
            0.9
        } else if inputs.weights.iter().filter(|w| **w >= 0.15).count() >= 2 {
            0.8
        } else {
            0.4
        }
    };
    let a6 = if features.cv_window_length >= 2 * features.period {
        0.8
    } else if features.seasonal_strength >= 0.6 {
        0.2
    } else {
        0.4
    };

    // Future group
    let a7 = if features.seasonal_strength < 0.6 {
        0.5
    } else {
        let risk = compute_seasonality_risk(ctx);
        if risk == 0.0 {
            0.9
        } else if risk.is_infinite() {
            0.0
        } else if risk <= 1.0 {
            0.6
        } else {
            0.2
        }
    };
    let a8 = if !inputs.perf_signal {
        0.5
    } else if inputs.weights[inputs.best_model] <= 0.01 {
        0.3
    } else if inputs.weights[inputs.worst_model] >= 0.5 {
        0.3
    } else {
        0.7
    };
    let mean8 = (a1 + a2 + a3 + a4 + a5 + a6 + a7 + a8) / 8.0;
    let explored: std::collections::BTreeSet<&str> = ctx
        .history
        .iter()
        .map(|h| h.metric.name())
        .chain(std::iter::once(ctx.current_metric.name()))
        .collect();
    let a9 = 0.5 * mean8 + 0.5 * (explored.len() as f64 / 2.0).min(1.0);

    let aspects = [a1, a2, a3, a4, a5, a6, a7, a8, a9];
    let confidence = aspects.iter().sum::<f64>() / 9.0;
    (aspects, confidence)
}

/// Deterministic structured claims derived from weights and data features;
/// the rule judge's counterpart of an LLM's explanation.
fn derive_claims(ctx: &EvaluationContext, free_text: String) -> ExplanationClaims {
    let features = &ctx.data_features;
    let residual_strength = (1.0 - features.seasonal_strength.max(features.trend_strength)).clamp(0.0, 1.0);
    let claims = ctx
        .cv_performance
        .model_ids
        .iter()
        .enumerate()
        .flat_map(|(i, model)| {
            let w = ctx.current_weights[i];
            Component::ALL.iter().map(move |&component| {
                let strength = match component {
                    Component::Trend => features.trend_strength,
                    Component::Seasonality => features.seasonal_strength,
                    Component::Residual => residual_strength,
                };
                ComponentClaim {
                    model: model.clone(),
                    component,
                    importance: (strength * (0.2 + 0.8 * w)).clamp(0.0, 1.0),
                    direction: if w >= 0.05 { Direction::Helps } else { Direction::Neutral },
                }
            })
        })
        .collect();
    ExplanationClaims { claims, free_text }
}

fn render_free_text(ctx: &EvaluationContext, aspects: &[f64; 9], confidence: f64, risk: f64) -> String {
    let inputs = RubricInputs::gather(ctx);
    let top = argmax(&inputs.weights);
    let mut text = format!(
        "Weights concentrate on {} ({:.1}%) under {}; performance-weight alignment {:.2}, confidence {:.2}.",
        ctx.cv_performance.model_ids[top],
        inputs.weights[top] * 100.0,
        ctx.current_metric,
        aspects[0],
        confidence,
    );
    if inputs.gap_2x && (inputs.weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - inputs.weights.iter().cloned().fold(f64::INFINITY, f64::min)) < 0.1 {
        text.push_str(" Near-equal weights ignore a 2x performance gap.");
    }
    if risk > 1.0 {
        text.push_str(&format!(
            " Seasonality risk {:.2} exceeds threshold; exploring another metric.",
            risk
        ));
    }
    text
}

impl Judge for RuleJudge {
    fn judge(&mut self, ctx: &EvaluationContext) -> Result<JudgeVerdict, JudgeError> {
        if ctx.metric_pool.is_empty() {
            return Err(JudgeError::EmptyMetricPool);
        }
        let (aspects, confidence) = rule_rubric(ctx);
        let risk = compute_seasonality_risk(ctx);
        let forced = ctx.iteration >= self.config.max_iterations;
        let next = next_metric_in_rotation(&ctx.metric_pool, ctx.current_metric);
        let accept = forced
            || next.is_none()
            || (confidence >= self.config.accept_threshold && risk <= self.config.risk_threshold);

        let free_text = render_free_text(ctx, &aspects, confidence, risk);
        Ok(JudgeVerdict {
            confidence,
            decision: if accept { Decision::Accept } else { Decision::Continue },
            next_metric: if accept { None } else { next },
            claims: derive_claims(ctx, free_text),
            aspect_scores: aspects,
            weight_adjustment: None,
            low_fidelity_claims: false,
            fallback_used: false,
        })
    }

    fn deterministic(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::context_fixture;
    use super::*;
    use crate::metrics::Metric;
    use crate::optimizer::WeightVector;

    fn ideal_context() -> EvaluationContext {
        let mut ctx = context_fixture();
        // model 0 strictly best on every metric by 2.5–3×
        ctx.cv_performance.scores = vec![
            vec![1.0, 1.0, 0.2],
            vec![2.5, 2.5, 0.5],
            vec![3.0, 3.0, 0.6],
        ];
        ctx.current_weights = WeightVector::new(vec![0.7, 0.3, 0.0]);
        ctx.data_features.seasonal_strength = 0.7;
        ctx.data_features.trend_strength = 0.4;
        ctx.data_features.period = 12;
        ctx.data_features.cv_window_length = 24;
        ctx.capability_tags = vec![vec!["seasonal".into()], vec![], vec![]];
        ctx.iteration = 2;
        ctx.history = vec![super::super::HistoryEntry {
            iteration: 1,
            metric: Metric::Mae,
            confidence: 0.6,
            decision: Decision::Continue,
        }];
        ctx
    }

    #[test]
    fn ideal_alignment_accepts_with_high_confidence() {
        let mut judge = RuleJudge::new(JudgeBackendConfig::default());
        let verdict = judge.judge(&ideal_context()).unwrap();
        assert_eq!(verdict.decision, Decision::Accept);
        assert!(verdict.confidence >= 0.8, "confidence {}", verdict.confidence);
        assert!(verdict.aspect_scores[0] >= 0.99, "aspect 1 = {}", verdict.aspect_scores[0]);
    }

    #[test]
    fn seasonality_risk_forces_continue_with_metric_switch() {
        let mut ctx = ideal_context();
        // short window, strong seasonality, almost no seasonal weight
        ctx.data_features.cv_window_length = 18;
        ctx.data_features.seasonal_strength = 0.85;
        ctx.capability_tags = vec![vec![], vec!["seasonal".into()], vec![]];
        ctx.current_weights = WeightVector::new(vec![0.8, 0.2, 0.0]);
        // risk = 0.85 / 0.2 = 4.25 > 1
        let mut judge = RuleJudge::new(JudgeBackendConfig::default());
        let verdict = judge.judge(&ctx).unwrap();
        assert_eq!(verdict.decision, Decision::Continue);
        let next = verdict.next_metric.unwrap();
        assert_ne!(next, ctx.current_metric);
        assert!(ctx.metric_pool.contains(&next));
    }

    #[test]
    fn neutral_context_sits_at_the_midpoint() {
        let ctx = context_fixture();
        let (_, confidence) = rule_rubric(&ctx);
        assert!(
            (confidence - 0.5).abs() <= 0.05,
            "uninformative prior should be ≈0.5, got {confidence}"
        );
    }

    #[test]
    fn uniform_weights_with_2x_gap_scores_aspect3_low() {
        let mut ctx = context_fixture();
        ctx.cv_performance.scores = vec![
            vec![1.0, 1.0, 0.2],
            vec![2.0, 2.0, 0.4],
            vec![2.4, 2.4, 0.5],
        ];
        ctx.current_weights = WeightVector::uniform(3);
        let (aspects, _) = rule_rubric(&ctx);
        assert!(aspects[2] <= 0.3, "aspect 3 = {}", aspects[2]);
    }

    #[test]
    fn confidence_monotone_in_rank_alignment() {
        let mut ctx = ideal_context();
        ctx.history.clear();
        ctx.iteration = 1;
        let aligned = [0.7, 0.3, 0.0];
        let uniform = [1.0 / 3.0; 3];
        let mut prev = -1.0;
        for step in 0..=4 {
            let lambda = step as f64 / 4.0;
            let w: Vec<f64> = (0..3)
                .map(|i| (1.0 - lambda) * uniform[i] + lambda * aligned[i])
                .collect();
            ctx.current_weights = WeightVector::new(w);
            let (_, confidence) = rule_rubric(&ctx);
            assert!(
                confidence >= prev - 1e-12,
                "confidence dropped at λ={lambda}: {confidence} < {prev}"
            );
            prev = confidence;
        }
    }

    #[test]
    fn rule_judge_is_bit_stable() {
        let mut judge = RuleJudge::new(JudgeBackendConfig::default());
        let ctx = ideal_context();
        let a = judge.judge(&ctx).unwrap();
        let b = judge.judge(&ctx).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn forced_accept_at_iteration_cap() {
        let mut ctx = context_fixture();
        ctx.iteration = 3;
        let mut judge = RuleJudge::new(JudgeBackendConfig::default());
        let verdict = judge.judge(&ctx).unwrap();
        assert_eq!(verdict.decision, Decision::Accept);
    }

    #[test]
    fn continue_always_switches_metric() {
        // low-confidence context at iteration 1 must continue with a new metric
        let mut ctx = context_fixture();
        ctx.cv_performance.scores = vec![
            vec![1.0, 1.0, 0.2],
            vec![2.0, 2.0, 0.4],
            vec![2.4, 2.4, 0.5],
        ];
        let mut judge = RuleJudge::new(JudgeBackendConfig::default());
        let verdict = judge.judge(&ctx).unwrap();
        assert_eq!(verdict.decision, Decision::Continue);
        assert_ne!(verdict.next_metric, Some(ctx.current_metric));
        assert!(verdict.next_metric.is_some());
    }
}
