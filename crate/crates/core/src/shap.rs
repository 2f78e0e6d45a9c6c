//! Exact three-player Shapley attribution of forecast error to the
//! trend/seasonality/residual components, and faithfulness scoring of
//! structured explanations against those causal effects.
//!
//! The coalition value `f(S)` is the model's error measured against the
//! subset-reconstructed target: including a component in the evaluation
//! series is the causal intervention, so a negative Shapley value means the
//! component's presence reduces error (the component "helps" under
//! lower-is-better metrics).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{score, Forecast, MaseContext, Metric, MetricError};
use crate::series::{reconstruct_subset, Component, ComponentSubset, Decomposition};

#[derive(Debug, Error)]
pub enum FaithfulnessError {
    #[error("claims missing for model `{model}` component `{component}`")]
    MissingClaim { model: String, component: Component },
    #[error("report contains no models")]
    EmptyReport,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Signed Shapley values (metric units) for one model, plus the efficiency
/// error term. Negative values reduce error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapValues {
    pub trend: f64,
    pub seasonality: f64,
    pub residual: f64,
    pub error_term: f64,
}

impl ShapValues {
    /// Signed raw values in the fixed (trend, seasonality, residual) order.
    pub fn raw(&self) -> [f64; 3] {
        [self.trend, self.seasonality, self.residual]
    }

    /// `|raw| / Σ|raw|`; all-zero raws give all-zero normalized values.
    pub fn normalized(&self) -> [f64; 3] {
        let raw = self.raw();
        let total: f64 = raw.iter().map(|v| v.abs()).sum();
        if total < 1e-300 {
            [0.0; 3]
        } else {
            [raw[0].abs() / total, raw[1].abs() / total, raw[2].abs() / total]
        }
    }

    pub fn raw_for(&self, c: Component) -> f64 {
        match c {
            Component::Trend => self.trend,
            Component::Seasonality => self.seasonality,
            Component::Residual => self.residual,
        }
    }

    pub fn normalized_for(&self, c: Component) -> f64 {
        let n = self.normalized();
        match c {
            Component::Trend => n[0],
            Component::Seasonality => n[1],
            Component::Residual => n[2],
        }
    }
}

/// Attribution for every model in an ensemble under one metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapReport {
    pub metric: Metric,
    pub models: Vec<(String, ShapValues)>,
}

impl ShapReport {
    pub fn values_for(&self, model: &str) -> Option<&ShapValues> {
        self.models.iter().find(|(id, _)| id == model).map(|(_, v)| v)
    }
}

/// Exact 3-player Shapley values from a coalition value function, via the
/// closed-form 4-term expansion with weights (1/3, 1/6, 1/6, 1/3).
pub fn shapley_from_values(f: impl Fn(ComponentSubset) -> f64) -> ShapValues {
    let sub = ComponentSubset::from_members;
    let f_empty = f(ComponentSubset::EMPTY);
    let f_t = f(sub(true, false, false));
    let f_s = f(sub(false, true, false));
    let f_r = f(sub(false, false, true));
    let f_ts = f(sub(true, true, false));
    let f_tr = f(sub(true, false, true));
    let f_sr = f(sub(false, true, true));
    let f_tsr = f(ComponentSubset::FULL);

    let third = 1.0 / 3.0;
    let sixth = 1.0 / 6.0;
    let trend = third * (f_t - f_empty)
        + sixth * (f_ts - f_s)
        + sixth * (f_tr - f_r)
        + third * (f_tsr - f_sr);
    let seasonality = third * (f_s - f_empty)
        + sixth * (f_ts - f_t)
        + sixth * (f_sr - f_r)
        + third * (f_tsr - f_tr);
    let residual = third * (f_r - f_empty)
        + sixth * (f_tr - f_t)
        + sixth * (f_sr - f_s)
        + third * (f_tsr - f_ts);
    let error_term = (f_tsr - f_empty) - trend - seasonality - residual;

    ShapValues {
        trend,
        seasonality,
        residual,
        error_term,
    }
}

/// Shapley attribution of one model's forecast error over the decomposition
/// of its target window. `f(S) = score(metric, reconstruct(S), forecast)`.
pub fn shapley_attribution(
    decomp: &Decomposition,
    forecast: Forecast<'_>,
    metric: Metric,
    mase_ctx: Option<&MaseContext>,
) -> Result<ShapValues, MetricError> {
    let mut table = [0.0; 8];
    for (i, subset) in ComponentSubset::ALL.iter().enumerate() {
        let target = reconstruct_subset(decomp, *subset);
        table[i] = score(metric, &target, forecast, mase_ctx)?;
    }
    let lookup = |s: ComponentSubset| {
        let idx = ComponentSubset::ALL
            .iter()
            .position(|x| *x == s)
            .expect("subset enumeration is total");
        table[idx]
    };
    Ok(shapley_from_values(lookup))
}

/// Direction a claim assigns to a component's influence on error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Helps,
    Hurts,
    Neutral,
}

impl Direction {
    /// Sign of the explanation-implied effect under lower-is-better metrics:
    /// helping reduces error, so helps ↦ −1.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Helps => -1.0,
            Direction::Hurts => 1.0,
            Direction::Neutral => 0.0,
        }
    }
}

/// One structured claim about a (model, component) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentClaim {
    pub model: String,
    pub component: Component,
    pub importance: f64,
    pub direction: Direction,
}

/// The structured claims a judge emits alongside its free-text explanation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExplanationClaims {
    pub claims: Vec<ComponentClaim>,
    #[serde(default)]
    pub free_text: String,
}

impl ExplanationClaims {
    pub fn find(&self, model: &str, component: Component) -> Option<&ComponentClaim> {
        self.claims
            .iter()
            .find(|c| c.model == model && c.component == component)
    }

    /// Neutral 0.5-importance claims for every (model, component) pair;
    /// the fallback when a judge returns prose without structured claims.
    pub fn neutral(model_ids: &[String], free_text: impl Into<String>) -> Self {
        let claims = model_ids
            .iter()
            .flat_map(|m| {
                Component::ALL.iter().map(move |c| ComponentClaim {
                    model: m.clone(),
                    component: *c,
                    importance: 0.5,
                    direction: Direction::Neutral,
                })
            })
            .collect();
        Self {
            claims,
            free_text: free_text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Overstatement,
    Understatement,
    WrongDirection,
    MissedPattern,
}

impl PatternKind {
    pub fn label(self) -> &'static str {
        match self {
            PatternKind::Overstatement => "Overstatement",
            PatternKind::Understatement => "Understatement",
            PatternKind::WrongDirection => "Wrong direction",
            PatternKind::MissedPattern => "Missed pattern",
        }
    }
}

/// A detected mismatch between a claim and the Shapley evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnfaithfulnessPattern {
    pub model: String,
    pub component: Component,
    pub kind: PatternKind,
}

/// Faithfulness of explanations against Shapley causal effects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaithfulnessResult {
    /// Pearson correlation of causal effects and explanation-implied
    /// effects; 0 when either vector is constant (see `degenerate_variance`).
    pub pcc_score: f64,
    /// `max(0, pcc)`, or the rank alignment when the correlation is
    /// undefined.
    pub reward_score: f64,
    pub patterns: Vec<UnfaithfulnessPattern>,
    pub rank_alignment: f64,
    pub magnitude_alignment: f64,
    pub pattern_recognition: f64,
    pub degenerate_variance: bool,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va < 1e-300 || vb < 1e-300 {
        None
    } else {
        Some((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
    }
}

/// Average ranks with ties sharing the mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = mean_rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman correlation mapped to [0,1]; 0.5 when either side is constant.
fn rank_alignment(ce: &[f64], ee: &[f64]) -> f64 {
    match pearson(&ranks(ce), &ranks(ee)) {
        Some(rho) => (rho + 1.0) / 2.0,
        None => 0.5,
    }
}

fn magnitude_distribution(xs: &[f64]) -> Vec<f64> {
    let total: f64 = xs.iter().map(|v| v.abs()).sum();
    if total < 1e-300 {
        vec![1.0 / xs.len() as f64; xs.len()]
    } else {
        xs.iter().map(|v| v.abs() / total).collect()
    }
}

fn magnitude_alignment(ce: &[f64], ee: &[f64]) -> f64 {
    let pa = magnitude_distribution(ce);
    let pb = magnitude_distribution(ee);
    let mean_gap = pa
        .iter()
        .zip(&pb)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / pa.len() as f64;
    (1.0 - mean_gap).clamp(0.0, 1.0)
}

/// Fraction of ordered pairs whose relative ordering matches; ties must
/// match ties.
fn pattern_recognition(ce: &[f64], ee: &[f64]) -> f64 {
    let n = ce.len();
    if n < 2 {
        return 1.0;
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
    let mut matched = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            if sign(ce[i] - ce[j]) == sign(ee[i] - ee[j]) {
                matched += 1;
            }
        }
    }
    matched as f64 / total as f64
}

/// Flatten the report into the causal-effect vector CE (signed raw values in
/// fixed model, then component, order) and build the matching
/// explanation-implied vector EE = importance × direction sign.
fn effect_vectors(
    report: &ShapReport,
    claims: &ExplanationClaims,
) -> Result<(Vec<f64>, Vec<f64>), FaithfulnessError> {
    if report.models.is_empty() {
        return Err(FaithfulnessError::EmptyReport);
    }
    let mut ce = Vec::with_capacity(report.models.len() * 3);
    let mut ee = Vec::with_capacity(report.models.len() * 3);
    for (model, values) in &report.models {
        for component in Component::ALL {
            let claim = claims
                .find(model, component)
                .ok_or_else(|| FaithfulnessError::MissingClaim {
                    model: model.clone(),
                    component,
                })?;
            ce.push(values.raw_for(component));
            ee.push(claim.importance.clamp(0.0, 1.0) * claim.direction.sign());
        }
    }
    Ok((ce, ee))
}

/// Score how faithfully the claims reflect the Shapley causal effects.
pub fn faithfulness(
    report: &ShapReport,
    claims: &ExplanationClaims,
    tau_low: f64,
    tau_high: f64,
) -> Result<FaithfulnessResult, FaithfulnessError> {
    let (ce, ee) = effect_vectors(report, claims)?;
    let rank = rank_alignment(&ce, &ee);
    let magnitude = magnitude_alignment(&ce, &ee);
    let patterns_score = pattern_recognition(&ce, &ee);
    let (pcc, reward, degenerate) = match pearson(&ce, &ee) {
        Some(r) => (r, r.max(0.0).min(1.0), false),
        None => (0.0, rank, true),
    };
    Ok(FaithfulnessResult {
        pcc_score: pcc,
        reward_score: reward,
        patterns: detect_unfaithfulness(report, claims, tau_low, tau_high),
        rank_alignment: rank,
        magnitude_alignment: magnitude,
        pattern_recognition: patterns_score,
        degenerate_variance: degenerate,
    })
}

/// Scan for the four mismatch patterns. Claims may be partial here; a
/// missing seasonal claim combined with strong seasonal evidence is itself
/// the "missed pattern" case.
pub fn detect_unfaithfulness(
    report: &ShapReport,
    claims: &ExplanationClaims,
    tau_low: f64,
    tau_high: f64,
) -> Vec<UnfaithfulnessPattern> {
    debug_assert!((0.0..tau_high).contains(&tau_low));
    let mut out = Vec::new();
    for (model, values) in &report.models {
        for component in Component::ALL {
            let norm = values.normalized_for(component);
            let raw = values.raw_for(component);
            match claims.find(model, component) {
                Some(claim) => {
                    let kind = if claim.importance >= 0.6 && norm < tau_low {
                        Some(PatternKind::Overstatement)
                    } else if claim.importance <= 0.2 && norm > tau_high {
                        Some(PatternKind::Understatement)
                    } else if claim.direction == Direction::Helps && raw > 1e-12 {
                        Some(PatternKind::WrongDirection)
                    } else {
                        None
                    };
                    if let Some(kind) = kind {
                        out.push(UnfaithfulnessPattern {
                            model: model.clone(),
                            component,
                            kind,
                        });
                    }
                }
                None => {
                    if component == Component::Seasonality && norm > tau_high {
                        out.push(UnfaithfulnessPattern {
                            model: model.clone(),
                            component,
                            kind: PatternKind::MissedPattern,
                        });
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: Shapley values by averaging marginal
    /// contributions over all 3! orderings.
    fn shapley_permutation_oracle(f: &dyn Fn(ComponentSubset) -> f64) -> [f64; 3] {
        let players = Component::ALL;
        let orderings: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut out = [0.0; 3];
        for order in orderings {
            let mut coalition = ComponentSubset::EMPTY;
            for &p in &order {
                let before = f(coalition);
                let with = coalition.with(players[p]);
                out[p] += f(with) - before;
                coalition = with;
            }
        }
        for v in &mut out {
            *v /= 6.0;
        }
        out
    }

    fn table_game(table: [f64; 8]) -> impl Fn(ComponentSubset) -> f64 {
        move |s: ComponentSubset| {
            let idx = ComponentSubset::ALL.iter().position(|x| *x == s).unwrap();
            table[idx]
        }
    }

    #[test]
    fn null_game_is_all_zero() {
        let v = shapley_from_values(|_| 3.5);
        assert_eq!(v.raw(), [0.0; 3]);
        assert_eq!(v.error_term, 0.0);
        assert_eq!(v.normalized(), [0.0; 3]);
    }

    #[test]
    fn matches_permutation_oracle_on_random_games() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let table: [f64; 8] = std::array::from_fn(|_| rng.random::<f64>() * 10.0 - 5.0);
            let f = table_game(table);
            let fast = shapley_from_values(&f);
            let oracle = shapley_permutation_oracle(&f);
            for (a, b) in fast.raw().iter().zip(&oracle) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
            // efficiency: Σ SHAP + error = f(TSR) − f(∅)
            let lhs = fast.trend + fast.seasonality + fast.residual + fast.error_term;
            let rhs = table[7] - table[0];
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetric_players_get_equal_values() {
        // value depends only on coalition size → all three interchangeable
        let f = |s: ComponentSubset| match s.size() {
            0 => 4.0,
            1 => 3.0,
            2 => 1.5,
            _ => 0.5,
        };
        let v = shapley_from_values(f);
        assert_abs_diff_eq!(v.trend, v.seasonality, epsilon = 1e-12);
        assert_abs_diff_eq!(v.seasonality, v.residual, epsilon = 1e-12);
    }

    #[test]
    fn dummy_player_gets_zero() {
        // residual never changes the value
        let f = |s: ComponentSubset| {
            let mut v = 2.0;
            if s.trend {
                v -= 1.0;
            }
            if s.seasonality {
                v -= 0.5;
            }
            v
        };
        let v = shapley_from_values(f);
        assert_abs_diff_eq!(v.residual, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.trend, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.seasonality, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn helpful_component_has_negative_shap() {
        // forecast equals the full reconstruction, trend dominates
        let n = 48;
        let decomp = Decomposition {
            trend: (0..n).map(|t| 20.0 + 0.5 * t as f64).collect(),
            seasonal: (0..n).map(|t| (t as f64).sin()).collect(),
            residual: (0..n).map(|t| 0.05 * ((t * 7 % 5) as f64 - 2.0)).collect(),
        };
        let forecast: Vec<f64> = (0..n)
            .map(|t| decomp.trend[t] + decomp.seasonal[t] + decomp.residual[t])
            .collect();
        let v = shapley_attribution(&decomp, Forecast::Point(&forecast), Metric::Mae, None).unwrap();
        assert!(v.trend < 0.0, "trend SHAP {} should be negative", v.trend);
        let norm = v.normalized();
        assert_abs_diff_eq!(norm.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(norm[0] > norm[1] && norm[1] > norm[2]);
    }

    fn report_with(raw: [f64; 3]) -> ShapReport {
        ShapReport {
            metric: Metric::Mae,
            models: vec![(
                "m1".into(),
                ShapValues {
                    trend: raw[0],
                    seasonality: raw[1],
                    residual: raw[2],
                    error_term: 0.0,
                },
            )],
        }
    }

    fn claims_from(ee: [f64; 3]) -> ExplanationClaims {
        let claims = Component::ALL
            .iter()
            .zip(ee)
            .map(|(c, v)| ComponentClaim {
                model: "m1".into(),
                component: *c,
                importance: v.abs(),
                direction: if v < 0.0 {
                    Direction::Helps
                } else if v > 0.0 {
                    Direction::Hurts
                } else {
                    Direction::Neutral
                },
            })
            .collect();
        ExplanationClaims {
            claims,
            free_text: String::new(),
        }
    }

    #[test]
    fn proportional_claims_score_one() {
        let report = report_with([-0.8, -0.4, -0.2]);
        let claims = claims_from([-0.8, -0.4, -0.2]);
        let r = faithfulness(&report, &claims, 0.1, 0.4).unwrap();
        assert_abs_diff_eq!(r.pcc_score, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.reward_score, 1.0, epsilon = 1e-9);
        assert!(r.patterns.is_empty());
    }

    #[test]
    fn reversed_claims_score_minus_one() {
        let report = report_with([-0.8, -0.4, -0.2]);
        let claims = claims_from([0.8, 0.4, 0.2]);
        let r = faithfulness(&report, &claims, 0.1, 0.4).unwrap();
        assert_abs_diff_eq!(r.pcc_score, -1.0, epsilon = 1e-9);
        assert_eq!(r.reward_score, 0.0);
    }

    #[test]
    fn degenerate_variance_falls_back_to_rank_alignment() {
        let report = report_with([-0.5, -0.5, -0.5]);
        let claims = claims_from([-0.3, -0.3, -0.3]);
        let r = faithfulness(&report, &claims, 0.1, 0.4).unwrap();
        assert!(r.degenerate_variance);
        assert_eq!(r.reward_score, r.rank_alignment);
    }

    #[test]
    fn pcc_invariant_under_positive_affine_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() - 0.5);
        let ee: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() - 0.5);
        let base = faithfulness(&report_with(raw), &claims_from(ee), 0.1, 0.4)
            .unwrap()
            .pcc_score;
        // scale CE by 3 and shift; PCC must not move
        let scaled: [f64; 3] = std::array::from_fn(|i| raw[i] * 3.0 + 0.7);
        let transformed = faithfulness(&report_with(scaled), &claims_from(ee), 0.1, 0.4)
            .unwrap()
            .pcc_score;
        assert_abs_diff_eq!(base, transformed, epsilon = 1e-9);
    }

    #[test]
    fn wrong_direction_detected() {
        let report = report_with([0.3, -0.2, -0.1]);
        let mut claims = claims_from([-0.8, -0.4, -0.2]); // trend claimed helping
        claims.claims[0].importance = 0.5;
        let patterns = detect_unfaithfulness(&report, &claims, 0.1, 0.4);
        assert!(patterns
            .iter()
            .any(|p| p.kind == PatternKind::WrongDirection && p.component == Component::Trend));
    }

    #[test]
    fn overstatement_and_understatement_detected() {
        // norms: (0.05/1.0, 0.45/... ) → construct: raw (−0.02, −0.68, −0.30)
        let report = report_with([-0.02, -0.68, -0.30]);
        // trend claimed hugely important, seasonality claimed unimportant
        let claims = ExplanationClaims {
            claims: vec![
                ComponentClaim {
                    model: "m1".into(),
                    component: Component::Trend,
                    importance: 0.9,
                    direction: Direction::Helps,
                },
                ComponentClaim {
                    model: "m1".into(),
                    component: Component::Seasonality,
                    importance: 0.1,
                    direction: Direction::Helps,
                },
                ComponentClaim {
                    model: "m1".into(),
                    component: Component::Residual,
                    importance: 0.3,
                    direction: Direction::Helps,
                },
            ],
            free_text: String::new(),
        };
        let patterns = detect_unfaithfulness(&report, &claims, 0.1, 0.4);
        assert!(patterns
            .iter()
            .any(|p| p.kind == PatternKind::Overstatement && p.component == Component::Trend));
        assert!(patterns
            .iter()
            .any(|p| p.kind == PatternKind::Understatement && p.component == Component::Seasonality));
    }

    #[test]
    fn missed_seasonal_pattern_detected() {
        let report = report_with([-0.2, -0.6, -0.2]);
        let claims = ExplanationClaims {
            claims: vec![ComponentClaim {
                model: "m1".into(),
                component: Component::Trend,
                importance: 0.5,
                direction: Direction::Helps,
            }],
            free_text: String::new(),
        };
        let patterns = detect_unfaithfulness(&report, &claims, 0.1, 0.4);
        assert!(patterns
            .iter()
            .any(|p| p.kind == PatternKind::MissedPattern && p.component == Component::Seasonality));
    }

    #[test]
    fn appendix_normalization_convention() {
        let report = report_with([-0.234, -0.140, -0.075]);
        let norm = report.models[0].1.normalized();
        assert_abs_diff_eq!(norm[0], 0.521, epsilon = 1e-3);
        assert_abs_diff_eq!(norm[1], 0.312, epsilon = 1e-3);
        assert_abs_diff_eq!(norm[2], 0.167, epsilon = 1e-3);
    }

    #[test]
    fn claims_json_schema() {
        let claims = ExplanationClaims {
            claims: vec![ComponentClaim {
                model: "moirai".into(),
                component: Component::Seasonality,
                importance: 0.28,
                direction: Direction::Helps,
            }],
            free_text: "seasonal complement".into(),
        };
        let json = serde_json::to_value(&claims).unwrap();
        assert_eq!(json["claims"][0]["component"], "seasonality");
        assert_eq!(json["claims"][0]["direction"], "helps");
        let back: ExplanationClaims = serde_json::from_value(json).unwrap();
        assert_eq!(back.claims[0].model, "moirai");
    }
}
