//! Simplex-constrained ensemble weight optimization.
//!
//! Minimizes `score(metric, truth, X·w)` over the probability simplex
//! `{w ≥ 0, Σw = 1}` by projected gradient descent with an Armijo
//! backtracking line search, run from a uniform start plus one start per
//! vertex (the multi-start hedge for non-convex metrics). A brute-force
//! lattice search over the simplex doubles as the verification oracle for
//! small model counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{score, Forecast, MaseContext, Metric, MetricError, QuantileForecast};
use crate::parallel::{self, ExecMode};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("objective is not finite at weights {0:?}")]
    NonFiniteObjective(Vec<f64>),
    #[error("brute force supports at most 4 models, got {0}")]
    TooManyModels(usize),
    #[error("grid step {0} is outside (0, 0.5]")]
    InvalidGridStep(f64),
    #[error("grid too fine: {0} lattice points exceeds the 10^7 cap")]
    GridTooFine(usize),
    #[error("forecast matrix needs ≥ 2 models, got {0}")]
    TooFewModels(usize),
    #[error("forecast matrix column {0} has length {1}, expected {2}")]
    ColumnLengthMismatch(usize, usize, usize),
    #[error("non-finite forecast entry in column {0}")]
    NonFiniteColumn(usize),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Convex-combination weights over the candidate models. Entries are
/// non-negative (tiny negatives are clamped on construction) and sum to 1
/// within 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Clamp tiny negatives and renormalize. Intended for vectors that are
    /// already (nearly) feasible; arbitrary vectors go through
    /// [`project_to_simplex`].
    pub fn new(mut weights: Vec<f64>) -> Self {
        for w in &mut weights {
            if *w < 0.0 {
                debug_assert!(*w >= -1e-9, "weight {w} is not a rounding artifact");
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if sum > 0.0 && (sum - 1.0).abs() > 1e-15 {
            for w in &mut weights {
                *w /= sum;
            }
        } else if sum == 0.0 && !weights.is_empty() {
            let uniform = 1.0 / weights.len() as f64;
            weights.fill(uniform);
        }
        WeightVector(weights)
    }

    pub fn uniform(m: usize) -> Self {
        WeightVector(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Shannon entropy; the tie-break criterion favoring diversified weights.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|w| **w > 0.0)
            .map(|w| w * w.ln())
            .sum::<f64>()
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.0.iter().all(|w| *w >= -1e-12) && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Per-model point forecasts aligned to one truth window, with optional
/// per-model quantile forecasts for CRPS objectives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastMatrix {
    pub model_ids: Vec<String>,
    /// `columns[m][t]`: model m's point forecast at step t.
    pub columns: Vec<Vec<f64>>,
    pub quantiles: Option<Vec<QuantileForecast>>,
}

impl ForecastMatrix {
    pub fn new(model_ids: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, OptimizerError> {
        if columns.len() < 2 {
            return Err(OptimizerError::TooFewModels(columns.len()));
        }
        let horizon = columns[0].len();
        for (i, col) in columns.iter().enumerate() {
            if col.len() != horizon {
                return Err(OptimizerError::ColumnLengthMismatch(i, col.len(), horizon));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(OptimizerError::NonFiniteColumn(i));
            }
        }
        Ok(Self {
            model_ids,
            columns,
            quantiles: None,
        })
    }

    pub fn with_quantiles(mut self, quantiles: Vec<QuantileForecast>) -> Self {
        self.quantiles = Some(quantiles);
        self
    }

    pub fn n_models(&self) -> usize {
        self.columns.len()
    }

    pub fn horizon(&self) -> usize {
        self.columns[0].len()
    }

    /// Point forecast of the weighted ensemble.
    pub fn combine(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon()];
        for (w, col) in weights.iter().zip(&self.columns) {
            for (o, v) in out.iter_mut().zip(col) {
                *o += w * v;
            }
        }
        out
    }

    fn all_columns_identical(&self) -> bool {
        let first = &self.columns[0];
        let points_same = self
            .columns
            .iter()
            .skip(1)
            .all(|c| c.iter().zip(first).all(|(a, b)| (a - b).abs() < 1e-12));
        match &self.quantiles {
            None => points_same,
            Some(qs) => {
                points_same
                    && qs.iter().skip(1).all(|q| {
                        q.values()
                            .iter()
                            .flatten()
                            .zip(qs[0].values().iter().flatten())
                            .all(|(a, b)| (a - b).abs() < 1e-12)
                    })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub objective_tolerance: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-8,
            objective_tolerance: 1e-10,
        }
    }
}

/// Result of a weight optimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub weights: WeightVector,
    pub objective: f64,
    /// Objective at the uniform initialization, for the monotone-improvement
    /// contract.
    pub uniform_objective: f64,
    /// Set when all forecast columns were identical and the optimizer
    /// returned uniform weights without searching.
    pub degenerate: bool,
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
/// Idempotent; the all-zeros vector maps to uniform by symmetry.
pub fn project_to_simplex(v: &[f64]) -> WeightVector {
    let n = v.len();
    assert!(n > 0, "cannot project an empty vector");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    let mut rho = 0;
    for (j, u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (1.0 - cumsum) / (j + 1) as f64;
        if u + candidate > 0.0 {
            rho = j + 1;
            theta = candidate;
        }
    }
    debug_assert!(rho > 0);
    WeightVector::new(v.iter().map(|x| (x + theta).max(0.0)).collect())
}

struct Objective<'a> {
    truth: &'a [f64],
    matrix: &'a ForecastMatrix,
    metric: Metric,
    mase_ctx: Option<&'a MaseContext>,
}

impl Objective<'_> {
    fn eval(&self, w: &[f64]) -> Result<f64, OptimizerError> {
        let value = match self.metric {
            Metric::Crps => {
                let members = self
                    .matrix
                    .quantiles
                    .as_ref()
                    .ok_or(MetricError::MissingQuantiles)?;
                let mixed = QuantileForecast::weighted_mix(members, w)?;
                score(self.metric, self.truth, Forecast::Quantiles(&mixed), self.mase_ctx)?
            }
            _ => {
                let combined = self.matrix.combine(w);
                score(self.metric, self.truth, Forecast::Point(&combined), self.mase_ctx)?
            }
        };
        if !value.is_finite() {
            return Err(OptimizerError::NonFiniteObjective(w.to_vec()));
        }
        Ok(value)
    }

    /// Central finite differences; the metrics extend smoothly off the
    /// simplex, so probing w ± h needs no projection.
    fn grad(&self, w: &[f64]) -> Result<Vec<f64>, OptimizerError> {
        let h = 1e-6;
        let mut probe = w.to_vec();
        let mut g = vec![0.0; w.len()];
        for i in 0..w.len() {
            probe[i] = w[i] + h;
            let up = self.eval(&probe)?;
            probe[i] = w[i] - h;
            let down = self.eval(&probe)?;
            probe[i] = w[i];
            g[i] = (up - down) / (2.0 * h);
        }
        Ok(g)
    }
}

fn projected_gradient_descent(
    objective: &Objective<'_>,
    start: Vec<f64>,
    params: &OptimizerParams,
) -> Result<(WeightVector, f64), OptimizerError> {
    let mut w = project_to_simplex(&start);
    let mut obj = objective.eval(w.as_slice())?;
    let mut alpha = 1.0;
    for _ in 0..params.max_iterations {
        let g = objective.grad(w.as_slice())?;
        let mut accepted = false;
        let mut trial_alpha = alpha;
        for _ in 0..60 {
            let moved: Vec<f64> = w
                .as_slice()
                .iter()
                .zip(&g)
                .map(|(wi, gi)| wi - trial_alpha * gi)
                .collect();
            let candidate = project_to_simplex(&moved);
            let step_sq: f64 = candidate
                .as_slice()
                .iter()
                .zip(w.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if step_sq < params.step_tolerance * params.step_tolerance {
                break;
            }
            let cand_obj = objective.eval(candidate.as_slice())?;
            // Armijo: require decrease proportional to g·(w − w⁺)
            let decrease: f64 = g
                .iter()
                .zip(w.as_slice().iter().zip(candidate.as_slice()))
                .map(|(gi, (wi, ci))| gi * (wi - ci))
                .sum();
            if cand_obj <= obj - 1e-4 * decrease.max(0.0) && cand_obj < obj {
                let improvement = obj - cand_obj;
                w = candidate;
                obj = cand_obj;
                alpha = (trial_alpha * 2.0).min(1e6);
                accepted = true;
                if improvement < params.objective_tolerance * obj.abs().max(1.0) {
                    return Ok((w, obj));
                }
                break;
            }
            trial_alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((w, obj))
}

/// Minimize the ensemble error over the probability simplex.
///
/// Runs projected gradient descent from the uniform initialization plus one
/// start per vertex and keeps the best result; ties within
/// `objective_tolerance` resolve to the maximum-entropy weights, then to the
/// lowest start index. The returned objective never exceeds the uniform
/// initialization's objective.
pub fn optimize_weights(
    truth: &[f64],
    matrix: &ForecastMatrix,
    metric: Metric,
    mase_ctx: Option<&MaseContext>,
    params: &OptimizerParams,
) -> Result<OptimizationOutcome, OptimizerError> {
    optimize_weights_with_mode(truth, matrix, metric, mase_ctx, params, ExecMode::default())
}

/// [`optimize_weights`] with an explicit execution mode for the multi-start
/// runs. Results are identical across modes.
pub fn optimize_weights_with_mode(
    truth: &[f64],
    matrix: &ForecastMatrix,
    metric: Metric,
    mase_ctx: Option<&MaseContext>,
    params: &OptimizerParams,
    mode: ExecMode,
) -> Result<OptimizationOutcome, OptimizerError> {
    let m = matrix.n_models();
    let objective = Objective {
        truth,
        matrix,
        metric,
        mase_ctx,
    };
    let uniform = WeightVector::uniform(m);
    let uniform_objective = objective.eval(uniform.as_slice())?;

    if matrix.all_columns_identical() {
        return Ok(OptimizationOutcome {
            weights: uniform,
            objective: uniform_objective,
            uniform_objective,
            degenerate: true,
        });
    }

    // start 0: uniform; starts 1..=m: vertices
    let starts: Vec<Vec<f64>> = std::iter::once(vec![1.0 / m as f64; m])
        .chain((0..m).map(|i| {
            let mut v = vec![0.0; m];
            v[i] = 1.0;
            v
        }))
        .collect();

    let runs = parallel::map_slice(mode, &starts, |start| {
        projected_gradient_descent(&objective, start.clone(), params)
    });

    let mut best: Option<(WeightVector, f64, usize)> = None;
    for (idx, run) in runs.into_iter().enumerate() {
        let (w, obj) = run?;
        best = Some(match best {
            None => (w, obj, idx),
            Some((bw, bobj, bidx)) => {
                if obj < bobj - params.objective_tolerance {
                    (w, obj, idx)
                } else if obj <= bobj + params.objective_tolerance {
                    // tie: prefer max entropy, then lowest start index
                    let (he, hb) = (w.entropy(), bw.entropy());
                    if he > hb + 1e-12 {
                        (w, obj.min(bobj), idx)
                    } else {
                        (bw, bobj, bidx)
                    }
                } else {
                    (bw, bobj, bidx)
                }
            }
        });
    }
    let (weights, objective_value, _) = best.expect("at least one start");

    // uniform is one of the starts, so this can only tighten
    let (weights, objective_value) = if objective_value > uniform_objective {
        (uniform, uniform_objective)
    } else {
        (weights, objective_value)
    };

    Ok(OptimizationOutcome {
        weights,
        objective: objective_value,
        uniform_objective,
        degenerate: false,
    })
}

/// Number of points in the simplex lattice with `k` subdivisions over `m`
/// coordinates: C(k + m − 1, m − 1).
pub fn lattice_size(k: usize, m: usize) -> usize {
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..m - 1 {
        num *= (k + m - 1 - i) as u128;
        den *= (i + 1) as u128;
    }
    (num / den) as usize
}

/// Exhaustive minimum over the simplex lattice with spacing `grid_step`.
/// Verification oracle for up to 4 models; ties resolve to the first point
/// in lexicographic enumeration order.
pub fn brute_force_weights(
    truth: &[f64],
    matrix: &ForecastMatrix,
    metric: Metric,
    mase_ctx: Option<&MaseContext>,
    grid_step: f64,
) -> Result<(WeightVector, f64), OptimizerError> {
    brute_force_weights_with_mode(truth, matrix, metric, mase_ctx, grid_step, ExecMode::default())
}

/// [`brute_force_weights`] with an explicit execution mode for the lattice
/// scan. Results are identical across modes.
pub fn brute_force_weights_with_mode(
    truth: &[f64],
    matrix: &ForecastMatrix,
    metric: Metric,
    mase_ctx: Option<&MaseContext>,
    grid_step: f64,
    mode: ExecMode,
) -> Result<(WeightVector, f64), OptimizerError> {
    let m = matrix.n_models();
    if m > 4 {
        return Err(OptimizerError::TooManyModels(m));
    }
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(OptimizerError::InvalidGridStep(grid_step));
    }
    let k = (1.0 / grid_step).round() as usize;
    let total = lattice_size(k, m);
    if total > 10_000_000 {
        return Err(OptimizerError::GridTooFine(total));
    }
    let objective = Objective {
        truth,
        matrix,
        metric,
        mase_ctx,
    };

    // enumerate lexicographically by the first coordinate's count, scanning
    // outer slices in parallel and reducing in index order
    let slices = parallel::map_indexed(mode, k + 1, |i| -> Result<(Vec<f64>, f64), OptimizerError> {
        let mut best_w: Option<Vec<f64>> = None;
        let mut best_obj = f64::INFINITY;
        let mut consider = |counts: &[usize]| -> Result<(), OptimizerError> {
            let w: Vec<f64> = counts.iter().map(|c| *c as f64 / k as f64).collect();
            let obj = objective.eval(&w)?;
            if obj < best_obj {
                best_obj = obj;
                best_w = Some(w);
            }
            Ok(())
        };
        match m {
            2 => consider(&[i, k - i])?,
            3 => {
                for j in 0..=(k - i) {
                    consider(&[i, j, k - i - j])?;
                }
            }
            4 => {
                for j in 0..=(k - i) {
                    for l in 0..=(k - i - j) {
                        consider(&[i, j, l, k - i - j - l])?;
                    }
                }
            }
            _ => unreachable!("m validated above"),
        }
        Ok((best_w.expect("non-empty slice"), best_obj))
    });

    let mut best_w = None;
    let mut best_obj = f64::INFINITY;
    for slice in slices {
        let (w, obj) = slice?;
        if obj < best_obj {
            best_obj = obj;
            best_w = Some(w);
        }
    }
    Ok((WeightVector::new(best_w.expect("non-empty lattice")), best_obj))
}
