//! Temporal incompatibility analysis: how often do similar input windows
//! lead to divergent next values, and how much does an ensemble of
//! regime-local predictors gain over a single global one.
//!
//! The incompatibility index counts ordered window pairs that are closer
//! than `delta` in (optionally z-scored) input space while their next values
//! differ by more than `epsilon / delta`. The advantage function
//! `Ω(I_T, M) = I_T·ln(M) / (1 + exp(−κ·I_T))` and the ensemble-size lower
//! bound `⌈I_T·K / (ε·(1−ρ))⌉` turn that index into sizing guidance. The
//! harness checks the directional claim `L_ensemble ≤ L_monolithic`
//! empirically on synthetic regime-switching series.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::{self, ExecMode};
use crate::series::TimeSeries;

#[derive(Debug, Error)]
pub enum RegimeError {
    #[error("series too short: need > window_length + 1 = {needed} points, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("degenerate inter-regime correlation {0} ≥ 1")]
    DegenerateCorrelation(f64),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("synthesis spec has no regimes or empty segments")]
    EmptySpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncompatibilityParams {
    /// Input-neighborhood radius δ.
    pub delta: f64,
    /// Output-separation threshold ε; pairs must differ by more than ε/δ.
    pub epsilon: f64,
    /// Embedding window length L for the input vectors.
    pub window_length: usize,
    /// Sharpness constant κ of the advantage function.
    pub kappa: f64,
    /// Z-score each window before computing distances (makes δ scale-free).
    pub normalize_windows: bool,
    /// Cap on evaluated pairs; longer series are subsampled.
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for IncompatibilityParams {
    fn default() -> Self {
        Self {
            delta: 0.5,
            epsilon: 0.05,
            window_length: 4,
            kappa: 1.0,
            normalize_windows: true,
            max_pairs: 200_000,
            seed: 0,
        }
    }
}

fn embed_windows(values: &[f64], window: usize, normalize: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = values.len();
    let count = n - window; // windows ending at window−1 .. n−2, each with a next value
    let mut xs = Vec::with_capacity(count);
    let mut ys = Vec::with_capacity(count);
    for t in 0..count {
        let mut w: Vec<f64> = values[t..t + window].to_vec();
        if normalize {
            let mean = w.iter().sum::<f64>() / window as f64;
            let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / window as f64;
            let std = var.sqrt();
            if std < 1e-12 {
                w.fill(0.0);
            } else {
                for v in &mut w {
                    *v = (*v - mean) / std;
                }
            }
        }
        xs.push(w);
        ys.push(values[t + window]);
    }
    (xs, ys)
}

fn pair_matches(xs: &[Vec<f64>], ys: &[f64], i: usize, j: usize, delta: f64, out_threshold: f64) -> bool {
    let dist_sq: f64 = xs[i]
        .iter()
        .zip(&xs[j])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    dist_sq < delta * delta && (ys[i] - ys[j]).abs() > out_threshold
}

/// Fraction of ordered window pairs that are input-similar but
/// output-divergent; always in [0, 1].
pub fn incompatibility_index(series: &TimeSeries, params: &IncompatibilityParams) -> Result<f64, RegimeError> {
    incompatibility_index_with_mode(series, params, ExecMode::default())
}

/// [`incompatibility_index`] with an explicit execution mode for the pair
/// scan. Results are identical across modes.
pub fn incompatibility_index_with_mode(
    series: &TimeSeries,
    params: &IncompatibilityParams,
    mode: ExecMode,
) -> Result<f64, RegimeError> {
    let window = params.window_length.max(1);
    let n = series.len();
    if n < window + 2 {
        return Err(RegimeError::SeriesTooShort {
            needed: window + 2,
            got: n,
        });
    }
    let (xs, ys) = embed_windows(&series.values, window, params.normalize_windows);
    let count = xs.len();
    let out_threshold = params.epsilon / params.delta;

    let total_pairs = count * (count - 1);
    if total_pairs <= params.max_pairs {
        // full enumeration: ordered pairs with i ≠ j, scanned per row
        let row_hits = parallel::map_indexed(mode, count, |i| {
            (0..count)
                .filter(|&j| j != i && pair_matches(&xs, &ys, i, j, params.delta, out_threshold))
                .count()
        });
        let hits: usize = row_hits.iter().sum();
        Ok(hits as f64 / total_pairs as f64)
    } else {
        // seeded uniform sample of distinct ordered pairs
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut chosen: HashSet<(u32, u32)> = HashSet::with_capacity(params.max_pairs);
        while chosen.len() < params.max_pairs {
            let i = rng.random_range(0..count) as u32;
            let j = rng.random_range(0..count) as u32;
            if i != j {
                chosen.insert((i, j));
            }
        }
        let pairs: Vec<(u32, u32)> = {
            let mut v: Vec<_> = chosen.into_iter().collect();
            v.sort_unstable();
            v
        };
        let hits = parallel::map_slice(mode, &pairs, |(i, j)| {
            pair_matches(&xs, &ys, *i as usize, *j as usize, params.delta, out_threshold) as usize
        })
        .iter()
        .sum::<usize>();
        Ok(hits as f64 / params.max_pairs as f64)
    }
}

/// Ensemble advantage `Ω(I_T, M) = I_T·ln(M) / (1 + exp(−κ·I_T))`.
/// Exactly 0 when `i_t = 0` or `m = 1`.
pub fn ensemble_advantage(i_t: f64, m: usize, kappa: f64) -> f64 {
    debug_assert!(i_t >= 0.0 && m >= 1);
    i_t * (m as f64).ln() / (1.0 + (-kappa * i_t).exp())
}

/// Minimum ensemble size `⌈I_T·K_regimes / (ε·(1 − ρ))⌉`, floored at 1.
pub fn min_ensemble_size(
    i_t: f64,
    k_regimes: f64,
    epsilon: f64,
    rho_regime: f64,
) -> Result<usize, RegimeError> {
    if epsilon <= 0.0 {
        return Err(RegimeError::InvalidEpsilon(epsilon));
    }
    if rho_regime >= 1.0 {
        return Err(RegimeError::DegenerateCorrelation(rho_regime));
    }
    let bound = i_t * k_regimes / (epsilon * (1.0 - rho_regime));
    Ok((bound.ceil() as usize).max(1))
}

/// Generator parameters for one synthetic regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeParams {
    pub ar_coefficient: f64,
    pub seasonal_amplitude: f64,
    pub noise_scale: f64,
    pub level: f64,
}

/// Spec for a regime-switching synthetic series: segments cycle through the
/// regimes in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeSynthesisSpec {
    pub regimes: Vec<RegimeParams>,
    pub segment_length: usize,
    pub n_segments: usize,
    pub period: usize,
    pub seed: u64,
}

impl RegimeSynthesisSpec {
    /// Two AR(1) regimes with opposite persistence; the canonical
    /// antagonistic configuration.
    pub fn two_antagonistic(seed: u64) -> Self {
        Self {
            regimes: vec![
                RegimeParams {
                    ar_coefficient: 0.85,
                    seasonal_amplitude: 0.0,
                    noise_scale: 0.05,
                    level: 0.0,
                },
                RegimeParams {
                    ar_coefficient: -0.85,
                    seasonal_amplitude: 0.0,
                    noise_scale: 0.05,
                    level: 0.0,
                },
            ],
            segment_length: 60,
            n_segments: 10,
            period: 12,
            seed,
        }
    }

    pub fn single_regime(seed: u64) -> Self {
        let mut spec = Self::two_antagonistic(seed);
        spec.regimes.truncate(1);
        spec
    }
}

/// Synthesize the series; returns values and the regime label of each point.
pub fn synthesize_regimes(spec: &RegimeSynthesisSpec) -> Result<(Vec<f64>, Vec<usize>), RegimeError> {
    if spec.regimes.is_empty() || spec.segment_length == 0 || spec.n_segments == 0 {
        return Err(RegimeError::EmptySpec);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.segment_length * spec.n_segments;
    let mut values = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut prev = 0.0;
    let two_pi = std::f64::consts::TAU;
    for segment in 0..spec.n_segments {
        let regime_idx = segment % spec.regimes.len();
        let regime = &spec.regimes[regime_idx];
        for step in 0..spec.segment_length {
            let t = segment * spec.segment_length + step;
            let seasonal = if spec.period >= 2 {
                regime.seasonal_amplitude * (two_pi * (t % spec.period) as f64 / spec.period as f64).sin()
            } else {
                0.0
            };
            let noise = (rng.random::<f64>() * 2.0 - 1.0) * regime.noise_scale;
            let value = regime.level + regime.ar_coefficient * (prev - regime.level) + seasonal + noise;
            values.push(value);
            labels.push(regime_idx);
            prev = value;
        }
    }
    Ok((values, labels))
}

/// Ridge-regularized linear autoregression on (window → next value) pairs.
struct RidgeAr {
    coefficients: Vec<f64>, // window coefficients then intercept
}

impl RidgeAr {
    /// `rows`: indices t such that values[t−window..t] predicts values[t].
    fn fit(values: &[f64], rows: &[usize], window: usize, lambda: f64) -> Option<RidgeAr> {
        let dim = window + 1;
        if rows.len() < dim + 1 {
            return None;
        }
        // normal equations with ridge on the non-intercept block
        let mut ata = vec![vec![0.0; dim]; dim];
        let mut atb = vec![0.0; dim];
        for &t in rows {
            let mut x = vec![0.0; dim];
            x[..window].copy_from_slice(&values[t - window..t]);
            x[window] = 1.0;
            for i in 0..dim {
                for j in 0..dim {
                    ata[i][j] += x[i] * x[j];
                }
                atb[i] += x[i] * values[t];
            }
        }
        for (i, row) in ata.iter_mut().enumerate().take(window) {
            row[i] += lambda;
        }
        solve_dense(&mut ata, &mut atb).map(|c| RidgeAr { coefficients: c })
    }

    fn predict(&self, values: &[f64], t: usize, window: usize) -> f64 {
        let mut y = self.coefficients[window];
        for k in 0..window {
            y += self.coefficients[k] * values[t - window + k];
        }
        y
    }
}

/// Gaussian elimination with partial pivoting; consumes its inputs.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// One harness run: monolithic vs oracle-assigned per-regime predictors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessReport {
    pub seed: u64,
    pub monolithic_loss: f64,
    pub ensemble_loss: f64,
    pub incompatibility: f64,
    pub advantage: f64,
    /// Whether `L_ensemble ≤ L_monolithic` held on this run.
    pub holds: bool,
}

/// Fit one global and per-regime ridge autoregressions on a synthesized
/// series and compare their held-out MSE. The ensemble uses oracle regime
/// assignment, so it upper-bounds what a learned router could do.
pub fn theorem_harness(
    spec: &RegimeSynthesisSpec,
    params: &IncompatibilityParams,
) -> Result<HarnessReport, RegimeError> {
    let (values, labels) = synthesize_regimes(spec)?;
    let n = values.len();
    let window = params.window_length.max(1);
    if n < window + 10 {
        return Err(RegimeError::SeriesTooShort {
            needed: window + 10,
            got: n,
        });
    }
    let split = n * 7 / 10;
    let train_rows: Vec<usize> = (window..split).collect();
    let test_rows: Vec<usize> = (split..n).collect();

    let lambda = 1e-3;
    let global = RidgeAr::fit(&values, &train_rows, window, lambda).ok_or(RegimeError::EmptySpec)?;

    let n_regimes = spec.regimes.len();
    let locals: Vec<Option<RidgeAr>> = (0..n_regimes)
        .map(|r| {
            let rows: Vec<usize> = train_rows.iter().copied().filter(|&t| labels[t] == r).collect();
            RidgeAr::fit(&values, &rows, window, lambda)
        })
        .collect();

    let mut mono_se = 0.0;
    let mut ens_se = 0.0;
    for &t in &test_rows {
        let truth = values[t];
        let mono = global.predict(&values, t, window);
        let local = locals[labels[t]]
            .as_ref()
            .map(|m| m.predict(&values, t, window))
            .unwrap_or(mono);
        mono_se += (truth - mono) * (truth - mono);
        ens_se += (truth - local) * (truth - local);
    }
    let monolithic_loss = mono_se / test_rows.len() as f64;
    let ensemble_loss = ens_se / test_rows.len() as f64;

    let series = TimeSeries::new("synthesis", values, spec.period.max(2))
        .expect("synthesized values are finite");
    let incompatibility = incompatibility_index(&series, params)?;
    let advantage = ensemble_advantage(incompatibility, n_regimes, params.kappa);

    Ok(HarnessReport {
        seed: spec.seed,
        monolithic_loss,
        ensemble_loss,
        incompatibility,
        advantage,
        holds: ensemble_loss <= monolithic_loss,
    })
}

/// Run the harness across `n_seeds` seeded syntheses (seeds `base..base+n`),
/// in deterministic seed order.
pub fn theorem_sweep(
    template: &RegimeSynthesisSpec,
    params: &IncompatibilityParams,
    n_seeds: usize,
) -> Result<Vec<HarnessReport>, RegimeError> {
    theorem_sweep_with_mode(template, params, n_seeds, ExecMode::default())
}

/// [`theorem_sweep`] with an explicit execution mode across seeds.
pub fn theorem_sweep_with_mode(
    template: &RegimeSynthesisSpec,
    params: &IncompatibilityParams,
    n_seeds: usize,
    mode: ExecMode,
) -> Result<Vec<HarnessReport>, RegimeError> {
    let runs = parallel::map_indexed(mode, n_seeds, |i| {
        let mut spec = template.clone();
        spec.seed = template.seed + i as u64;
        theorem_harness(&spec, params)
    });
    runs.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn series_from(values: Vec<f64>) -> TimeSeries {
        TimeSeries::new("t", values, 2).unwrap()
    }

    #[test]
    fn constant_series_has_zero_index() {
        let s = series_from(vec![3.0; 50]);
        let idx = incompatibility_index(&s, &IncompatibilityParams::default()).unwrap();
        assert_eq!(idx, 0.0);
    }

    #[test]
    fn interleaved_regimes_match_closed_form_pair_count() {
        // alternate blocks producing identical z-scored windows whose next
        // values differ by ±2c across regimes
        let c = 1.0;
        let mut values = Vec::new();
        for block in 0..12 {
            let sign = if block % 2 == 0 { 1.0 } else { -1.0 };
            for step in 0..4 {
                values.push(sign * c * (step as f64 + 1.0));
            }
        }
        let s = series_from(values.clone());
        let params = IncompatibilityParams {
            delta: 0.1,
            epsilon: 0.01,
            window_length: 3,
            ..Default::default()
        };
        let idx = incompatibility_index(&s, &params).unwrap();

        // closed form: count qualifying ordered pairs directly
        let (xs, ys) = embed_windows(&values, 3, true);
        let mut expected_hits = 0usize;
        let count = xs.len();
        for i in 0..count {
            for j in 0..count {
                if i != j && pair_matches(&xs, &ys, i, j, params.delta, params.epsilon / params.delta) {
                    expected_hits += 1;
                }
            }
        }
        assert!(expected_hits > 0, "construction should produce colliding windows");
        let expected = expected_hits as f64 / (count * (count - 1)) as f64;
        assert_abs_diff_eq!(idx, expected, epsilon = 1e-12);
    }

    #[test]
    fn tiny_delta_drives_index_to_zero() {
        let spec = RegimeSynthesisSpec::two_antagonistic(3);
        let (values, _) = synthesize_regimes(&spec).unwrap();
        let s = series_from(values);
        let params = IncompatibilityParams {
            delta: 1e-9,
            ..Default::default()
        };
        let idx = incompatibility_index(&s, &params).unwrap();
        assert_eq!(idx, 0.0);
    }

    #[test]
    fn index_monotone_in_delta_and_epsilon() {
        let spec = RegimeSynthesisSpec::two_antagonistic(11);
        let (values, _) = synthesize_regimes(&spec).unwrap();
        let s = series_from(values);
        let base = IncompatibilityParams::default();

        let mut prev = 0.0;
        for delta in [0.05, 0.2, 0.5, 1.0, 2.0] {
            let idx = incompatibility_index(&s, &IncompatibilityParams { delta, ..base.clone() }).unwrap();
            assert!(idx >= prev - 1e-12, "index not monotone in delta");
            assert!((0.0..=1.0).contains(&idx));
            prev = idx;
        }

        let mut prev = 1.0;
        for epsilon in [0.01, 0.05, 0.2, 1.0] {
            let idx = incompatibility_index(&s, &IncompatibilityParams { epsilon, ..base.clone() }).unwrap();
            assert!(idx <= prev + 1e-12, "index not monotone in epsilon");
            prev = idx;
        }
    }

    #[test]
    fn pair_sampling_is_deterministic() {
        let spec = RegimeSynthesisSpec {
            segment_length: 120,
            n_segments: 8,
            ..RegimeSynthesisSpec::two_antagonistic(5)
        };
        let (values, _) = synthesize_regimes(&spec).unwrap();
        let s = series_from(values);
        let params = IncompatibilityParams {
            max_pairs: 10_000, // force sampling: ~950² pairs available
            seed: 42,
            ..Default::default()
        };
        let a = incompatibility_index(&s, &params).unwrap();
        let b = incompatibility_index(&s, &params).unwrap();
        assert_eq!(a, b);
        let seq = incompatibility_index_with_mode(&s, &params, ExecMode::Sequential).unwrap();
        assert_eq!(a, seq);
    }

    #[test]
    fn advantage_zero_cases_exact() {
        assert_eq!(ensemble_advantage(0.0, 7, 1.0), 0.0);
        assert_eq!(ensemble_advantage(0.9, 1, 1.0), 0.0);
    }

    #[test]
    fn advantage_direct_evaluation() {
        let omega = ensemble_advantage(0.5, 4, 1.0);
        let expected = 0.5 * 4.0f64.ln() / (1.0 + (-0.5f64).exp());
        assert_abs_diff_eq!(omega, expected, epsilon = 1e-15);
    }

    #[test]
    fn advantage_monotone_in_m_and_index() {
        for i_t in [0.1, 0.3, 0.7, 1.0] {
            let mut prev = 0.0;
            for m in 1..=8 {
                let v = ensemble_advantage(i_t, m, 1.0);
                assert!(v >= prev - 1e-15);
                prev = v;
            }
        }
        for m in [2, 4, 8] {
            let mut prev = 0.0;
            for step in 0..=20 {
                let i_t = step as f64 / 20.0;
                let v = ensemble_advantage(i_t, m, 1.0);
                assert!(v >= prev - 1e-15, "Ω not monotone in I_T at m={m}");
                prev = v;
            }
        }
    }

    #[test]
    fn ensemble_size_bound_examples() {
        assert_eq!(min_ensemble_size(0.0, 5.0, 0.5, 0.2).unwrap(), 1);
        assert_eq!(min_ensemble_size(0.4, 5.0, 0.5, 0.2).unwrap(), 5);
        assert!(matches!(
            min_ensemble_size(0.4, 5.0, 0.5, 1.0),
            Err(RegimeError::DegenerateCorrelation(_))
        ));
    }

    #[test]
    fn single_regime_harness_has_negligible_gap() {
        let spec = RegimeSynthesisSpec::single_regime(7);
        let report = theorem_harness(&spec, &IncompatibilityParams::default()).unwrap();
        let gap = (report.monolithic_loss - report.ensemble_loss).abs();
        // one regime: both models see the same rows; gap is numerical noise
        assert!(gap <= 1e-6 * report.monolithic_loss.max(1e-12), "gap {gap}");
    }

    #[test]
    fn antagonistic_regimes_favor_the_ensemble() {
        let reports = theorem_sweep(
            &RegimeSynthesisSpec::two_antagonistic(100),
            &IncompatibilityParams::default(),
            10,
        )
        .unwrap();
        let holds = reports.iter().filter(|r| r.holds).count();
        assert!(holds >= 9, "ensemble won only {holds}/10 runs");
        for r in &reports {
            assert!(r.incompatibility >= 0.0 && r.incompatibility <= 1.0);
        }
    }

    #[test]
    fn harness_is_reproducible() {
        let spec = RegimeSynthesisSpec::two_antagonistic(12);
        let params = IncompatibilityParams::default();
        let a = theorem_harness(&spec, &params).unwrap();
        let b = theorem_harness(&spec, &params).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn gap_grows_with_regime_separation() {
        // sweep AR coefficient separation; the monolithic handicap should
        // trend upward
        let mut gaps = Vec::new();
        for &coeff in &[0.2, 0.5, 0.85] {
            let mut mean_gap = 0.0;
            for seed in 0..20 {
                let spec = RegimeSynthesisSpec {
                    regimes: vec![
                        RegimeParams {
                            ar_coefficient: coeff,
                            seasonal_amplitude: 0.0,
                            noise_scale: 0.05,
                            level: 0.0,
                        },
                        RegimeParams {
                            ar_coefficient: -coeff,
                            seasonal_amplitude: 0.0,
                            noise_scale: 0.05,
                            level: 0.0,
                        },
                    ],
                    segment_length: 60,
                    n_segments: 10,
                    period: 12,
                    seed: 500 + seed,
                };
                let r = theorem_harness(&spec, &IncompatibilityParams::default()).unwrap();
                mean_gap += (r.monolithic_loss - r.ensemble_loss) / 20.0;
            }
            gaps.push(mean_gap);
        }
        assert!(gaps[0] < gaps[2], "gaps not increasing: {gaps:?}");
    }
}
