//! Additive STL decomposition (seasonal-trend decomposition using loess).
//!
//! The inner loop follows the classic scheme: detrend, smooth the cycle
//! subseries, low-pass filter the smoothed subseries to recenter the seasonal
//! component, deseasonalize, then loess-smooth the trend. A robustness pass
//! downweights outliers via bisquare weights on the remainder. The seasonal
//! smoother defaults to periodic mode — every cycle gets the (weighted)
//! subseries mean — which keeps the seasonal component exactly periodic and
//! zero-mean over each full period.
//!
//! The residual is defined as `y − trend − seasonal`, so additive
//! reconstruction is exact by construction. Multiplicative series must be
//! log-transformed upstream.

use super::{Decomposition, SeriesError, TimeSeries};

/// Seasonal smoother choice for the cycle subseries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeasonalSmoother {
    /// Per-cycle subseries means (loess of degree 0 with an unbounded
    /// window). The seasonal component repeats identically every period.
    Periodic,
    /// Loess of degree 1 over each cycle subseries with the given window
    /// (number of cycles). Lets the seasonal shape drift over time.
    Loess { window: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct DecompositionParams {
    pub seasonal: SeasonalSmoother,
    /// Trend loess window; derived from the period when `None`.
    pub trend_window: Option<usize>,
    /// Low-pass loess window; next odd ≥ period when `None`.
    pub low_pass_window: Option<usize>,
    pub inner_iterations: usize,
    pub robustness_iterations: usize,
}

impl Default for DecompositionParams {
    fn default() -> Self {
        Self {
            seasonal: SeasonalSmoother::Periodic,
            trend_window: None,
            low_pass_window: None,
            inner_iterations: 2,
            robustness_iterations: 1,
        }
    }
}

fn next_odd(x: f64) -> usize {
    let mut v = x.ceil() as usize;
    if v % 2 == 0 {
        v += 1;
    }
    v.max(3)
}

impl DecompositionParams {
    fn trend_window_for(&self, n: usize, period: usize) -> usize {
        if let Some(w) = self.trend_window {
            return w | 1; // force odd
        }
        // 1.5·p / (1 − 1.5/n_s); periodic seasonal behaves as n_s = 10n + 1
        let ns = match self.seasonal {
            SeasonalSmoother::Periodic => (10 * n + 1) as f64,
            SeasonalSmoother::Loess { window } => window.max(3) as f64,
        };
        next_odd(1.5 * period as f64 / (1.0 - 1.5 / ns))
    }

    fn low_pass_window_for(&self, period: usize) -> usize {
        match self.low_pass_window {
            Some(w) => w | 1,
            None => next_odd(period as f64),
        }
    }
}

/// Tricube kernel on |u| ≤ 1.
fn tricube(u: f64) -> f64 {
    let a = u.abs();
    if a >= 1.0 {
        0.0
    } else {
        let t = 1.0 - a * a * a;
        t * t * t
    }
}

/// Loess evaluation at position `x` over data points located at integer
/// positions `0..ys.len()`, with external (robustness) weights `rho`.
/// `window` is the nearest-neighbour span q; when q exceeds the data length
/// the bandwidth is inflated by q/n in the usual way.
fn loess_at(ys: &[f64], rho: &[f64], window: usize, degree: usize, x: f64) -> f64 {
    let n = ys.len();
    debug_assert!(n > 0);
    if n == 1 {
        return ys[0];
    }
    let q = window.max(2);
    // distance to the q-th nearest point
    let dists: Vec<f64> = (0..n).map(|i| (i as f64 - x).abs()).collect();
    let lambda = if q >= n {
        let max_d = dists.iter().cloned().fold(0.0, f64::max);
        max_d * q as f64 / n as f64
    } else {
        let mut sorted = dists.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted[q - 1]
    };
    let lambda = lambda.max(1e-9);

    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swy = 0.0;
    let mut swxx = 0.0;
    let mut swxy = 0.0;
    for i in 0..n {
        let w = tricube(dists[i] / lambda) * rho[i];
        if w <= 0.0 {
            continue;
        }
        let xi = i as f64 - x;
        sw += w;
        swx += w * xi;
        swy += w * ys[i];
        swxx += w * xi * xi;
        swxy += w * xi * ys[i];
    }
    if sw <= 0.0 {
        // all neighbours suppressed by robustness weights; fall back to the
        // nearest observation
        let nearest = (0..n)
            .min_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap())
            .unwrap();
        ys[nearest]
    } else if degree == 0 {
        swy / sw
    } else {
        let denom = sw * swxx - swx * swx;
        if denom.abs() < 1e-12 * sw.max(1.0) {
            swy / sw
        } else {
            let slope = (sw * swxy - swx * swy) / denom;
            let intercept = (swy - slope * swx) / sw;
            intercept // evaluated at xi = 0, i.e. at x
        }
    }
}

fn loess_series(ys: &[f64], rho: &[f64], window: usize, degree: usize) -> Vec<f64> {
    (0..ys.len())
        .map(|i| loess_at(ys, rho, window, degree, i as f64))
        .collect()
}

/// Centered moving average of length `window`; output has
/// `len − window + 1` points.
fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    debug_assert!(window >= 1 && xs.len() >= window);
    let mut out = Vec::with_capacity(xs.len() - window + 1);
    let mut sum: f64 = xs[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..xs.len() {
        sum += xs[i] - xs[i - window];
        out.push(sum / window as f64);
    }
    out
}

/// Smooth the cycle subseries of `detrended` and return the result extended
/// by one full period on each side (length n + 2p).
fn cycle_subseries_smooth(
    detrended: &[f64],
    rho: &[f64],
    period: usize,
    smoother: SeasonalSmoother,
) -> Vec<f64> {
    let n = detrended.len();
    let p = period;
    // per phase: values at j, j+p, j+2p, …
    let mut smoothed_phase: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let idx: Vec<usize> = (j..n).step_by(p).collect();
        let sub: Vec<f64> = idx.iter().map(|&i| detrended[i]).collect();
        let sub_rho: Vec<f64> = idx.iter().map(|&i| rho[i]).collect();
        let cycles = sub.len();
        // evaluated at cycle positions −1..=cycles (one extra on each side)
        let values: Vec<f64> = match smoother {
            SeasonalSmoother::Periodic => {
                let wsum: f64 = sub_rho.iter().sum();
                let mean = if wsum > 0.0 {
                    sub.iter().zip(&sub_rho).map(|(v, w)| v * w).sum::<f64>() / wsum
                } else {
                    sub.iter().sum::<f64>() / cycles as f64
                };
                vec![mean; cycles + 2]
            }
            SeasonalSmoother::Loess { window } => (-1..=cycles as i64)
                .map(|k| loess_at(&sub, &sub_rho, window, 1, k as f64))
                .collect(),
        };
        smoothed_phase.push(values);
    }
    // reassemble to extended positions −p .. n+p−1
    (0..n + 2 * p)
        .map(|e| {
            let orig = e as i64 - p as i64;
            let j = orig.rem_euclid(p as i64) as usize;
            let k = (orig - j as i64) / p as i64; // cycle index, −1-based at left
            smoothed_phase[j][(k + 1) as usize]
        })
        .collect()
}

/// Low-pass filter: MA(p) twice, MA(3), then loess(degree 1). Input is the
/// extended subseries (n + 2p), output length n.
fn low_pass(extended: &[f64], period: usize, window: usize, rho: &[f64]) -> Vec<f64> {
    let a = moving_average(extended, period);
    let b = moving_average(&a, period);
    let c = moving_average(&b, 3);
    debug_assert_eq!(c.len(), rho.len());
    loess_series(&c, rho, window, 1)
}

/// Additive STL decomposition of `series` into trend, seasonal and residual.
///
/// Requires `period ≥ 2` and `len ≥ 2·period`. Deterministic: identical
/// inputs and params give bit-identical output.
pub fn decompose(series: &TimeSeries, params: &DecompositionParams) -> Result<Decomposition, SeriesError> {
    let y = &series.values;
    let n = y.len();
    let p = series.period;
    if p < 2 {
        return Err(SeriesError::PeriodTooSmall(p));
    }
    if n < 2 * p {
        return Err(SeriesError::SeriesTooShort { length: n, period: p });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SeriesError::NonFiniteInput);
    }

    let trend_window = params.trend_window_for(n, p);
    let lp_window = params.low_pass_window_for(p);
    let inner = params.inner_iterations.max(1);

    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    let mut rho = vec![1.0; n];

    for outer in 0..=params.robustness_iterations {
        for _ in 0..inner {
            let detrended: Vec<f64> = y.iter().zip(&trend).map(|(v, t)| v - t).collect();
            let extended = cycle_subseries_smooth(&detrended, &rho, p, params.seasonal);
            let low = low_pass(&extended, p, lp_window, &rho);
            for t in 0..n {
                seasonal[t] = extended[p + t] - low[t];
            }
            let deseasonalized: Vec<f64> = y.iter().zip(&seasonal).map(|(v, s)| v - s).collect();
            trend = loess_series(&deseasonalized, &rho, trend_window, 1);
        }
        if outer < params.robustness_iterations {
            let mut abs_resid: Vec<f64> = (0..n)
                .map(|t| (y[t] - trend[t] - seasonal[t]).abs())
                .collect();
            let mut sorted = abs_resid.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            };
            if median < 1e-300 {
                rho = vec![1.0; n];
            } else {
                let cutoff = 6.0 * median;
                for t in 0..n {
                    let u = abs_resid[t] / cutoff;
                    abs_resid[t] = if u < 1.0 {
                        let w = 1.0 - u * u;
                        w * w
                    } else {
                        0.0
                    };
                }
                rho = abs_resid;
            }
        }
    }

    let residual: Vec<f64> = (0..n).map(|t| y[t] - trend[t] - seasonal[t]).collect();
    Ok(Decomposition {
        trend,
        seasonal,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{reconstruct_subset, ComponentSubset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sinusoid_plus_ramp(n: usize, period: usize, amp: f64, slope: f64) -> (TimeSeries, Vec<f64>, Vec<f64>) {
        let two_pi = std::f64::consts::TAU;
        let seasonal: Vec<f64> = (0..n)
            .map(|t| amp * (two_pi * (t % period) as f64 / period as f64).sin())
            .collect();
        let trend: Vec<f64> = (0..n).map(|t| 5.0 + slope * t as f64).collect();
        let values: Vec<f64> = (0..n).map(|t| seasonal[t] + trend[t]).collect();
        (
            TimeSeries::new("synthetic", values, period).unwrap(),
            trend,
            seasonal,
        )
    }

    fn var(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn sinusoid_and_ramp_are_separated() {
        let period = 12;
        let n = 10 * period;
        let slope = 0.05;
        let (ts, _, true_seasonal) = sinusoid_plus_ramp(n, period, 3.0, slope);
        let d = decompose(&ts, &DecompositionParams::default()).unwrap();

        // seasonal captures ≥ 95% of the sinusoid variance
        let err: Vec<f64> = d
            .seasonal
            .iter()
            .zip(&true_seasonal)
            .map(|(a, b)| a - b)
            .collect();
        let captured = 1.0 - var(&err) / var(&true_seasonal);
        assert!(captured >= 0.95, "seasonal captured only {captured:.4}");

        // trend slope within 5% (least-squares slope of the trend component)
        let m = n as f64;
        let xbar = (m - 1.0) / 2.0;
        let ybar = d.trend.iter().sum::<f64>() / m;
        let mut num = 0.0;
        let mut den = 0.0;
        for (t, v) in d.trend.iter().enumerate() {
            num += (t as f64 - xbar) * (v - ybar);
            den += (t as f64 - xbar) * (t as f64 - xbar);
        }
        let fitted_slope = num / den;
        assert!(
            (fitted_slope - slope).abs() <= 0.05 * slope,
            "slope {fitted_slope} vs {slope}"
        );
    }

    #[test]
    fn constant_series_decomposes_trivially() {
        let ts = TimeSeries::new("const", vec![7.25; 48], 12).unwrap();
        let d = decompose(&ts, &DecompositionParams::default()).unwrap();
        for t in 0..48 {
            assert!((d.trend[t] - 7.25).abs() < 1e-9, "trend[{t}] = {}", d.trend[t]);
            assert!(d.seasonal[t].abs() < 1e-9);
            assert!(d.residual[t].abs() < 1e-9);
        }
    }

    #[test]
    fn white_noise_lands_in_residual() {
        let period = 12;
        let n = 144;
        let mut ratios = Vec::new();
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let ts = TimeSeries::new("noise", values.clone(), period).unwrap();
            let d = decompose(&ts, &DecompositionParams::default()).unwrap();
            ratios.push(var(&d.residual) / var(&values));
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(mean >= 0.80, "mean residual variance share {mean:.4}");
        let worst = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(worst >= 0.70, "worst residual variance share {worst:.4}");
    }

    #[test]
    fn reconstruction_is_exact() {
        let (ts, _, _) = sinusoid_plus_ramp(96, 12, 2.0, 0.1);
        let d = decompose(&ts, &DecompositionParams::default()).unwrap();
        let full = reconstruct_subset(&d, ComponentSubset::FULL);
        for (a, b) in full.iter().zip(&ts.values) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn seasonal_mean_per_period_near_zero() {
        let (ts, _, _) = sinusoid_plus_ramp(120, 12, 4.0, 0.03);
        let d = decompose(&ts, &DecompositionParams::default()).unwrap();
        for cycle in d.seasonal.chunks_exact(12) {
            let mean = cycle.iter().sum::<f64>() / 12.0;
            assert!(mean.abs() <= 1e-6, "cycle mean {mean}");
        }
    }

    #[test]
    fn too_short_series_rejected() {
        let ts = TimeSeries::new("short", vec![1.0; 20], 12).unwrap();
        assert!(matches!(
            decompose(&ts, &DecompositionParams::default()),
            Err(SeriesError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn period_one_rejected() {
        let ts = TimeSeries::new("p1", vec![1.0; 20], 1).unwrap();
        assert!(matches!(
            decompose(&ts, &DecompositionParams::default()),
            Err(SeriesError::PeriodTooSmall(1))
        ));
    }

    #[test]
    fn decomposition_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..96)
            .map(|t| (t as f64 * 0.4).sin() * 2.0 + rng.random::<f64>())
            .collect();
        let ts = TimeSeries::new("det", values, 8).unwrap();
        let a = decompose(&ts, &DecompositionParams::default()).unwrap();
        let b = decompose(&ts, &DecompositionParams::default()).unwrap();
        assert_eq!(a.trend, b.trend);
        assert_eq!(a.seasonal, b.seasonal);
        assert_eq!(a.residual, b.residual);
    }

    #[test]
    fn windowed_seasonal_smoother_also_reconstructs() {
        let (ts, _, _) = sinusoid_plus_ramp(120, 12, 2.0, 0.05);
        let params = DecompositionParams {
            seasonal: SeasonalSmoother::Loess { window: 7 },
            ..Default::default()
        };
        let d = decompose(&ts, &params).unwrap();
        for t in 0..ts.len() {
            let sum = d.trend[t] + d.seasonal[t] + d.residual[t];
            assert!((sum - ts.values[t]).abs() < 1e-8);
        }
    }
}
