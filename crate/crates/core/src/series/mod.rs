//! Time-series containers, rolling-origin folds, and STL decomposition with
//! coalition-subset reconstruction.

mod stl;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stl::{decompose, DecompositionParams, SeasonalSmoother};

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("series too short: length {length} < 2×period {period}")]
    SeriesTooShort { length: usize, period: usize },
    #[error("non-finite value in series")]
    NonFiniteInput,
    #[error("seasonal period must be ≥ 2, got {0}")]
    PeriodTooSmall(usize),
    #[error("insufficient history: length {length} cannot fit {n_folds} folds of horizon {horizon}")]
    InsufficientHistory {
        length: usize,
        n_folds: usize,
        horizon: usize,
    },
    #[error("invalid fold schedule: {0}")]
    InvalidSchedule(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv at {path}: {message}")]
    CsvFormat { path: String, message: String },
}

/// A univariate series with a declared seasonal period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: String,
    pub values: Vec<f64>,
    /// Seasonal period in samples.
    pub period: usize,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, values: Vec<f64>, period: usize) -> Result<Self, SeriesError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SeriesError::NonFiniteInput);
        }
        Ok(Self {
            id: id.into(),
            values,
            period,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One rolling-origin evaluation fold: train on `..train_end`, forecast
/// `train_end..train_end + horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_end: usize,
    pub horizon: usize,
    pub index_in_schedule: usize,
}

impl Fold {
    /// Indices of the forecast window.
    pub fn window(&self) -> std::ops::Range<usize> {
        self.train_end..self.train_end + self.horizon
    }
}

/// Additive decomposition: `trend + seasonal + residual` reconstructs the
/// input exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
}

impl Decomposition {
    pub fn len(&self) -> usize {
        self.trend.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trend.is_empty()
    }

    /// Variance-based seasonal strength in [0,1]: `1 − Var(R)/Var(S+R)`.
    pub fn seasonal_strength(&self) -> f64 {
        component_strength(&self.seasonal, &self.residual)
    }

    /// Variance-based trend strength in [0,1]: `1 − Var(R)/Var(T+R)`.
    pub fn trend_strength(&self) -> f64 {
        component_strength(&self.trend, &self.residual)
    }
}

fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64
}

fn component_strength(component: &[f64], residual: &[f64]) -> f64 {
    let combined: Vec<f64> = component.iter().zip(residual).map(|(c, r)| c + r).collect();
    let var_cr = variance(&combined);
    if var_cr < 1e-300 {
        return 0.0;
    }
    (1.0 - variance(residual) / var_cr).clamp(0.0, 1.0)
}

/// The three additive components of a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Trend,
    Seasonality,
    Residual,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Trend, Component::Seasonality, Component::Residual];

    pub fn name(self) -> &'static str {
        match self {
            Component::Trend => "trend",
            Component::Seasonality => "seasonality",
            Component::Residual => "residual",
        }
    }
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One of the 8 coalition subsets of {Trend, Seasonality, Residual}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComponentSubset {
    pub trend: bool,
    pub seasonality: bool,
    pub residual: bool,
}

impl ComponentSubset {
    pub const EMPTY: ComponentSubset = ComponentSubset {
        trend: false,
        seasonality: false,
        residual: false,
    };
    pub const FULL: ComponentSubset = ComponentSubset {
        trend: true,
        seasonality: true,
        residual: true,
    };

    /// All 8 subsets in the fixed enumeration order ∅, T, S, R, TS, TR, SR, TSR.
    pub const ALL: [ComponentSubset; 8] = [
        ComponentSubset::EMPTY,
        ComponentSubset::from_members(true, false, false),
        ComponentSubset::from_members(false, true, false),
        ComponentSubset::from_members(false, false, true),
        ComponentSubset::from_members(true, true, false),
        ComponentSubset::from_members(true, false, true),
        ComponentSubset::from_members(false, true, true),
        ComponentSubset::FULL,
    ];

    pub const fn from_members(trend: bool, seasonality: bool, residual: bool) -> Self {
        Self {
            trend,
            seasonality,
            residual,
        }
    }

    pub fn contains(&self, c: Component) -> bool {
        match c {
            Component::Trend => self.trend,
            Component::Seasonality => self.seasonality,
            Component::Residual => self.residual,
        }
    }

    pub fn with(mut self, c: Component) -> Self {
        match c {
            Component::Trend => self.trend = true,
            Component::Seasonality => self.seasonality = true,
            Component::Residual => self.residual = true,
        }
        self
    }

    pub fn size(&self) -> usize {
        self.trend as usize + self.seasonality as usize + self.residual as usize
    }
}

/// Sum of the subset's components, elementwise. The empty subset yields the
/// all-zeros sequence; the full subset reconstructs the input series.
pub fn reconstruct_subset(decomp: &Decomposition, subset: ComponentSubset) -> Vec<f64> {
    let n = decomp.len();
    let mut out = vec![0.0; n];
    if subset.trend {
        for (o, t) in out.iter_mut().zip(&decomp.trend) {
            *o += t;
        }
    }
    if subset.seasonality {
        for (o, s) in out.iter_mut().zip(&decomp.seasonal) {
            *o += s;
        }
    }
    if subset.residual {
        for (o, r) in out.iter_mut().zip(&decomp.residual) {
            *o += r;
        }
    }
    out
}

/// Rolling-origin fold schedule with step = horizon (non-overlapping
/// forecast windows).
pub fn make_folds(series: &TimeSeries, n_folds: usize, horizon: usize) -> Result<Vec<Fold>, SeriesError> {
    make_folds_with_step(series, n_folds, horizon, horizon)
}

/// Rolling-origin folds with an explicit step between train ends. The last
/// fold always ends at `len − horizon`; earlier folds step back by `step`.
pub fn make_folds_with_step(
    series: &TimeSeries,
    n_folds: usize,
    horizon: usize,
    step: usize,
) -> Result<Vec<Fold>, SeriesError> {
    if n_folds == 0 || horizon == 0 || step == 0 {
        return Err(SeriesError::InvalidSchedule(
            "n_folds, horizon and step must be positive".into(),
        ));
    }
    let len = series.len();
    let needed = horizon + (n_folds - 1) * step + 1;
    if len < needed {
        return Err(SeriesError::InsufficientHistory {
            length: len,
            n_folds,
            horizon,
        });
    }
    Ok((0..n_folds)
        .map(|i| Fold {
            train_end: len - horizon - (n_folds - 1 - i) * step,
            horizon,
            index_in_schedule: i,
        })
        .collect())
}

/// Read a `timestamp,value` CSV (UTF-8, `.` decimals, chronological rows).
pub fn read_series_csv(path: &Path, id: impl Into<String>, period: usize) -> Result<TimeSeries, SeriesError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let value_idx = headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case("value"))
        .ok_or_else(|| SeriesError::CsvFormat {
            path: path.display().to_string(),
            message: "missing `value` column".into(),
        })?;
    let mut values = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let raw = record.get(value_idx).unwrap_or("");
        let v: f64 = raw.trim().parse().map_err(|_| SeriesError::CsvFormat {
            path: path.display().to_string(),
            message: format!("row {}: unparsable value `{raw}`", row_idx + 2),
        })?;
        values.push(v);
    }
    TimeSeries::new(id, values, period)
}
