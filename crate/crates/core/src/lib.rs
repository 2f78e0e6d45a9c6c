//! Judge-guided ensemble weight optimization for time-series forecasts.
//!
//! The engine combines pre-computed point (and optionally quantile) forecasts
//! from several candidate models into a single convex-weighted ensemble. A
//! judge — rule-based or a remote chat model — iteratively reviews each
//! optimized weight vector, decides whether to accept it or to re-optimize
//! under a different error metric, and explains its reasoning. Explanations
//! are validated against exact Shapley attributions of forecast error over
//! the series' trend/seasonal/residual components, and every iteration is
//! recorded in an audit trail suitable for later reward labeling.
//!
//! Module map:
//!
//! - [`series`]: time-series container, rolling-origin folds, STL decomposition
//! - [`metrics`]: MAE / MSE / RMSE / sMAPE / MASE / CRPS scoring
//! - [`optimizer`]: simplex-constrained weight optimization plus a grid oracle
//! - [`shap`]: exact 3-component Shapley attribution and faithfulness scoring
//! - [`judge`]: rule-based and remote judging backends
//! - [`orchestrator`]: the iterative optimize/judge loop, audit trail, reflection
//! - [`regime`]: temporal incompatibility index and ensemble-advantage analysis
//! - [`rewards`]: composite rewards, group advantages, trajectory export

pub mod judge;
pub mod metrics;
pub mod optimizer;
pub mod orchestrator;
pub mod parallel;
pub mod regime;
pub mod rewards;
pub mod series;
pub mod shap;
