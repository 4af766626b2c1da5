//! Posterior summaries, hold-out masks and predictive scores.

pub mod diagnostics;
pub mod holdout;
pub mod scoring;
pub mod summary;

pub use diagnostics::split_rhat;
pub use holdout::{build_holdout_mask, HoldoutMask, HoldoutSpec};
pub use scoring::{coverage, crps_empirical, crps_pairwise, predictive_draws, rmspe, score_holdout, PredictiveDraws, ScoreRow, ScoreTable};
pub use summary::{posterior_summary, quantile, summarize, ParameterSummary, Summary};
