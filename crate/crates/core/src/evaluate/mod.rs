//! Scoring of point forecasts and prediction intervals, dataset splitting
//! and the evaluation studies.

mod metrics;
mod scores;
mod split;

pub use metrics::{first_difference, mape, quantile_scores, r2, rmse, time_diff_score, Mape, QuantileScores, MAPE_EPSILON};
pub use scores::{band_scores, envelope_coverage, point_scores, time_diff_pairs, BandFeedback, BandScores, PointScores, QuantileRollout, TargetScores, Window};
pub use split::{stratified_split, tuning_split, SeriesKey, Split, SplitConfig};
