//! Supervised-learning views of trajectories: uniform resampling, lagged
//! delta features, standardization and closed-loop rollout.

mod matrix;
mod rollout;
mod scaler;
mod series;

pub use matrix::{build_dataset, build_matrix, build_strided, BuildMode, FeatureMatrix, FeatureSpec};
pub use rollout::{closed_loop_rollout, guided_rollout, Forecaster, Rollout};
pub use scaler::Scaler;
pub use series::{resample_uniform, resample_window, Channel, UniformSeries, DEFAULT_DT};
