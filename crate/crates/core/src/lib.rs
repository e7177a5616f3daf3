//! Conformal prediction sets and conformal ensembles for gridded
//! multi-model projections.
//!
//! The library turns an ensemble of gridded model runs plus a target
//! observation series into statistically valid prediction sets. The
//! pipeline is split conformal inference specialised to fields:
//!
//! 1. train an ensemble-analysis regressor on a historical window
//!    ([`analysis`]),
//! 2. score the held-out calibration residuals with a data-depth
//!    function ([`depth`]),
//! 3. keep the least outlying residuals and translate them by future
//!    predictions to form a conformal ensemble ([`conformal`]).
//!
//! Baseline uncertainty methods (inter-model variability, with and
//! without quantile-mapping bias correction) live in [`baselines`],
//! distributional evaluation in [`metrics`], and the experiment
//! protocols (white-noise control, perfect-model jackknife, calibration
//! size sweep) in [`experiment`].

pub mod analysis;
pub mod baselines;
pub mod conformal;
pub mod depth;
mod error;
pub mod experiment;
pub mod field;
pub mod metrics;

pub use analysis::{
    nngp_kernel_value, nngp_marginal_loss, predict, train_analysis, AnalysisKind, NngpParams,
    TrainedAnalysis, TrainingOptions,
};
pub use conformal::{calibrate, prediction_band, Band, ConformalCalibration};
pub use depth::{central_threshold, depth_score, depth_scores_self, DepthKind, ResidualPool};
pub use error::{CoreError, Result};
pub use field::{
    monthly_climatology, split_paired_dataset, EnsembleSnapshot, Field, Grid, PairedDataset,
    SplitSpec, TimeIndex,
};
pub use metrics::{sliced_wasserstein, wasserstein1d, MetricsRow, ProjectionCloud};
