//! Ensemble-analysis regressors: maps from a multi-model ensemble to a
//! single predicted field, behind one train/predict contract.
//!
//! Five kinds ship: the pointwise ensemble mean (EA), a jointly fitted
//! weighted mean (WA), the additive per-month delta method (Delta), a
//! per-location linear model (LM), and Gaussian-process regression with
//! a deep ReLU arc-cosine kernel (GP).

mod nngp;

pub use nngp::{nngp_kernel_value, nngp_marginal_loss, GpModel, NngpParams};

use crate::error::{CoreError, Result};
use crate::field::{
    monthly_climatology, pointwise_mean, EnsembleSnapshot, Field, Grid, PairedDataset,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// The regressor families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnalysisKind {
    /// Pointwise ensemble mean; no learnable parameters.
    EnsembleAverage,
    /// One weight per model, shared across locations, no intercept,
    /// fitted jointly by least squares.
    WeightedAverage,
    /// Observed monthly climatology plus the ensemble-mean change
    /// factor for the snapshot's calendar month.
    Delta,
    /// Ordinary least squares of the target on (1, members) at each
    /// grid location independently.
    LocalLinear,
    /// GP regression on the flattened ensemble with an NNGP kernel,
    /// shared across locations.
    GaussianProcess,
}

impl AnalysisKind {
    pub fn all() -> [AnalysisKind; 5] {
        [
            AnalysisKind::EnsembleAverage,
            AnalysisKind::WeightedAverage,
            AnalysisKind::Delta,
            AnalysisKind::LocalLinear,
            AnalysisKind::GaussianProcess,
        ]
    }
}

impl std::fmt::Display for AnalysisKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AnalysisKind::EnsembleAverage => "EA",
            AnalysisKind::WeightedAverage => "WA",
            AnalysisKind::Delta => "Delta",
            AnalysisKind::LocalLinear => "LM",
            AnalysisKind::GaussianProcess => "GP",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for AnalysisKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ea" => Ok(AnalysisKind::EnsembleAverage),
            "wa" => Ok(AnalysisKind::WeightedAverage),
            "delta" => Ok(AnalysisKind::Delta),
            "lm" => Ok(AnalysisKind::LocalLinear),
            "gp" => Ok(AnalysisKind::GaussianProcess),
            other => Err(CoreError::Config(format!(
                "unknown analysis '{other}'; valid: ea, wa, delta, lm, gp"
            ))),
        }
    }
}

/// Knobs shared by all trainers.
#[derive(Debug, Clone)]
pub struct TrainingOptions {
    /// Ridge penalty for the per-location linear model (slopes only;
    /// the intercept is never penalized). 0 disables it.
    pub ridge: f64,
    /// NNGP kernel depth for the GP.
    pub nngp_depth: usize,
    /// Fixed NNGP hyperparameters; skips the marginal-likelihood search
    /// when set.
    pub nngp_fixed: Option<NngpParams>,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            ridge: 0.0,
            nngp_depth: 10,
            nngp_fixed: None,
        }
    }
}

/// A fitted ensemble-analysis function. Immutable; prediction is pure.
#[derive(Debug, Clone)]
pub struct TrainedAnalysis {
    kind: AnalysisKind,
    grid: Grid,
    members: usize,
    params: AnalysisParams,
}

/// Parameter payload; exactly the variant matching the kind.
#[derive(Debug, Clone)]
pub enum AnalysisParams {
    EnsembleAverage,
    WeightedAverage {
        weights: Vec<f64>,
    },
    Delta {
        obs_clim: Box<[Option<Field>; 12]>,
        ens_clim: Box<[Option<Field>; 12]>,
    },
    LocalLinear {
        /// Location-major: coefficients for cell s occupy
        /// `[s * (m + 1), (s + 1) * (m + 1))`, intercept first.
        coeffs: Vec<f64>,
    },
    GaussianProcess(Box<GpModel>),
}

impl TrainedAnalysis {
    /// The parameter-free pointwise ensemble mean.
    pub fn ensemble_average(grid: Grid, members: usize) -> Self {
        Self {
            kind: AnalysisKind::EnsembleAverage,
            grid,
            members,
            params: AnalysisParams::EnsembleAverage,
        }
    }

    /// Reassembles a model from its parts, e.g. after deserialization.
    pub fn from_parts(
        kind: AnalysisKind,
        grid: Grid,
        members: usize,
        params: AnalysisParams,
    ) -> Result<Self> {
        let matches = matches!(
            (kind, &params),
            (AnalysisKind::EnsembleAverage, AnalysisParams::EnsembleAverage)
                | (AnalysisKind::WeightedAverage, AnalysisParams::WeightedAverage { .. })
                | (AnalysisKind::Delta, AnalysisParams::Delta { .. })
                | (AnalysisKind::LocalLinear, AnalysisParams::LocalLinear { .. })
                | (AnalysisKind::GaussianProcess, AnalysisParams::GaussianProcess(..))
        );
        if !matches {
            return Err(CoreError::Argument(format!(
                "parameter payload does not match analysis kind {kind}"
            )));
        }
        Ok(Self {
            kind,
            grid,
            members,
            params,
        })
    }

    pub fn kind(&self) -> AnalysisKind {
        self.kind
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn member_count(&self) -> usize {
        self.members
    }

    pub fn params(&self) -> &AnalysisParams {
        &self.params
    }

    /// Predicts the target field for one ensemble snapshot.
    pub fn predict(&self, snapshot: &EnsembleSnapshot) -> Result<Field> {
        self.grid.check_compatible(snapshot.grid())?;
        if snapshot.member_count() != self.members {
            return Err(CoreError::MemberMismatch {
                expected: self.members,
                got: snapshot.member_count(),
            });
        }
        match &self.params {
            AnalysisParams::EnsembleAverage => Ok(snapshot.mean_field()),
            AnalysisParams::WeightedAverage { weights } => {
                let p = self.grid.len();
                let mut acc = vec![0.0; p];
                for (w, member) in weights.iter().zip(snapshot.members()) {
                    for (a, v) in acc.iter_mut().zip(member.values()) {
                        *a += w * v;
                    }
                }
                Field::new(self.grid.clone(), acc)
            }
            AnalysisParams::Delta { obs_clim, ens_clim } => {
                let j = (snapshot.time().month() - 1) as usize;
                let (obs, ens) = match (&obs_clim[j], &ens_clim[j]) {
                    (Some(o), Some(e)) => (o, e),
                    _ => {
                        return Err(CoreError::Argument(format!(
                            "no training climatology for month {}",
                            snapshot.time().month()
                        )))
                    }
                };
                // observed climatology + (ensemble mean - ensemble climatology)
                let change = snapshot.mean_field().sub(ens)?;
                obs.add(&change)
            }
            AnalysisParams::LocalLinear { coeffs } => {
                let p = self.grid.len();
                let d = self.members + 1;
                let mut out = vec![0.0; p];
                for (s, o) in out.iter_mut().enumerate() {
                    let beta = &coeffs[s * d..(s + 1) * d];
                    let mut v = beta[0];
                    for (i, member) in snapshot.members().iter().enumerate() {
                        v += beta[i + 1] * member.values()[s];
                    }
                    *o = v;
                }
                Field::new(self.grid.clone(), out)
            }
            AnalysisParams::GaussianProcess(gp) => gp.predict(&self.grid, snapshot),
        }
    }
}

/// Trains an analysis function of the requested kind.
pub fn train_analysis(
    kind: AnalysisKind,
    train: &PairedDataset,
    options: &TrainingOptions,
) -> Result<TrainedAnalysis> {
    let grid = train
        .grid()
        .ok_or_else(|| CoreError::Training("training set is empty".into()))?
        .clone();
    let members = train.member_count().expect("nonempty");
    let params = match kind {
        AnalysisKind::EnsembleAverage => AnalysisParams::EnsembleAverage,
        AnalysisKind::WeightedAverage => AnalysisParams::WeightedAverage {
            weights: fit_weighted_average(train, members)?,
        },
        AnalysisKind::Delta => {
            let times = train.times();
            let targets = train.targets();
            let means: Vec<Field> = train.pairs().iter().map(|(s, _)| s.mean_field()).collect();
            AnalysisParams::Delta {
                obs_clim: Box::new(monthly_climatology(&targets, &times)?),
                ens_clim: Box::new(monthly_climatology(&means, &times)?),
            }
        }
        AnalysisKind::LocalLinear => AnalysisParams::LocalLinear {
            coeffs: fit_local_linear(train, members, options.ridge)?,
        },
        AnalysisKind::GaussianProcess => {
            AnalysisParams::GaussianProcess(Box::new(GpModel::fit(train, options)?))
        }
    };
    Ok(TrainedAnalysis {
        kind,
        grid,
        members,
        params,
    })
}

/// Convenience free function mirroring [`TrainedAnalysis::predict`].
pub fn predict(model: &TrainedAnalysis, snapshot: &EnsembleSnapshot) -> Result<Field> {
    model.predict(snapshot)
}

/// Joint least squares for one weight per member across all locations
/// and times, no intercept. Falls back to a small ridge on rank
/// deficiency.
fn fit_weighted_average(train: &PairedDataset, m: usize) -> Result<Vec<f64>> {
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (snap, target) in train.pairs() {
        let members = snap.members();
        for i in 0..m {
            let xi = members[i].values();
            for j in i..m {
                let xj = members[j].values();
                let dot: f64 = xi.iter().zip(xj).map(|(x, y)| x * y).sum();
                a[(i, j)] += dot;
                if i != j {
                    a[(j, i)] += dot;
                }
            }
            let dot_y: f64 = xi.iter().zip(target.values()).map(|(x, y)| x * y).sum();
            b[i] += dot_y;
        }
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&b).iter().copied().collect());
    }
    // Rank deficient: shrink toward zero just enough to factor.
    let lambda = 1e-8 * a.trace().max(1e-300) / m as f64;
    let mut ridged = a;
    for i in 0..m {
        ridged[(i, i)] += lambda;
    }
    let chol = ridged
        .cholesky()
        .ok_or_else(|| CoreError::Training("weighted-average normal equations singular".into()))?;
    Ok(chol.solve(&b).iter().copied().collect())
}

/// Per-location OLS of the target on (1, members), optional ridge on
/// the slopes.
fn fit_local_linear(train: &PairedDataset, m: usize, ridge: f64) -> Result<Vec<f64>> {
    let d = m + 1;
    let n1 = train.len();
    if ridge == 0.0 && n1 <= d {
        return Err(CoreError::Training(format!(
            "local linear model needs more than m+1 = {d} training times, got {n1}; \
             enable ridge to proceed"
        )));
    }
    let p = train.grid().expect("nonempty").len();
    let per_cell: Vec<Result<Vec<f64>>> = (0..p)
        .into_par_iter()
        .map(|s| {
            let mut a = DMatrix::<f64>::zeros(d, d);
            let mut b = DVector::<f64>::zeros(d);
            let mut x = vec![0.0; d];
            for (snap, target) in train.pairs() {
                x[0] = 1.0;
                for (i, member) in snap.members().iter().enumerate() {
                    x[i + 1] = member.values()[s];
                }
                let y = target.values()[s];
                for i in 0..d {
                    for j in i..d {
                        a[(i, j)] += x[i] * x[j];
                    }
                    b[i] += x[i] * y;
                }
            }
            for i in 0..d {
                for j in 0..i {
                    a[(i, j)] = a[(j, i)];
                }
            }
            if ridge > 0.0 {
                for i in 1..d {
                    a[(i, i)] += ridge;
                }
            }
            match a.cholesky() {
                Some(chol) => Ok(chol.solve(&b).iter().copied().collect()),
                None => Err(CoreError::SingularLocation { location: s }),
            }
        })
        .collect();
    let mut coeffs = Vec::with_capacity(p * d);
    for beta in per_cell {
        coeffs.extend(beta?);
    }
    Ok(coeffs)
}

/// Flattens a snapshot into the GP input vector: members concatenated
/// in order, each row-major.
pub(crate) fn flatten_snapshot(snapshot: &EnsembleSnapshot) -> Vec<f64> {
    let mut out = Vec::with_capacity(snapshot.member_count() * snapshot.grid().len());
    for member in snapshot.members() {
        out.extend_from_slice(member.values());
    }
    out
}

/// Pointwise mean of the training targets, used to center GP targets.
pub(crate) fn target_mean(train: &PairedDataset) -> Result<Field> {
    let targets: Vec<Field> = train.targets();
    pointwise_mean(&targets)
}
