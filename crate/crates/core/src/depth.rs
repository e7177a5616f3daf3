//! Depth functions and scoring rules over residual fields.
//!
//! A depth scores how central a field sits inside a reference pool of
//! residuals; all scores live in [0, 1] with 1 the most central. Two of
//! the rules are proper depths (translation invariant, monotone along
//! rays); the inverse sup-norm is a pool-independent scoring rule kept
//! for comparison.

use crate::error::{CoreError, Result};
use crate::field::{Field, Grid};
use rayon::prelude::*;
use std::sync::OnceLock;

/// The depth functions and scoring rules shipped by the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DepthKind {
    /// 1 / (1 + E ||r - R||_inf) over the pool.
    LinfDepth,
    /// Mean over grid cells of the univariate Tukey depth
    /// min(F(r), 1 - F(r)) under the pool's empirical CDF.
    IntegratedTukey,
    /// 1 / (1 + ||r||_inf); ignores the pool entirely.
    InvLinfNorm,
}

impl DepthKind {
    /// Proper depths satisfy translation invariance and monotone decay;
    /// the inverse norm does not.
    pub fn is_proper(self) -> bool {
        !matches!(self, DepthKind::InvLinfNorm)
    }

    pub fn all() -> [DepthKind; 3] {
        [
            DepthKind::LinfDepth,
            DepthKind::IntegratedTukey,
            DepthKind::InvLinfNorm,
        ]
    }
}

impl std::fmt::Display for DepthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DepthKind::LinfDepth => "linf",
            DepthKind::IntegratedTukey => "tukey",
            DepthKind::InvLinfNorm => "norm",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for DepthKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linf" => Ok(DepthKind::LinfDepth),
            "tukey" => Ok(DepthKind::IntegratedTukey),
            "norm" => Ok(DepthKind::InvLinfNorm),
            other => Err(CoreError::Config(format!(
                "unknown depth '{other}'; valid: linf, tukey, norm"
            ))),
        }
    }
}

/// A nonempty pool of residual fields on a common grid. Per-cell sorted
/// columns are built lazily for the empirical-CDF depth.
#[derive(Debug)]
pub struct ResidualPool {
    fields: Vec<Field>,
    sorted_cols: OnceLock<Vec<f64>>,
}

impl ResidualPool {
    pub fn new(fields: Vec<Field>) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| CoreError::Argument("residual pool must be nonempty".into()))?;
        let grid = first.grid().clone();
        for f in &fields {
            grid.check_compatible(f.grid())?;
        }
        Ok(Self {
            fields,
            sorted_cols: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    /// Column-major sorted values: cell s occupies
    /// `[s * n2, (s + 1) * n2)`, ascending.
    fn sorted_columns(&self) -> &[f64] {
        self.sorted_cols.get_or_init(|| {
            let n = self.fields.len();
            let p = self.grid().len();
            let mut cols = vec![0.0; n * p];
            for (i, f) in self.fields.iter().enumerate() {
                for (s, v) in f.values().iter().enumerate() {
                    cols[s * n + i] = *v;
                }
            }
            for s in 0..p {
                cols[s * n..(s + 1) * n]
                    .sort_by(|a, b| a.partial_cmp(b).expect("fields are finite"));
            }
            cols
        })
    }
}

impl Clone for ResidualPool {
    fn clone(&self) -> Self {
        Self {
            fields: self.fields.clone(),
            sorted_cols: OnceLock::new(),
        }
    }
}

fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut max = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y).abs();
        if d > max {
            max = d;
        }
    }
    max
}

fn linf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Scores a field against a residual pool. Returns a value in [0, 1].
pub fn depth_score(kind: DepthKind, r: &Field, pool: &ResidualPool) -> Result<f64> {
    pool.grid().check_compatible(r.grid())?;
    Ok(match kind {
        DepthKind::LinfDepth => {
            let mean_dist = pool
                .fields()
                .iter()
                .map(|f| linf_distance(r.values(), f.values()))
                .sum::<f64>()
                / pool.len() as f64;
            1.0 / (1.0 + mean_dist)
        }
        DepthKind::IntegratedTukey => {
            let n = pool.len();
            let cols = pool.sorted_columns();
            let mut acc = 0.0;
            for (s, v) in r.values().iter().enumerate() {
                let col = &cols[s * n..(s + 1) * n];
                // F(v) = #{ R_i(s) <= v } / n
                let count = col.partition_point(|x| x <= v);
                let f = count as f64 / n as f64;
                acc += f.min(1.0 - f);
            }
            acc / r.len() as f64
        }
        DepthKind::InvLinfNorm => 1.0 / (1.0 + linf_norm(r.values())),
    })
}

/// Aligned depth scores for a calibration pool, each in [0, 1].
#[derive(Debug, Clone)]
pub struct DepthScores {
    scores: Vec<f64>,
}

impl DepthScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(CoreError::Argument("empty score vector".into()));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(CoreError::Argument(format!("score {bad} outside [0, 1]")));
        }
        Ok(Self { scores })
    }

    pub fn values(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Scores every pool member against the pool itself (self-inclusion:
/// each member stays in its own reference pool). Members are evaluated
/// independently, so the result is identical however the work is
/// scheduled.
pub fn depth_scores_self(kind: DepthKind, pool: &ResidualPool) -> DepthScores {
    if kind == DepthKind::IntegratedTukey {
        // Force the shared sorted columns before fanning out.
        let _ = pool.sorted_columns();
    }
    let scores: Vec<f64> = pool
        .fields()
        .par_iter()
        .map(|r| depth_score(kind, r, pool).expect("pool members share the pool grid"))
        .collect();
    DepthScores { scores }
}

/// The conformal rank k = ceil((n2 + 1)(1 - alpha)), guarded against
/// floating-point noise on exact integers.
pub fn conformal_rank(n2: usize, alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CoreError::Config(format!("alpha {alpha} outside (0, 1)")));
    }
    let x = (n2 as f64 + 1.0) * (1.0 - alpha);
    let k = (x - 1e-9).ceil() as usize;
    if k > n2 {
        return Err(CoreError::InfeasibleLevel { alpha, n2, k });
    }
    Ok(k.max(1))
}

/// Threshold and membership of the depth central region.
#[derive(Debug, Clone)]
pub struct CentralThreshold {
    /// The k-th largest calibration score.
    pub tau: f64,
    /// k = ceil((n2 + 1)(1 - alpha)).
    pub k: usize,
    /// Indices with score >= tau, ordered by descending score (ties by
    /// ascending index). Exceeds k only under ties at tau.
    pub kept: Vec<usize>,
}

/// Computes tau as the k-th largest score and keeps every member at or
/// above it. Ties at tau are all kept.
pub fn central_threshold(scores: &DepthScores, alpha: f64) -> Result<CentralThreshold> {
    let n2 = scores.len();
    let k = conformal_rank(n2, alpha)?;
    let vals = scores.values();
    let mut order: Vec<usize> = (0..n2).collect();
    order.sort_by(|&a, &b| {
        vals[b]
            .partial_cmp(&vals[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    let tau = vals[order[k - 1]];
    let kept: Vec<usize> = order
        .into_iter()
        .take_while(|&i| vals[i] >= tau)
        .collect();
    Ok(CentralThreshold { tau, k, kept })
}
