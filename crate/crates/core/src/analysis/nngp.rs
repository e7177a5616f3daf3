//! Deep ReLU arc-cosine (NNGP) kernel, the location-shared marginal
//! likelihood in its block-diagonal form, and the derivative-free
//! hyperparameter search behind the GP analysis function.
//!
//! With one noise variance shared by all grid locations, the full
//! covariance factors as (Sigma + sigma^2 I_n) kron I_p, so one n x n
//! factorization serves every location: the quadratic form sums over
//! location columns and the log-determinant picks up a factor p.

use crate::error::{CoreError, Result};
use crate::field::{EnsembleSnapshot, Field, Grid, PairedDataset};
use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{flatten_snapshot, target_mean, TrainingOptions};

/// NNGP kernel hyperparameters: weight variance, bias variance, noise
/// variance, and layer count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NngpParams {
    pub sigma_w2: f64,
    pub sigma_b2: f64,
    pub sigma2: f64,
    pub depth: usize,
}

impl NngpParams {
    pub fn new(sigma_w2: f64, sigma_b2: f64, sigma2: f64, depth: usize) -> Result<Self> {
        let p = Self {
            sigma_w2,
            sigma_b2,
            sigma2,
            depth,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w2.is_finite() && self.sigma_w2 > 0.0) {
            return Err(CoreError::Argument(format!(
                "sigma_w2 must be finite and > 0, got {}",
                self.sigma_w2
            )));
        }
        if !(self.sigma_b2.is_finite() && self.sigma_b2 >= 0.0) {
            return Err(CoreError::Argument(format!(
                "sigma_b2 must be finite and >= 0, got {}",
                self.sigma_b2
            )));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(CoreError::Argument(format!(
                "sigma2 must be finite and > 0, got {}",
                self.sigma2
            )));
        }
        if self.depth == 0 {
            return Err(CoreError::Argument("depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// One arc-cosine layer step from cross value c and the two self
/// values v, v2 of the previous layer.
fn arccos_step(c: f64, v: f64, v2: f64, sigma_w2: f64, sigma_b2: f64) -> f64 {
    let denom = (v * v2).sqrt();
    if denom <= 0.0 {
        // A degenerate input carries zero signal through ReLU.
        return sigma_b2;
    }
    let gamma = (c / denom).clamp(-1.0, 1.0).acos();
    sigma_b2
        + sigma_w2 / (2.0 * std::f64::consts::PI)
            * denom
            * (gamma.sin() + (std::f64::consts::PI - gamma) * gamma.cos())
}

/// Diagonal layer step: gamma = 0 collapses the bracket to pi.
fn arccos_diag_step(v: f64, sigma_w2: f64, sigma_b2: f64) -> f64 {
    sigma_b2 + sigma_w2 * v / 2.0
}

/// K^depth(x, x2) by the ReLU arc-cosine recursion. The base layer is
/// K^0(x, x2) = sigma_b2 + sigma_w2 (x . x2) / q; `depth` = 0 returns
/// the base layer itself.
pub fn nngp_kernel_value(x: &[f64], x2: &[f64], params: &NngpParams) -> Result<f64> {
    if x.is_empty() || x.len() != x2.len() {
        return Err(CoreError::Argument(format!(
            "kernel inputs must have equal nonzero lengths, got {} and {}",
            x.len(),
            x2.len()
        )));
    }
    if x.iter().chain(x2.iter()).any(|v| !v.is_finite()) {
        return Err(CoreError::Argument("non-finite kernel input".into()));
    }
    let q = x.len() as f64;
    let dot: f64 = x.iter().zip(x2).map(|(a, b)| a * b).sum();
    let self1: f64 = x.iter().map(|a| a * a).sum();
    let self2: f64 = x2.iter().map(|a| a * a).sum();
    let mut c = params.sigma_b2 + params.sigma_w2 * dot / q;
    let mut v = params.sigma_b2 + params.sigma_w2 * self1 / q;
    let mut v2 = params.sigma_b2 + params.sigma_w2 * self2 / q;
    for _ in 0..params.depth {
        c = arccos_step(c, v, v2, params.sigma_w2, params.sigma_b2);
        v = arccos_diag_step(v, params.sigma_w2, params.sigma_b2);
        v2 = arccos_diag_step(v2, params.sigma_w2, params.sigma_b2);
    }
    Ok(c)
}

/// Precomputed training context reused across loss evaluations: the
/// parameter-free input gram and the per-location centered targets.
struct GpContext {
    /// (x_i . x_j) / q, n x n.
    raw_gram: DMatrix<f64>,
    /// Centered targets, n x p (row = time, column = location).
    yc: DMatrix<f64>,
}

impl GpContext {
    fn build(train: &PairedDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(CoreError::Training("training set is empty".into()));
        }
        let n = train.len();
        let p = train.grid().expect("nonempty").len();
        let inputs: Vec<Vec<f64>> = train
            .pairs()
            .iter()
            .map(|(snap, _)| flatten_snapshot(snap))
            .collect();
        let q = inputs[0].len() as f64;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = &inputs[i];
                (0..n)
                    .map(|j| {
                        let dot: f64 = xi.iter().zip(&inputs[j]).map(|(a, b)| a * b).sum();
                        dot / q
                    })
                    .collect()
            })
            .collect();
        let mut raw_gram = DMatrix::<f64>::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                raw_gram[(i, j)] = *v;
            }
        }

        let mean = target_mean(train)?;
        let mut yc = DMatrix::<f64>::zeros(n, p);
        for (t, (_, target)) in train.pairs().iter().enumerate() {
            for (s, (v, mu)) in target.values().iter().zip(mean.values()).enumerate() {
                yc[(t, s)] = v - mu;
            }
        }
        Ok(Self { raw_gram, yc })
    }

    /// The depth-D kernel gram for the given hyperparameters.
    fn sigma(&self, params: &NngpParams) -> DMatrix<f64> {
        let n = self.raw_gram.nrows();
        let mut k = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = params.sigma_b2 + params.sigma_w2 * self.raw_gram[(i, j)];
            }
        }
        for _ in 0..params.depth {
            let diag: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
            for i in 0..n {
                for j in (i + 1)..n {
                    let c = arccos_step(k[(i, j)], diag[i], diag[j], params.sigma_w2, params.sigma_b2);
                    k[(i, j)] = c;
                    k[(j, i)] = c;
                }
            }
            for (i, v) in diag.iter().enumerate() {
                k[(i, i)] = arccos_diag_step(*v, params.sigma_w2, params.sigma_b2);
            }
        }
        k
    }

    /// Cholesky of Sigma + sigma^2 I with escalating jitter retries.
    fn factor(&self, params: &NngpParams) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let n = self.raw_gram.nrows();
        let mut k = self.sigma(params);
        for i in 0..n {
            k[(i, i)] += params.sigma2;
        }
        let mean_diag = k.trace() / n as f64;
        let mut jitter = 0.0;
        for attempt in 0..4 {
            let mut kj = k.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    kj[(i, i)] += jitter;
                }
            }
            if let Some(chol) = kj.cholesky() {
                return Ok(chol);
            }
            jitter = mean_diag.abs().max(1e-300) * 1e-10 * 100f64.powi(attempt);
        }
        Err(CoreError::Factorization)
    }

    /// Efficient-form negative log-likelihood (up to its constant):
    /// sum_p y_p^T (Sigma + sigma^2 I)^-1 y_p + p log|Sigma + sigma^2 I|.
    fn loss(&self, params: &NngpParams) -> Result<f64> {
        let chol = self.factor(params)?;
        let p = self.yc.ncols() as f64;
        let solved = chol.solve(&self.yc);
        let quad = self.yc.component_mul(&solved).sum();
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        Ok(quad + p * logdet)
    }
}

/// The efficient-form GP marginal loss on a training set: targets are
/// centered per location, one n x n factorization serves all
/// locations.
pub fn nngp_marginal_loss(params: &NngpParams, train: &PairedDataset) -> Result<f64> {
    params.validate()?;
    let ctx = GpContext::build(train)?;
    ctx.loss(params)
}

/// Deterministic Nelder-Mead over a 3-vector of log parameters.
/// Returns the best point seen; non-finite objective values are
/// treated as worse than anything finite.
fn nelder_mead<F: FnMut(&[f64; 3]) -> f64>(
    mut f: F,
    start: [f64; 3],
    step: f64,
    max_iter: usize,
) -> ([f64; 3], f64) {
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((start, f(&start)));
    for d in 0..3 {
        let mut v = start;
        v[d] += step;
        simplex.push((v, f(&v)));
    }
    let order = |s: &mut Vec<([f64; 3], f64)>| {
        s.sort_by(|a, b| match (a.1.is_nan(), b.1.is_nan()) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => a.1.partial_cmp(&b.1).unwrap(),
        });
    };
    order(&mut simplex);
    for _ in 0..max_iter {
        let best = simplex[0].1;
        let worst = simplex[3].1;
        if (worst - best).abs() <= 1e-8 * (1.0 + best.abs()) {
            break;
        }
        let centroid = {
            let mut c = [0.0; 3];
            for (v, _) in &simplex[..3] {
                for d in 0..3 {
                    c[d] += v[d] / 3.0;
                }
            }
            c
        };
        let reflect = |t: f64| {
            let mut v = [0.0; 3];
            for d in 0..3 {
                v[d] = centroid[d] + t * (centroid[d] - simplex[3].0[d]);
            }
            v
        };
        let xr = reflect(ALPHA);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = reflect(GAMMA);
            let fe = f(&xe);
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            let xc = reflect(-RHO);
            let fc = f(&xc);
            if fc < simplex[3].1 {
                simplex[3] = (xc, fc);
            } else {
                let x0 = simplex[0].0;
                for i in 1..4 {
                    let mut v = [0.0; 3];
                    for d in 0..3 {
                        v[d] = x0[d] + SIGMA * (simplex[i].0[d] - x0[d]);
                    }
                    simplex[i] = (v, f(&v));
                }
            }
        }
        order(&mut simplex);
    }
    (simplex[0].0, simplex[0].1)
}

/// A fitted GP: hyperparameters, stored training inputs, the training
/// target mean, and the presolved weights (Sigma + sigma^2 I)^-1 Yc.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub params: NngpParams,
    pub n1: usize,
    pub q: usize,
    /// Flattened training inputs, n1 x q row-major.
    pub inputs: Vec<f64>,
    /// Per-location training target mean.
    pub train_mean: Field,
    /// (Sigma + sigma^2 I)^-1 Yc, n1 x p row-major.
    pub alpha: Vec<f64>,
}

impl GpModel {
    pub(super) fn fit(train: &PairedDataset, options: &TrainingOptions) -> Result<GpModel> {
        let ctx = GpContext::build(train)?;
        let n1 = train.len();
        let p = train.grid().expect("nonempty").len();

        let params = match &options.nngp_fixed {
            Some(fixed) => {
                fixed.validate()?;
                *fixed
            }
            None => {
                let depth = options.nngp_depth.max(1);
                // Data variance sets the scale of the bias/noise grid;
                // sigma_w2 lives near the depth-stable value 2.
                let sy2 = (ctx.yc.map(|v| v * v).sum() / ctx.yc.len() as f64).max(1e-12);
                let mut evals = 0usize;
                let mut objective = |z: &[f64; 3]| -> f64 {
                    evals += 1;
                    let cand = NngpParams {
                        sigma_w2: z[0].exp(),
                        sigma_b2: z[1].exp(),
                        sigma2: z[2].exp(),
                        depth,
                    };
                    match ctx.loss(&cand) {
                        Ok(v) if v.is_finite() => v,
                        _ => f64::INFINITY,
                    }
                };
                let mut best: Option<([f64; 3], f64)> = None;
                for &lw in &[1.5f64, 2.0, 2.5] {
                    for &lb in &[1e-6 * sy2, 1e-2 * sy2] {
                        for &ls in &[1e-2 * sy2, 0.5 * sy2] {
                            let z = [lw.ln(), lb.ln(), ls.ln()];
                            let v = objective(&z);
                            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                                best = Some((z, v));
                            }
                        }
                    }
                }
                let (z0, f0) = best.expect("grid is nonempty");
                if !f0.is_finite() {
                    return Err(CoreError::Training(
                        "GP marginal loss non-finite over the whole search grid".into(),
                    ));
                }
                let (z, fz) = nelder_mead(&mut objective, z0, 0.7, 60);
                if !fz.is_finite() {
                    return Err(CoreError::Training("GP optimizer left the finite region".into()));
                }
                NngpParams {
                    sigma_w2: z[0].exp(),
                    sigma_b2: z[1].exp(),
                    sigma2: z[2].exp(),
                    depth,
                }
            }
        };

        let chol = ctx.factor(&params)?;
        let solved = chol.solve(&ctx.yc);
        let mut alpha = vec![0.0; n1 * p];
        for t in 0..n1 {
            for s in 0..p {
                alpha[t * p + s] = solved[(t, s)];
            }
        }
        let inputs: Vec<f64> = train
            .pairs()
            .iter()
            .flat_map(|(snap, _)| flatten_snapshot(snap))
            .collect();
        let q = inputs.len() / n1;
        Ok(GpModel {
            params,
            n1,
            q,
            inputs,
            train_mean: target_mean(train)?,
            alpha,
        })
    }

    /// Posterior mean at one snapshot: train mean plus k*^T alpha per
    /// location, with the kernel vector shared across locations.
    pub(super) fn predict(&self, grid: &Grid, snapshot: &EnsembleSnapshot) -> Result<Field> {
        let x = flatten_snapshot(snapshot);
        if x.len() != self.q {
            return Err(CoreError::Argument(format!(
                "flattened snapshot has {} entries, model expects {}",
                x.len(),
                self.q
            )));
        }
        let qf = self.q as f64;
        let self_raw: f64 = x.iter().map(|v| v * v).sum::<f64>() / qf;
        let mut cross: Vec<f64> = (0..self.n1)
            .map(|i| {
                let xi = &self.inputs[i * self.q..(i + 1) * self.q];
                let dot: f64 = x.iter().zip(xi).map(|(a, b)| a * b).sum();
                self.params.sigma_b2 + self.params.sigma_w2 * dot / qf
            })
            .collect();
        let mut v_star = self.params.sigma_b2 + self.params.sigma_w2 * self_raw;
        let mut v_train: Vec<f64> = (0..self.n1)
            .map(|i| {
                let xi = &self.inputs[i * self.q..(i + 1) * self.q];
                let dot: f64 = xi.iter().map(|v| v * v).sum::<f64>() / qf;
                self.params.sigma_b2 + self.params.sigma_w2 * dot
            })
            .collect();
        for _ in 0..self.params.depth {
            for (c, v) in cross.iter_mut().zip(&v_train) {
                *c = arccos_step(*c, v_star, *v, self.params.sigma_w2, self.params.sigma_b2);
            }
            for v in &mut v_train {
                *v = arccos_diag_step(*v, self.params.sigma_w2, self.params.sigma_b2);
            }
            v_star = arccos_diag_step(v_star, self.params.sigma_w2, self.params.sigma_b2);
        }
        let p = grid.len();
        let mut out = self.train_mean.values().to_vec();
        for (t, k) in cross.iter().enumerate() {
            let row = &self.alpha[t * p..(t + 1) * p];
            for (o, a) in out.iter_mut().zip(row) {
                *o += k * a;
            }
        }
        Field::new(grid.clone(), out)
    }
}
