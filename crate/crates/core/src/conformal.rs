//! Split-conformal calibration over residual fields: the residual
//! central region, the conformal ensemble it generates, membership
//! tests, and prediction bands.
//!
//! Calibration residuals are scored with a depth function against their
//! own pool; the threshold tau is the k-th largest score with
//! k = ceil((n2 + 1)(1 - alpha)). A future target is covered when its
//! residual scores at least tau, and the conformal ensemble translates
//! the kept residuals by the model's prediction.

use crate::analysis::TrainedAnalysis;
use crate::depth::{central_threshold, depth_score, depth_scores_self, DepthKind, DepthScores, ResidualPool};
use crate::error::{CoreError, Result};
use crate::field::{EnsembleSnapshot, Field, PairedDataset};

/// Pointwise envelope of a member set plus its grid-mean width.
#[derive(Debug, Clone)]
pub struct Band {
    pub lower: Field,
    pub upper: Field,
    pub mean_width: f64,
}

/// Pointwise min/max band over a nonempty member list.
pub fn prediction_band(members: &[Field]) -> Result<Band> {
    let first = members
        .first()
        .ok_or_else(|| CoreError::Argument("prediction band of an empty ensemble".into()))?;
    let grid = first.grid().clone();
    let mut lower = first.values().to_vec();
    let mut upper = first.values().to_vec();
    for member in &members[1..] {
        grid.check_compatible(member.grid())?;
        for ((lo, hi), v) in lower.iter_mut().zip(upper.iter_mut()).zip(member.values()) {
            if *v < *lo {
                *lo = *v;
            }
            if *v > *hi {
                *hi = *v;
            }
        }
    }
    let mean_width = lower
        .iter()
        .zip(&upper)
        .map(|(lo, hi)| hi - lo)
        .sum::<f64>()
        / lower.len() as f64;
    Ok(Band {
        lower: Field::new(grid.clone(), lower)?,
        upper: Field::new(grid, upper)?,
        mean_width,
    })
}

/// A frozen conformal calibration: the residual pool, its depth scores,
/// and the central-region threshold, together with the model that
/// produced the residuals.
#[derive(Debug, Clone)]
pub struct ConformalCalibration {
    model: TrainedAnalysis,
    depth_kind: DepthKind,
    alpha: f64,
    pool: ResidualPool,
    scores: DepthScores,
    tau: f64,
    k: usize,
    kept: Vec<usize>,
}

/// Computes calibration residuals in chronological order, scores them
/// against their own pool, and fixes the central-region threshold.
pub fn calibrate(
    model: TrainedAnalysis,
    cal: &PairedDataset,
    depth_kind: DepthKind,
    alpha: f64,
) -> Result<ConformalCalibration> {
    if cal.is_empty() {
        return Err(CoreError::Argument("calibration set is empty".into()));
    }
    let mut residuals = Vec::with_capacity(cal.len());
    for (snap, target) in cal.pairs() {
        let pred = model.predict(snap)?;
        residuals.push(target.sub(&pred)?);
    }
    let pool = ResidualPool::new(residuals)?;
    let scores = depth_scores_self(depth_kind, &pool);
    let th = central_threshold(&scores, alpha)?;
    Ok(ConformalCalibration {
        model,
        depth_kind,
        alpha,
        pool,
        scores,
        tau: th.tau,
        k: th.k,
        kept: th.kept,
    })
}

impl ConformalCalibration {
    /// Reassembles a calibration from stored parts, revalidating the
    /// threshold against the scores.
    pub fn from_parts(
        model: TrainedAnalysis,
        depth_kind: DepthKind,
        alpha: f64,
        pool: ResidualPool,
    ) -> Result<Self> {
        let scores = depth_scores_self(depth_kind, &pool);
        let th = central_threshold(&scores, alpha)?;
        Ok(Self {
            model,
            depth_kind,
            alpha,
            pool,
            scores,
            tau: th.tau,
            k: th.k,
            kept: th.kept,
        })
    }

    pub fn model(&self) -> &TrainedAnalysis {
        &self.model
    }

    pub fn depth_kind(&self) -> DepthKind {
        self.depth_kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn pool(&self) -> &ResidualPool {
        &self.pool
    }

    pub fn scores(&self) -> &DepthScores {
        &self.scores
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Kept residual indices, ordered by descending depth score.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    /// The kept residuals in descending-depth order.
    pub fn kept_residuals(&self) -> Vec<Field> {
        self.kept
            .iter()
            .map(|&i| self.pool.fields()[i].clone())
            .collect()
    }

    /// Pointwise envelope of the kept residuals. Because every ensemble
    /// member is the prediction plus a kept residual, the band of the
    /// conformal ensemble is this envelope translated by the
    /// prediction, and its mean width does not depend on the snapshot.
    pub fn residual_envelope(&self) -> Result<Band> {
        prediction_band(&self.kept_residuals())
    }

    /// The conformal ensemble at one snapshot: the prediction plus each
    /// kept residual, most central first.
    pub fn conformal_ensemble(&self, snapshot: &EnsembleSnapshot) -> Result<Vec<Field>> {
        let pred = self.model.predict(snapshot)?;
        self.kept
            .iter()
            .map(|&i| pred.add(&self.pool.fields()[i]))
            .collect()
    }

    /// Membership test for the prediction central region: true iff the
    /// residual of `y` scores at least tau against the calibration
    /// pool.
    pub fn covers(&self, snapshot: &EnsembleSnapshot, y: &Field) -> Result<bool> {
        let pred = self.model.predict(snapshot)?;
        let residual = y.sub(&pred)?;
        Ok(depth_score(self.depth_kind, &residual, &self.pool)? >= self.tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{train_analysis, AnalysisKind, TrainingOptions};
    use crate::field::{Grid, TimeIndex};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn grid() -> Grid {
        Grid::new(2, 3).unwrap()
    }

    fn random_field(g: &Grid, rng: &mut ChaCha8Rng) -> Field {
        let v: Vec<f64> = (0..g.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Field::new(g.clone(), v).unwrap()
    }

    fn random_dataset(g: &Grid, m: usize, n: usize, rng: &mut ChaCha8Rng) -> PairedDataset {
        let pairs = TimeIndex::new(1, 1)
            .unwrap()
            .sequence(n)
            .into_iter()
            .map(|t| {
                let members: Vec<Field> = (0..m).map(|_| random_field(g, rng)).collect();
                let target = random_field(g, rng);
                (EnsembleSnapshot::new(t, members).unwrap(), target)
            })
            .collect();
        PairedDataset::new(pairs).unwrap()
    }

    fn snapshot(g: &Grid, m: usize, rng: &mut ChaCha8Rng, t: TimeIndex) -> EnsembleSnapshot {
        EnsembleSnapshot::new(t, (0..m).map(|_| random_field(g, rng)).collect()).unwrap()
    }

    #[test]
    fn band_trivial_cases() {
        let g = grid();
        let member = Field::constant(g.clone(), 1.5).unwrap();
        let band = prediction_band(std::slice::from_ref(&member)).unwrap();
        assert_eq!(band.lower.values(), member.values());
        assert_eq!(band.upper.values(), member.values());
        assert_eq!(band.mean_width, 0.0);

        let band = prediction_band(&[
            Field::zeros(g.clone()),
            Field::constant(g.clone(), 2.0).unwrap(),
        ])
        .unwrap();
        assert!(band.lower.values().iter().all(|&v| v == 0.0));
        assert!(band.upper.values().iter().all(|&v| v == 2.0));
        assert_eq!(band.mean_width, 2.0);

        assert!(prediction_band(&[]).is_err());
    }

    #[test]
    fn perfect_model_keeps_every_residual() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // Target equals the first member exactly -> WA residuals are ~0.
        let pairs = TimeIndex::new(1, 1)
            .unwrap()
            .sequence(12)
            .into_iter()
            .map(|t| {
                let lead = random_field(&g, &mut rng);
                let other = random_field(&g, &mut rng);
                let y = lead.clone();
                (EnsembleSnapshot::new(t, vec![lead, other]).unwrap(), y)
            })
            .collect();
        let cal = PairedDataset::new(pairs).unwrap();
        let model = train_analysis(AnalysisKind::WeightedAverage, &cal, &TrainingOptions::default())
            .unwrap();
        let calib = calibrate(model, &cal, DepthKind::InvLinfNorm, 0.1).unwrap();
        for s in calib.scores().values() {
            assert!(*s > 1.0 - 1e-9, "zero residuals score ~1, got {s}");
        }
        assert!(calib.tau() > 1.0 - 1e-9);
        assert_eq!(calib.kept().len(), cal.len());
    }

    #[test]
    fn calibration_pool_matches_recomputed_residuals() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let cal = random_dataset(&g, 3, 10, &mut rng);
        let model = TrainedAnalysis::ensemble_average(g.clone(), 3);
        let calib = calibrate(model.clone(), &cal, DepthKind::LinfDepth, 0.2).unwrap();
        for ((snap, y), pooled) in cal.pairs().iter().zip(calib.pool().fields()) {
            let expect = y.sub(&model.predict(snap).unwrap()).unwrap();
            assert_eq!(expect.values(), pooled.values());
        }
    }

    #[test]
    fn ensemble_members_reproduce_kept_residuals() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cal = random_dataset(&g, 3, 15, &mut rng);
        let model = TrainedAnalysis::ensemble_average(g.clone(), 3);
        let calib = calibrate(model.clone(), &cal, DepthKind::LinfDepth, 0.2).unwrap();
        let snap = snapshot(&g, 3, &mut rng, TimeIndex::new(50, 1).unwrap());
        let pred = model.predict(&snap).unwrap();
        let ensemble = calib.conformal_ensemble(&snap).unwrap();
        assert_eq!(ensemble.len(), calib.kept().len());
        for (member, &idx) in ensemble.iter().zip(calib.kept()) {
            let back = member.sub(&pred).unwrap();
            for (a, b) in back.values().iter().zip(calib.pool().fields()[idx].values()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
        // Members are ordered by descending depth.
        let vals = calib.scores().values();
        for w in calib.kept().windows(2) {
            assert!(vals[w[0]] >= vals[w[1]]);
        }
    }

    #[test]
    fn two_snapshots_differ_by_a_constant_field() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let cal = random_dataset(&g, 2, 10, &mut rng);
        let model = TrainedAnalysis::ensemble_average(g.clone(), 2);
        let calib = calibrate(model.clone(), &cal, DepthKind::IntegratedTukey, 0.2).unwrap();
        let a = snapshot(&g, 2, &mut rng, TimeIndex::new(60, 1).unwrap());
        let b = snapshot(&g, 2, &mut rng, TimeIndex::new(60, 2).unwrap());
        let diff = model
            .predict(&a)
            .unwrap()
            .sub(&model.predict(&b).unwrap())
            .unwrap();
        let ea = calib.conformal_ensemble(&a).unwrap();
        let eb = calib.conformal_ensemble(&b).unwrap();
        for (ma, mb) in ea.iter().zip(&eb) {
            let d = ma.sub(mb).unwrap();
            for (x, y) in d.values().iter().zip(diff.values()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rank_arithmetic_at_paper_sizes() {
        let g = Grid::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let cal = random_dataset(&g, 2, 200, &mut rng);
        let model = TrainedAnalysis::ensemble_average(g, 2);
        let calib = calibrate(model, &cal, DepthKind::LinfDepth, 0.1).unwrap();
        assert_eq!(calib.k(), 181);
        assert_eq!(calib.kept().len(), 181, "continuous scores should not tie");
    }

    #[test]
    fn covers_members_and_rejects_outliers() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let cal = random_dataset(&g, 3, 30, &mut rng);
        let model = TrainedAnalysis::ensemble_average(g.clone(), 3);
        for kind in [DepthKind::LinfDepth, DepthKind::InvLinfNorm] {
            let calib = calibrate(model.clone(), &cal, kind, 0.2).unwrap();
            let snap = snapshot(&g, 3, &mut rng, TimeIndex::new(70, 1).unwrap());
            for member in calib.conformal_ensemble(&snap).unwrap() {
                assert!(calib.covers(&snap, &member).unwrap());
            }
            let mut far = model.predict(&snap).unwrap().values().to_vec();
            far[0] += 1e6;
            let far = Field::new(g.clone(), far).unwrap();
            assert!(!calib.covers(&snap, &far).unwrap());
        }
    }

    #[test]
    fn alpha_monotonicity_of_kept_set_and_width() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let cal = random_dataset(&g, 2, 40, &mut rng);
        let model = TrainedAnalysis::ensemble_average(g, 2);
        let c1 = calibrate(model.clone(), &cal, DepthKind::LinfDepth, 0.1).unwrap();
        let c2 = calibrate(model, &cal, DepthKind::LinfDepth, 0.3).unwrap();
        let k1: std::collections::HashSet<_> = c1.kept().iter().collect();
        assert!(c2.kept().iter().all(|i| k1.contains(i)));
        let w1 = c1.residual_envelope().unwrap().mean_width;
        let w2 = c2.residual_envelope().unwrap().mean_width;
        assert!(w2 <= w1);
    }

    #[test]
    fn envelope_equals_materialized_band() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let cal = random_dataset(&g, 2, 25, &mut rng);
        let model = TrainedAnalysis::ensemble_average(g.clone(), 2);
        let calib = calibrate(model, &cal, DepthKind::LinfDepth, 0.2).unwrap();
        let snap = snapshot(&g, 2, &mut rng, TimeIndex::new(80, 1).unwrap());
        let band = prediction_band(&calib.conformal_ensemble(&snap).unwrap()).unwrap();
        let envelope = calib.residual_envelope().unwrap();
        assert_abs_diff_eq!(band.mean_width, envelope.mean_width, epsilon = 1e-12);
    }

    #[test]
    fn ea_coverage_decisions_are_translation_consistent() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let cal = random_dataset(&g, 2, 20, &mut rng);
        let shift = Field::constant(g.clone(), 5.0).unwrap();
        let cal_shifted = PairedDataset::new(
            cal.pairs()
                .iter()
                .map(|(s, y)| (s.clone(), y.add(&shift).unwrap()))
                .collect(),
        )
        .unwrap();
        let model = TrainedAnalysis::ensemble_average(g.clone(), 2);
        let a = calibrate(model.clone(), &cal, DepthKind::LinfDepth, 0.2).unwrap();
        let b = calibrate(model, &cal_shifted, DepthKind::LinfDepth, 0.2).unwrap();
        for trial in 0..10 {
            let snap = snapshot(&g, 2, &mut rng, TimeIndex::new(90, 1 + trial).unwrap());
            let y = random_field(&g, &mut rng).scale(2.0);
            let covered = a.covers(&snap, &y).unwrap();
            let covered_shifted = b.covers(&snap, &y.add(&shift).unwrap()).unwrap();
            assert_eq!(covered, covered_shifted);
        }
    }

    #[test]
    fn infeasible_alpha_propagates() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let cal = random_dataset(&g, 2, 3, &mut rng);
        let model = TrainedAnalysis::ensemble_average(g, 2);
        assert!(matches!(
            calibrate(model, &cal, DepthKind::LinfDepth, 0.01),
            Err(CoreError::InfeasibleLevel { .. })
        ));
    }
}
