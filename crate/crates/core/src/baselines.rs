//! Comparison UQ baselines: raw inter-model variability re-centered on
//! an analysis prediction, and its quantile-mapping bias-corrected
//! variant.

use crate::error::{CoreError, Result};
use crate::field::{EnsembleSnapshot, Field, Grid};
use crate::metrics::empirical_quantile;
use rayon::prelude::*;

/// Re-centers the raw ensemble spread on `center`: each member keeps
/// its deviation from the ensemble mean.
pub fn imv_ensemble(snapshot: &EnsembleSnapshot, center: &Field) -> Result<Vec<Field>> {
    snapshot.grid().check_compatible(center.grid())?;
    let mean = snapshot.mean_field();
    snapshot
        .members()
        .iter()
        .map(|member| member.sub(&mean)?.add(center))
        .collect()
}

/// Per-member, per-location empirical quantile maps: model-value
/// breakpoints paired with observed-value breakpoints at the same
/// equally spaced levels (endpoints included, so n_q = 2 anchors at the
/// min and max).
#[derive(Debug, Clone)]
pub struct QuantileMapSet {
    members: usize,
    grid: Grid,
    n_q: usize,
    /// Breakpoints, `(member * p + cell) * n_q + level`.
    model_bp: Vec<f64>,
    obs_bp: Vec<f64>,
}

impl QuantileMapSet {
    pub fn members(&self) -> usize {
        self.members
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn model_breakpoints(&self, member: usize, cell: usize) -> &[f64] {
        let base = (member * self.grid.len() + cell) * self.n_q;
        &self.model_bp[base..base + self.n_q]
    }

    pub fn obs_breakpoints(&self, member: usize, cell: usize) -> &[f64] {
        let base = (member * self.grid.len() + cell) * self.n_q;
        &self.obs_bp[base..base + self.n_q]
    }

    pub fn from_parts(
        members: usize,
        grid: Grid,
        n_q: usize,
        model_bp: Vec<f64>,
        obs_bp: Vec<f64>,
    ) -> Result<Self> {
        let expect = members * grid.len() * n_q;
        if n_q < 2 || model_bp.len() != expect || obs_bp.len() != expect {
            return Err(CoreError::Argument(
                "quantile map payload does not match its dimensions".into(),
            ));
        }
        Ok(Self {
            members,
            grid,
            n_q,
            model_bp,
            obs_bp,
        })
    }

    /// Maps a raw member value through one (member, cell) map:
    /// piecewise-linear inside the breakpoints, constant offset beyond
    /// either end.
    pub fn map_value(&self, member: usize, cell: usize, v: f64) -> f64 {
        let mbp = self.model_breakpoints(member, cell);
        let obp = self.obs_breakpoints(member, cell);
        let idx = mbp.partition_point(|b| *b <= v);
        if idx == 0 {
            return v + (obp[0] - mbp[0]);
        }
        if idx == mbp.len() {
            return v + (obp[mbp.len() - 1] - mbp[mbp.len() - 1]);
        }
        // mbp[idx] > v >= mbp[idx - 1] implies a strictly positive span.
        let j = idx - 1;
        let t = (v - mbp[j]) / (mbp[idx] - mbp[j]);
        obp[j] + t * (obp[idx] - obp[j])
    }
}

/// Fits quantile maps from per-member histories against an observation
/// history on the same grid and time span. Breakpoints are empirical
/// quantiles at n_q equally spaced levels in [0, 1].
pub fn fit_quantile_maps(
    member_history: &[Vec<Field>],
    obs_history: &[Field],
    n_q: usize,
) -> Result<QuantileMapSet> {
    if member_history.is_empty() || obs_history.is_empty() {
        return Err(CoreError::Argument("empty history".into()));
    }
    if n_q < 2 {
        return Err(CoreError::Argument("n_q must be >= 2".into()));
    }
    let grid = obs_history[0].grid().clone();
    for f in obs_history {
        grid.check_compatible(f.grid())?;
    }
    for series in member_history {
        if series.len() != obs_history.len() {
            return Err(CoreError::Argument(format!(
                "member history length {} does not match observation history length {}",
                series.len(),
                obs_history.len()
            )));
        }
        for f in series {
            grid.check_compatible(f.grid())?;
        }
    }
    let m = member_history.len();
    let p = grid.len();
    let levels: Vec<f64> = (0..n_q)
        .map(|j| j as f64 / (n_q - 1) as f64)
        .collect();

    let obs_sorted: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|s| {
            let mut col: Vec<f64> = obs_history.iter().map(|f| f.values()[s]).collect();
            col.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
            col
        })
        .collect();

    let mut model_bp = vec![0.0; m * p * n_q];
    let mut obs_bp = vec![0.0; m * p * n_q];
    for (i, series) in member_history.iter().enumerate() {
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..p)
            .into_par_iter()
            .map(|s| {
                let mut col: Vec<f64> = series.iter().map(|f| f.values()[s]).collect();
                col.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
                let mb: Vec<f64> = levels.iter().map(|&q| empirical_quantile(&col, q)).collect();
                let ob: Vec<f64> = levels
                    .iter()
                    .map(|&q| empirical_quantile(&obs_sorted[s], q))
                    .collect();
                (mb, ob)
            })
            .collect();
        for (s, (mb, ob)) in rows.into_iter().enumerate() {
            let base = (i * p + s) * n_q;
            model_bp[base..base + n_q].copy_from_slice(&mb);
            obs_bp[base..base + n_q].copy_from_slice(&ob);
        }
    }
    Ok(QuantileMapSet {
        members: m,
        grid,
        n_q,
        model_bp,
        obs_bp,
    })
}

/// Quantile-maps every member of the snapshot, then re-centers the
/// mapped ensemble on `center` as in [`imv_ensemble`].
pub fn imv_bc_ensemble(
    snapshot: &EnsembleSnapshot,
    maps: &QuantileMapSet,
    center: &Field,
) -> Result<Vec<Field>> {
    maps.grid().check_compatible(snapshot.grid())?;
    maps.grid().check_compatible(center.grid())?;
    if snapshot.member_count() != maps.members() {
        return Err(CoreError::MemberMismatch {
            expected: maps.members(),
            got: snapshot.member_count(),
        });
    }
    let p = maps.grid().len();
    let mapped: Vec<Field> = snapshot
        .members()
        .iter()
        .enumerate()
        .map(|(i, member)| {
            let vals: Vec<f64> = (0..p)
                .map(|s| maps.map_value(i, s, member.values()[s]))
                .collect();
            Field::new(maps.grid().clone(), vals)
        })
        .collect::<Result<_>>()?;
    let mapped_snapshot = EnsembleSnapshot::new(snapshot.time(), mapped)?;
    imv_ensemble(&mapped_snapshot, center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TimeIndex;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn grid() -> Grid {
        Grid::new(1, 3).unwrap()
    }

    fn random_field(g: &Grid, rng: &mut ChaCha8Rng) -> Field {
        let v: Vec<f64> = (0..g.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Field::new(g.clone(), v).unwrap()
    }

    fn snapshot(g: &Grid, m: usize, rng: &mut ChaCha8Rng) -> EnsembleSnapshot {
        EnsembleSnapshot::new(
            TimeIndex::new(1, 1).unwrap(),
            (0..m).map(|_| random_field(g, rng)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn imv_with_ensemble_mean_center_is_identity() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let snap = snapshot(&g, 4, &mut rng);
        let members = imv_ensemble(&snap, &snap.mean_field()).unwrap();
        for (a, b) in members.iter().zip(snap.members()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn imv_recenters_and_preserves_spread() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let snap = snapshot(&g, 5, &mut rng);
        let center = random_field(&g, &mut rng);
        let members = imv_ensemble(&snap, &center).unwrap();
        let mean = crate::field::pointwise_mean(&members).unwrap();
        for (a, b) in mean.values().iter().zip(center.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        // Pairwise deviations unchanged.
        for i in 0..5 {
            for j in (i + 1)..5 {
                let before = snap.members()[i].sub(&snap.members()[j]).unwrap();
                let after = members[i].sub(&members[j]).unwrap();
                for (x, y) in before.values().iter().zip(after.values()) {
                    assert_abs_diff_eq!(x, y, epsilon = 1e-12);
                }
            }
        }
    }

    fn history(g: &Grid, len: usize, rng: &mut ChaCha8Rng) -> Vec<Field> {
        (0..len).map(|_| random_field(g, rng)).collect()
    }

    #[test]
    fn identity_history_gives_identity_map() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let obs = history(&g, 20, &mut rng);
        let maps = fit_quantile_maps(&[obs.clone()], &obs, 10).unwrap();
        for s in 0..g.len() {
            assert_eq!(
                maps.model_breakpoints(0, s),
                maps.obs_breakpoints(0, s),
                "identical histories must give identical breakpoints"
            );
            for v in [-1.5, -0.2, 0.0, 0.7, 2.5] {
                assert_abs_diff_eq!(maps.map_value(0, s, v), v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn offset_history_subtracts_the_offset() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let obs = history(&g, 40, &mut rng);
        let b = 3.0;
        let shifted: Vec<Field> = obs
            .iter()
            .map(|f| f.add(&Field::constant(g.clone(), b).unwrap()).unwrap())
            .collect();
        let maps = fit_quantile_maps(&[shifted], &obs, 12).unwrap();
        // Values inside the training range map down by b.
        for s in 0..g.len() {
            for v in [-0.5 + b, b, 0.5 + b] {
                assert_abs_diff_eq!(maps.map_value(0, s, v), v - b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn two_level_map_is_min_max_anchored() {
        let g = Grid::new(1, 1).unwrap();
        let obs: Vec<Field> = [0.0, 10.0, 5.0]
            .iter()
            .map(|v| Field::constant(g.clone(), *v).unwrap())
            .collect();
        let model: Vec<Field> = [2.0, 4.0, 3.0]
            .iter()
            .map(|v| Field::constant(g.clone(), *v).unwrap())
            .collect();
        let maps = fit_quantile_maps(&[model], &obs, 2).unwrap();
        assert_eq!(maps.model_breakpoints(0, 0), &[2.0, 4.0]);
        assert_eq!(maps.obs_breakpoints(0, 0), &[0.0, 10.0]);
        // Linear rescaling between the anchors: 3 -> 5.
        assert_abs_diff_eq!(maps.map_value(0, 0, 3.0), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn above_range_uses_constant_tail_offset() {
        let g = Grid::new(1, 1).unwrap();
        let obs: Vec<Field> = [0.0, 1.0, 2.0]
            .iter()
            .map(|v| Field::constant(g.clone(), *v).unwrap())
            .collect();
        let model: Vec<Field> = [10.0, 11.0, 14.0]
            .iter()
            .map(|v| Field::constant(g.clone(), *v).unwrap())
            .collect();
        let maps = fit_quantile_maps(&[model], &obs, 3).unwrap();
        // model end 14 maps to obs end 2: offset -12, never slope.
        assert_abs_diff_eq!(maps.map_value(0, 0, 20.0), 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(maps.map_value(0, 0, 14.0), 2.0, epsilon = 1e-12);
        // below-range tail: model start 10 -> obs start 0.
        assert_abs_diff_eq!(maps.map_value(0, 0, 7.0), -3.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_maps_reproduce_imv() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let obs = history(&g, 30, &mut rng);
        let histories: Vec<Vec<Field>> = (0..3).map(|_| obs.clone()).collect();
        let maps = fit_quantile_maps(&histories, &obs, 8).unwrap();
        let snap = snapshot(&g, 3, &mut rng);
        let center = random_field(&g, &mut rng);
        let plain = imv_ensemble(&snap, &center).unwrap();
        let bc = imv_bc_ensemble(&snap, &maps, &center).unwrap();
        for (a, b) in plain.iter().zip(&bc) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn offset_histories_shift_members_before_recentring() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let obs = history(&g, 50, &mut rng);
        let b = 2.0;
        let shifted: Vec<Field> = obs
            .iter()
            .map(|f| f.add(&Field::constant(g.clone(), b).unwrap()).unwrap())
            .collect();
        let maps = fit_quantile_maps(&[shifted.clone(), shifted], &obs, 20).unwrap();
        // Snapshot drawn from the shifted distribution's core range.
        let snap = EnsembleSnapshot::new(
            TimeIndex::new(2, 1).unwrap(),
            vec![
                Field::constant(g.clone(), b + 0.1).unwrap(),
                Field::constant(g.clone(), b - 0.1).unwrap(),
            ],
        )
        .unwrap();
        let center = Field::zeros(g.clone());
        let bc = imv_bc_ensemble(&snap, &maps, &center).unwrap();
        // After the -b shift both members keep their +-0.1 deviations
        // around the new center.
        for (member, expect) in bc.iter().zip([0.1, -0.1]) {
            for v in member.values() {
                assert_abs_diff_eq!(*v, expect, epsilon = 1e-6);
            }
        }
    }

    fn aligned_histories() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (5usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-100.0f64..100.0, n),
                proptest::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn quantile_mapping_is_monotone(
            (model_hist, obs_hist) in aligned_histories(),
            v1 in -200.0f64..200.0,
            dv in 0.0f64..50.0,
        ) {
            let g = Grid::new(1, 1).unwrap();
            let mh: Vec<Field> = model_hist.iter()
                .map(|v| Field::constant(g.clone(), *v).unwrap()).collect();
            let oh: Vec<Field> = obs_hist.iter()
                .map(|v| Field::constant(g.clone(), *v).unwrap()).collect();
            let maps = fit_quantile_maps(&[mh], &oh, 7).unwrap();
            let a = maps.map_value(0, 0, v1);
            let b = maps.map_value(0, 0, v1 + dv);
            prop_assert!(b >= a - 1e-12, "map must be non-decreasing: {a} then {b}");
        }
    }
}
