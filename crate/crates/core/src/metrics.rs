//! Distributional evaluation: 1D and sliced Wasserstein distances,
//! coverage/width aggregation, pointwise distance maps, quantile-change
//! maps, and smoothed global-mean series.
//!
//! One quantile rule is used everywhere: order statistics sit at
//! positions (i - 1/2)/N and values are linearly interpolated between
//! them (clamped at the extremes). Evaluating that quantile function at
//! the midpoints (j - 1/2)/N reproduces the order statistics exactly,
//! which keeps the unequal-size Wasserstein distance consistent with
//! the sorted equal-size formula.

use crate::conformal::prediction_band;
use crate::error::{CoreError, Result};
use crate::field::{Field, Grid, TimeIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Midpoint-interpolated empirical quantile of a sorted sample.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let t = q * n as f64 - 0.5;
    if t <= 0.0 {
        return sorted[0];
    }
    if t >= (n - 1) as f64 {
        return sorted[n - 1];
    }
    let i = t.floor() as usize;
    let frac = t - i as f64;
    sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
}

fn sort_unstable_f64(v: &mut [f64]) {
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
}

/// Squared 1D Wasserstein-2 distance between two sorted samples.
fn w2_squared_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        let n = a.len() as f64;
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let d = x - y;
                d * d
            })
            .sum::<f64>()
            / n
    } else {
        let k = a.len().max(b.len());
        let mut acc = 0.0;
        for j in 1..=k {
            let q = (j as f64 - 0.5) / k as f64;
            let d = empirical_quantile(a, q) - empirical_quantile(b, q);
            acc += d * d;
        }
        acc / k as f64
    }
}

/// 1D Wasserstein-2 distance between two nonempty samples: the
/// root-mean-square difference of their quantile functions.
pub fn wasserstein1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CoreError::Argument(
            "wasserstein1d requires nonempty samples".into(),
        ));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sort_unstable_f64(&mut sa);
    sort_unstable_f64(&mut sb);
    Ok(w2_squared_sorted(&sa, &sb).sqrt())
}

/// A nonempty set of fields on one grid, treated as a sample of a
/// field-valued distribution.
#[derive(Debug, Clone)]
pub struct ProjectionCloud {
    fields: Vec<Field>,
}

impl ProjectionCloud {
    pub fn new(fields: Vec<Field>) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| CoreError::Argument("projection cloud must be nonempty".into()))?;
        let grid = first.grid().clone();
        for f in &fields {
            grid.check_compatible(f.grid())?;
        }
        Ok(Self { fields })
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    fn values_at(&self, cell: usize) -> Vec<f64> {
        self.fields.iter().map(|f| f.values()[cell]).collect()
    }
}

/// The multiset {center_t + offset_i} without materializing the product.
///
/// Conformal ensembles have exactly this translation structure: every
/// member at time t is the prediction at t plus a kept calibration
/// residual, so a cloud of nc * no fields is described by nc + no.
#[derive(Debug, Clone, Copy)]
pub struct TranslatedCloud<'a> {
    pub centers: &'a [Field],
    pub offsets: &'a [Field],
}

impl<'a> TranslatedCloud<'a> {
    pub fn new(centers: &'a [Field], offsets: &'a [Field]) -> Result<Self> {
        if centers.is_empty() || offsets.is_empty() {
            return Err(CoreError::Argument(
                "translated cloud requires nonempty centers and offsets".into(),
            ));
        }
        let grid = centers[0].grid();
        for f in centers.iter().chain(offsets.iter()) {
            grid.check_compatible(f.grid())?;
        }
        Ok(Self { centers, offsets })
    }

    pub fn len(&self) -> usize {
        self.centers.len() * self.offsets.len()
    }

    pub fn grid(&self) -> &Grid {
        self.centers[0].grid()
    }

    fn values_at(&self, cell: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for c in self.centers {
            let cv = c.values()[cell];
            for o in self.offsets {
                out.push(cv + o.values()[cell]);
            }
        }
        out
    }
}

/// Unit directions drawn from a deterministic stream keyed by `seed`.
fn unit_directions(dim: usize, n_proj: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Vec::with_capacity(n_proj);
    while dirs.len() < n_proj {
        let mut d: Vec<f64> = (0..dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        for v in &mut d {
            *v /= norm;
        }
        dirs.push(d);
    }
    dirs
}

fn project(field: &Field, dir: &[f64]) -> f64 {
    field
        .values()
        .iter()
        .zip(dir)
        .map(|(v, d)| v * d)
        .sum::<f64>()
}

fn sw_from_projected(per_direction: Vec<f64>) -> f64 {
    let mean = per_direction.iter().sum::<f64>() / per_direction.len() as f64;
    mean.sqrt()
}

/// Sliced Wasserstein distance between two field clouds: the root mean
/// of squared 1D distances over `n_proj` random unit directions.
/// Deterministic given (n_proj, seed) and symmetric in its arguments.
pub fn sliced_wasserstein(
    p: &ProjectionCloud,
    q: &ProjectionCloud,
    n_proj: usize,
    seed: u64,
) -> Result<f64> {
    p.grid().check_compatible(q.grid())?;
    if n_proj == 0 {
        return Err(CoreError::Argument("n_proj must be >= 1".into()));
    }
    let dirs = unit_directions(p.grid().len(), n_proj, seed);
    let terms: Vec<f64> = dirs
        .par_iter()
        .map(|dir| {
            let mut pa: Vec<f64> = p.fields().iter().map(|f| project(f, dir)).collect();
            let mut pb: Vec<f64> = q.fields().iter().map(|f| project(f, dir)).collect();
            sort_unstable_f64(&mut pa);
            sort_unstable_f64(&mut pb);
            w2_squared_sorted(&pa, &pb)
        })
        .collect();
    Ok(sw_from_projected(terms))
}

/// Sliced Wasserstein distance of a translation-structured cloud against
/// a plain cloud. Identical direction stream as [`sliced_wasserstein`];
/// each member projection is formed as center + offset, which agrees
/// with projecting the materialized sum up to rounding.
pub fn sliced_wasserstein_translated(
    p: &TranslatedCloud<'_>,
    q: &ProjectionCloud,
    n_proj: usize,
    seed: u64,
) -> Result<f64> {
    p.grid().check_compatible(q.grid())?;
    if n_proj == 0 {
        return Err(CoreError::Argument("n_proj must be >= 1".into()));
    }
    let dirs = unit_directions(p.grid().len(), n_proj, seed);
    let terms: Vec<f64> = dirs
        .par_iter()
        .map(|dir| {
            let ca: Vec<f64> = p.centers.iter().map(|f| project(f, dir)).collect();
            let oa: Vec<f64> = p.offsets.iter().map(|f| project(f, dir)).collect();
            let mut pa = Vec::with_capacity(ca.len() * oa.len());
            for c in &ca {
                for o in &oa {
                    pa.push(c + o);
                }
            }
            let mut pb: Vec<f64> = q.fields().iter().map(|f| project(f, dir)).collect();
            sort_unstable_f64(&mut pa);
            sort_unstable_f64(&mut pb);
            w2_squared_sorted(&pa, &pb)
        })
        .collect();
    Ok(sw_from_projected(terms))
}

/// One evaluation row: the cell of a coverage/width/distance table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub label: String,
    /// Fraction of evaluation times whose target was covered; absent
    /// when no coverage flags were supplied.
    pub coverage: Option<f64>,
    /// Mean prediction-band width over evaluation times.
    pub mean_width: Option<f64>,
    /// Sliced Wasserstein distance between the pooled projection cloud
    /// and the target cloud.
    pub sw_distance: Option<f64>,
    pub n_eval: usize,
}

/// Aggregates a time-aligned projection into one row: mean band width,
/// coverage (when flags are given), and the sliced Wasserstein distance
/// between the pooled member cloud and the target cloud.
pub fn evaluate_projection(
    label: &str,
    ensembles_per_time: &[Vec<Field>],
    targets: &[Field],
    coverage_flags: Option<&[bool]>,
    n_proj: usize,
    seed: u64,
) -> Result<MetricsRow> {
    if ensembles_per_time.len() != targets.len() {
        return Err(CoreError::Argument(format!(
            "{} ensembles vs {} targets",
            ensembles_per_time.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(CoreError::Argument("nothing to evaluate".into()));
    }
    if let Some(flags) = coverage_flags {
        if flags.len() != targets.len() {
            return Err(CoreError::Argument(format!(
                "{} coverage flags vs {} targets",
                flags.len(),
                targets.len()
            )));
        }
    }
    let mut width_acc = 0.0;
    for members in ensembles_per_time {
        width_acc += prediction_band(members)?.mean_width;
    }
    let mean_width = width_acc / ensembles_per_time.len() as f64;

    let pooled: Vec<Field> = ensembles_per_time
        .iter()
        .flat_map(|m| m.iter().cloned())
        .collect();
    let sw = sliced_wasserstein(
        &ProjectionCloud::new(pooled)?,
        &ProjectionCloud::new(targets.to_vec())?,
        n_proj,
        seed,
    )?;

    let coverage = coverage_flags.map(|flags| {
        flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64
    });

    Ok(MetricsRow {
        label: label.to_string(),
        coverage,
        mean_width: Some(mean_width),
        sw_distance: Some(sw),
        n_eval: targets.len(),
    })
}

/// Per-cell 1D Wasserstein distance between two clouds.
pub fn pointwise_wasserstein_map(p: &ProjectionCloud, q: &ProjectionCloud) -> Result<Field> {
    p.grid().check_compatible(q.grid())?;
    let cells = p.grid().len();
    let values: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|s| {
            let mut a = p.values_at(s);
            let mut b = q.values_at(s);
            sort_unstable_f64(&mut a);
            sort_unstable_f64(&mut b);
            w2_squared_sorted(&a, &b).sqrt()
        })
        .collect();
    Field::new(p.grid().clone(), values)
}

/// Per-cell 1D Wasserstein distance of a translation-structured cloud
/// against a plain cloud.
pub fn pointwise_wasserstein_map_translated(
    p: &TranslatedCloud<'_>,
    q: &ProjectionCloud,
) -> Result<Field> {
    p.grid().check_compatible(q.grid())?;
    let cells = p.grid().len();
    let values: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|s| {
            let mut a = p.values_at(s);
            let mut b = q.values_at(s);
            sort_unstable_f64(&mut a);
            sort_unstable_f64(&mut b);
            w2_squared_sorted(&a, &b).sqrt()
        })
        .collect();
    Field::new(p.grid().clone(), values)
}

/// Per-cell difference of empirical q-quantiles: projection minus
/// reference, under the midpoint quantile rule.
pub fn quantile_change_map(
    proj: &ProjectionCloud,
    reference: &ProjectionCloud,
    q: f64,
) -> Result<Field> {
    proj.grid().check_compatible(reference.grid())?;
    if !(0.0 < q && q < 1.0) {
        return Err(CoreError::Argument(format!("quantile {q} outside (0, 1)")));
    }
    let cells = proj.grid().len();
    let values: Vec<f64> = (0..cells)
        .map(|s| {
            let mut a = proj.values_at(s);
            let mut b = reference.values_at(s);
            sort_unstable_f64(&mut a);
            sort_unstable_f64(&mut b);
            empirical_quantile(&a, q) - empirical_quantile(&b, q)
        })
        .collect();
    Field::new(proj.grid().clone(), values)
}

/// How grid cells are weighted in spatial means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellWeighting {
    Uniform,
    /// cos(latitude) weights; requires latitude coordinates on the grid.
    CosineLatitude,
}

impl std::str::FromStr for CellWeighting {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(CellWeighting::Uniform),
            "coslat" => Ok(CellWeighting::CosineLatitude),
            other => Err(CoreError::Config(format!(
                "unknown weighting '{other}'; valid: uniform, coslat"
            ))),
        }
    }
}

impl std::fmt::Display for CellWeighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellWeighting::Uniform => write!(f, "uniform"),
            CellWeighting::CosineLatitude => write!(f, "coslat"),
        }
    }
}

/// Spatial mean of one field under the chosen weighting.
pub fn spatial_mean(field: &Field, weighting: CellWeighting) -> Result<f64> {
    match weighting {
        CellWeighting::Uniform => Ok(field.mean()),
        CellWeighting::CosineLatitude => {
            let grid = field.grid();
            let lats = grid.lat_deg().ok_or_else(|| {
                CoreError::Argument(
                    "cosine-latitude weighting requires latitude coordinates".into(),
                )
            })?;
            let nlon = grid.nlon();
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, lat) in lats.iter().enumerate() {
                let w = lat.to_radians().cos().max(0.0);
                for j in 0..nlon {
                    num += w * field.values()[i * nlon + j];
                    den += w;
                }
            }
            if den == 0.0 {
                return Err(CoreError::Argument(
                    "cosine-latitude weights sum to zero".into(),
                ));
            }
            Ok(num / den)
        }
    }
}

/// One point of a smoothed global-mean series. `partial` marks entries
/// whose trailing window was not yet full.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub time: TimeIndex,
    pub value: f64,
    pub partial: bool,
}

/// Spatial means over time, smoothed with a trailing moving average of
/// length `window`. The first window-1 entries are partial-window means
/// and are flagged as such.
pub fn global_mean_series(
    fields: &[Field],
    times: &[TimeIndex],
    window: usize,
    weighting: CellWeighting,
) -> Result<Vec<SeriesPoint>> {
    if fields.is_empty() {
        return Err(CoreError::Argument("empty series".into()));
    }
    if fields.len() != times.len() {
        return Err(CoreError::Argument(format!(
            "{} fields but {} time indices",
            fields.len(),
            times.len()
        )));
    }
    if window == 0 {
        return Err(CoreError::Argument("window must be >= 1".into()));
    }
    let raw: Vec<f64> = fields
        .iter()
        .map(|f| spatial_mean(f, weighting))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(raw.len());
    for (i, &t) in times.iter().enumerate() {
        let start = (i + 1).saturating_sub(window);
        let slice = &raw[start..=i];
        let value = slice.iter().sum::<f64>() / slice.len() as f64;
        out.push(SeriesPoint {
            time: t,
            value,
            partial: slice.len() < window,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cloud(grid: &Grid, rows: &[&[f64]]) -> ProjectionCloud {
        ProjectionCloud::new(
            rows.iter()
                .map(|r| Field::new(grid.clone(), r.to_vec()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn w1d_trivial_values() {
        assert_eq!(wasserstein1d(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(wasserstein1d(&[0.0], &[1.0]).unwrap(), 1.0);
        let d = wasserstein1d(&[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(d, (5.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn w1d_rejects_empty() {
        assert!(wasserstein1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn w1d_unequal_sizes_match_common_refinement() {
        // {0, 1} vs {0, 0.5, 1}: quantiles at (j - 1/2)/3.
        let d = wasserstein1d(&[0.0, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        // Q_a at 1/6, 3/6, 5/6 = 0, 0.5, 1 under midpoint interpolation
        // (positions 0.25, 0.75); Q_b = 0, 0.5, 1 exactly.
        let qa = |q: f64| empirical_quantile(&[0.0, 1.0], q);
        let expect = (((qa(1.0 / 6.0) - 0.0f64).powi(2)
            + (qa(0.5) - 0.5f64).powi(2)
            + (qa(5.0 / 6.0) - 1.0f64).powi(2))
            / 3.0)
            .sqrt();
        assert_abs_diff_eq!(d, expect, epsilon = 1e-12);
    }

    #[test]
    fn midpoint_quantile_rule() {
        let vals: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        // Order statistics sit at (i - 1/2)/100; q = 0.95 falls halfway
        // between the 95th (0.945) and 96th (0.955) positions.
        assert_abs_diff_eq!(empirical_quantile(&vals, 0.95), 95.5, epsilon = 1e-12);
        assert_eq!(empirical_quantile(&vals, 0.0001), 1.0);
        assert_eq!(empirical_quantile(&vals, 0.9999), 100.0);
        // Median of two points interpolates symmetrically.
        assert_eq!(empirical_quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    proptest! {
        #[test]
        fn w1d_shift_property(
            a in proptest::collection::vec(-100.0f64..100.0, 1..20),
            c in -50.0f64..50.0,
        ) {
            let shifted: Vec<f64> = a.iter().map(|v| v + c).collect();
            let d = wasserstein1d(&a, &shifted).unwrap();
            prop_assert!((d - c.abs()).abs() < 1e-9);
        }

        #[test]
        fn w1d_metric_axioms_equal_sizes(
            a in proptest::collection::vec(-100.0f64..100.0, 6),
            b in proptest::collection::vec(-100.0f64..100.0, 6),
            c in proptest::collection::vec(-100.0f64..100.0, 6),
        ) {
            let d_ab = wasserstein1d(&a, &b).unwrap();
            let d_ba = wasserstein1d(&b, &a).unwrap();
            let d_ac = wasserstein1d(&a, &c).unwrap();
            let d_cb = wasserstein1d(&c, &b).unwrap();
            prop_assert!((d_ab - d_ba).abs() < 1e-12);
            prop_assert!(d_ab >= 0.0);
            prop_assert!(wasserstein1d(&a, &a).unwrap() == 0.0);
            prop_assert!(d_ab <= d_ac + d_cb + 1e-9);
        }
    }

    #[test]
    fn sw_identical_clouds_and_symmetry() {
        let grid = Grid::new(2, 2).unwrap();
        let p = cloud(&grid, &[&[0.0, 1.0, 2.0, 3.0], &[1.0, 1.0, 1.0, 1.0]]);
        let q = cloud(&grid, &[&[5.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 2.0]]);
        assert_eq!(sliced_wasserstein(&p, &p, 16, 7).unwrap(), 0.0);
        let pq = sliced_wasserstein(&p, &q, 16, 7).unwrap();
        let qp = sliced_wasserstein(&q, &p, 16, 7).unwrap();
        assert_eq!(pq, qp);
    }

    #[test]
    fn sw_is_deterministic_given_seed() {
        let grid = Grid::new(1, 3).unwrap();
        let p = cloud(&grid, &[&[0.0, 1.0, 2.0], &[1.0, 0.0, 2.0]]);
        let q = cloud(&grid, &[&[3.0, 1.0, 0.0]]);
        let a = sliced_wasserstein(&p, &q, 32, 11).unwrap();
        let b = sliced_wasserstein(&p, &q, 32, 11).unwrap();
        assert_eq!(a, b);
        let c = sliced_wasserstein(&p, &q, 32, 12).unwrap();
        assert!(a != c, "different seeds should give different estimates");
    }

    #[test]
    fn sw_on_single_cell_grid_reduces_to_w1d() {
        let grid = Grid::new(1, 1).unwrap();
        let p = cloud(&grid, &[&[0.0], &[1.0], &[2.0]]);
        let q = cloud(&grid, &[&[0.0], &[2.0], &[4.0]]);
        for seed in [0u64, 1, 99] {
            let sw = sliced_wasserstein(&p, &q, 8, seed).unwrap();
            assert_abs_diff_eq!(sw, (5.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn translated_cloud_matches_materialized() {
        let grid = Grid::new(2, 2).unwrap();
        let centers = vec![
            Field::new(grid.clone(), vec![0.0, 1.0, -1.0, 2.0]).unwrap(),
            Field::new(grid.clone(), vec![1.0, 0.0, 0.5, -2.0]).unwrap(),
        ];
        let offsets = vec![
            Field::new(grid.clone(), vec![0.1, -0.1, 0.2, 0.0]).unwrap(),
            Field::new(grid.clone(), vec![-0.3, 0.4, 0.0, 0.6]).unwrap(),
            Field::new(grid.clone(), vec![0.0, 0.0, 1.0, 1.0]).unwrap(),
        ];
        let mut materialized = Vec::new();
        for c in &centers {
            for o in &offsets {
                materialized.push(c.add(o).unwrap());
            }
        }
        let q = cloud(&grid, &[&[0.5, 0.5, 0.5, 0.5], &[0.0, 1.0, 0.0, 1.0]]);
        let tc = TranslatedCloud::new(&centers, &offsets).unwrap();
        let a = sliced_wasserstein_translated(&tc, &q, 24, 5).unwrap();
        let b = sliced_wasserstein(&ProjectionCloud::new(materialized.clone()).unwrap(), &q, 24, 5)
            .unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);

        let ma = pointwise_wasserstein_map_translated(&tc, &q).unwrap();
        let mb =
            pointwise_wasserstein_map(&ProjectionCloud::new(materialized).unwrap(), &q).unwrap();
        for (x, y) in ma.values().iter().zip(mb.values()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn sw_gaussian_shift_oracle_small() {
        // Mean-shifted Gaussian clouds: SW ~= ||shift|| / sqrt(p).
        use rand::{Rng, SeedableRng};
        let p_dim = 8;
        let grid = Grid::new(2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let shift = 2.0;
        let draw = |rng: &mut ChaCha8Rng, mu: f64| -> Field {
            let v: Vec<f64> = (0..p_dim)
                .map(|_| mu + rng.sample::<f64, _>(StandardNormal))
                .collect();
            Field::new(grid.clone(), v).unwrap()
        };
        let p = ProjectionCloud::new((0..600).map(|_| draw(&mut rng, 0.0)).collect()).unwrap();
        let q = ProjectionCloud::new((0..600).map(|_| draw(&mut rng, shift)).collect()).unwrap();
        let sw = sliced_wasserstein(&p, &q, 400, 3).unwrap();
        let expect = shift * (p_dim as f64).sqrt() / (p_dim as f64).sqrt(); // ||shift 1||/sqrt(p) = shift
        assert!(
            (sw - expect).abs() / expect < 0.10,
            "sw {sw} vs expected {expect}"
        );
    }

    #[test]
    fn pointwise_map_values() {
        let grid = Grid::new(1, 2).unwrap();
        let p = cloud(&grid, &[&[0.0, 5.0], &[1.0, 5.0]]);
        let q = cloud(&grid, &[&[0.0, 8.0], &[1.0, 8.0]]);
        let map = pointwise_wasserstein_map(&p, &q).unwrap();
        assert_abs_diff_eq!(map.values()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(map.values()[1], 3.0, epsilon = 1e-12);
        // Definition check: each cell equals wasserstein1d on the raw samples.
        let direct = wasserstein1d(&[5.0, 5.0], &[8.0, 8.0]).unwrap();
        assert_abs_diff_eq!(map.values()[1], direct, epsilon = 1e-12);
    }

    #[test]
    fn quantile_change_map_shift_equivariance() {
        let grid = Grid::new(1, 2).unwrap();
        let reference = cloud(&grid, &[&[1.0, 0.0], &[2.0, 1.0], &[3.0, 2.0]]);
        let same = quantile_change_map(&reference, &reference, 0.95).unwrap();
        assert!(same.values().iter().all(|&v| v == 0.0));

        let shifted = ProjectionCloud::new(
            reference
                .fields()
                .iter()
                .map(|f| f.add(&Field::constant(grid.clone(), 2.0).unwrap()).unwrap())
                .collect(),
        )
        .unwrap();
        for q in [0.05, 0.95] {
            let map = quantile_change_map(&shifted, &reference, q).unwrap();
            for v in map.values() {
                assert_abs_diff_eq!(*v, 2.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn global_means_constant_and_window_one() {
        let grid = Grid::new(2, 2).unwrap();
        let times = TimeIndex::new(1, 1).unwrap().sequence(5);
        let fields: Vec<Field> = (0..5)
            .map(|_| Field::constant(grid.clone(), 3.0).unwrap())
            .collect();
        for window in [1usize, 3] {
            let series =
                global_mean_series(&fields, &times, window, CellWeighting::Uniform).unwrap();
            assert!(series.iter().all(|p| p.value == 3.0));
        }
        let varying: Vec<Field> = (0..5)
            .map(|i| Field::constant(grid.clone(), i as f64).unwrap())
            .collect();
        let raw = global_mean_series(&varying, &times, 1, CellWeighting::Uniform).unwrap();
        for (i, pt) in raw.iter().enumerate() {
            assert_eq!(pt.value, i as f64);
            assert!(!pt.partial);
        }
    }

    #[test]
    fn seasonal_signal_cancels_over_full_window() {
        let grid = Grid::new(1, 1).unwrap();
        let times = TimeIndex::new(1, 1).unwrap().sequence(36);
        // +1 for the first half of each year, -1 for the second half.
        let fields: Vec<Field> = times
            .iter()
            .map(|t| {
                let v = if t.month() <= 6 { 1.0 } else { -1.0 };
                Field::constant(grid.clone(), v).unwrap()
            })
            .collect();
        let series = global_mean_series(&fields, &times, 12, CellWeighting::Uniform).unwrap();
        for pt in series.iter().skip(11) {
            assert_abs_diff_eq!(pt.value, 0.0, epsilon = 1e-12);
            assert!(!pt.partial);
        }
        assert!(series[..11].iter().all(|p| p.partial));
    }

    #[test]
    fn coslat_weighting_needs_coordinates() {
        let plain = Field::zeros(Grid::new(2, 2).unwrap());
        assert!(spatial_mean(&plain, CellWeighting::CosineLatitude).is_err());

        let grid = Grid::with_coords(2, 1, vec![0.0, 60.0], vec![0.0]).unwrap();
        let f = Field::new(grid, vec![1.0, 2.0]).unwrap();
        // weights cos(0)=1, cos(60 deg)=0.5 -> (1*1 + 0.5*2) / 1.5
        let m = spatial_mean(&f, CellWeighting::CosineLatitude).unwrap();
        assert_abs_diff_eq!(m, 4.0 / 3.0, epsilon = 1e-12);
    }
}
