//! Experiment protocols: the white-noise control run, the perfect-model
//! jackknife suite with baseline comparisons and temporal
//! decompositions, and the calibration-size sensitivity sweep.
//!
//! Every report is a pure function of (data, config, seed): random
//! streams are keyed by (seed, experiment id, phase) and parallel
//! results are collected in experiment order, so scheduling and thread
//! count never change a byte of output.

pub mod synth;

use crate::analysis::{train_analysis, AnalysisKind, TrainedAnalysis, TrainingOptions};
use crate::baselines::{fit_quantile_maps, imv_bc_ensemble, imv_ensemble, QuantileMapSet};
use crate::conformal::{calibrate, prediction_band, ConformalCalibration};
use crate::depth::{conformal_rank, depth_score, DepthKind};
use crate::error::{CoreError, Result};
use crate::field::{
    split_paired_dataset, EnsembleSnapshot, Field, Grid, PairedDataset, SplitSpec, TimeIndex,
};
use crate::metrics::{
    pointwise_wasserstein_map, pointwise_wasserstein_map_translated, sliced_wasserstein,
    sliced_wasserstein_translated, MetricsRow, ProjectionCloud, SeriesPoint, TranslatedCloud,
};
use rayon::prelude::*;
use synth::{stream_rng, white_noise_dataset, white_noise_pair};

/// Salt so the SW direction stream differs from the data streams.
const SW_STREAM: u64 = 0x5357_u64;

/// An uncertainty method attached to an analysis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UqMethod {
    Conformal(DepthKind),
    Imv,
    ImvBc,
}

impl std::fmt::Display for UqMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UqMethod::Conformal(d) => write!(f, "CE({d})"),
            UqMethod::Imv => write!(f, "IMV"),
            UqMethod::ImvBc => write!(f, "IMV(BC)"),
        }
    }
}

/// Temporal decomposition of the test window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockSpec {
    /// Index-based windows of 120 time steps.
    Decadal,
    /// Group by calendar month.
    Monthly,
    /// Explicit [start, end) index ranges into the test window.
    Custom(Vec<(usize, usize)>),
}

/// Which baselines to run next to the conformal ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineFlags {
    pub imv: bool,
    pub imv_bc: bool,
}

impl Default for BaselineFlags {
    fn default() -> Self {
        Self {
            imv: true,
            imv_bc: true,
        }
    }
}

/// Configuration for the experiment protocols.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub analysis_kinds: Vec<AnalysisKind>,
    pub depth_kinds: Vec<DepthKind>,
    pub alpha: f64,
    pub split: SplitSpec,
    pub seed: u64,
    pub grid: Grid,
    /// Ensemble size for generated data; also the repetition count of
    /// the white-noise control.
    pub members: usize,
    /// Test length for generated protocols.
    pub n_test: usize,
    pub n_proj: usize,
    pub blocks: Vec<BlockSpec>,
    pub baselines: BaselineFlags,
    pub training: TrainingOptions,
    /// Quantile levels for the bias-corrected baseline.
    pub n_q: usize,
    /// Emit pointwise Wasserstein difference maps (the expensive part
    /// of a suite report).
    pub emit_maps: bool,
}

impl ExperimentConfig {
    /// White-noise control defaults: 30 x 50 grid, 30 members,
    /// 800/200/1000 splits, alpha = 0.1, ensemble-average analysis
    /// under all three depths.
    pub fn white_noise_defaults(seed: u64) -> Self {
        Self {
            analysis_kinds: vec![AnalysisKind::EnsembleAverage],
            depth_kinds: DepthKind::all().to_vec(),
            alpha: 0.1,
            split: SplitSpec { n1: 800, n2: 200 },
            seed,
            grid: Grid::new(30, 50).expect("static dims"),
            members: 30,
            n_test: 1000,
            n_proj: 100,
            blocks: Vec::new(),
            baselines: BaselineFlags {
                imv: false,
                imv_bc: false,
            },
            training: TrainingOptions::default(),
            n_q: 100,
            emit_maps: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.analysis_kinds.is_empty() || self.depth_kinds.is_empty() {
            return Err(CoreError::Config(
                "need at least one analysis kind and one depth kind".into(),
            ));
        }
        if self.members == 0 {
            return Err(CoreError::Config("member count must be >= 1".into()));
        }
        conformal_rank(self.split.n2, self.alpha)?;
        Ok(())
    }
}

/// One block-decomposed metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRow {
    pub block: String,
    pub row: MetricsRow,
}

/// Structured aggregate over the jackknife experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub analysis: AnalysisKind,
    pub uq: UqMethod,
    pub mean_coverage: Option<f64>,
    pub mean_width: Option<f64>,
    pub mean_sw: Option<f64>,
    /// Sample-stddev / sqrt(n) of the per-experiment SW distances.
    pub se_sw: Option<f64>,
    pub n_experiments: usize,
}

/// Everything a protocol run produces.
#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    /// Per-experiment rows.
    pub rows: Vec<MetricsRow>,
    /// Per-experiment, per-block rows.
    pub block_rows: Vec<BlockRow>,
    /// Aggregates across experiments.
    pub summaries: Vec<SummaryRow>,
    /// Aggregates across experiments within each block.
    pub block_summaries: Vec<(String, SummaryRow)>,
    /// Named map fields (Wasserstein difference maps).
    pub maps: Vec<(String, Field)>,
    /// Named global-mean series.
    pub series: Vec<(String, Vec<SeriesPoint>)>,
}

impl SuiteReport {
    pub fn summary(&self, analysis: AnalysisKind, uq: UqMethod) -> Option<&SummaryRow> {
        self.summaries
            .iter()
            .find(|s| s.analysis == analysis && s.uq == uq)
    }
}

/// One row of the calibration-size sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n2: usize,
    pub analysis: AnalysisKind,
    pub mean_sw: f64,
    pub se_sw: f64,
    pub n_experiments: usize,
}

/// A collection of m member series on one grid, the input of the
/// perfect-model protocols.
#[derive(Debug, Clone)]
pub struct MemberCollection {
    grid: Grid,
    times: Vec<TimeIndex>,
    members: Vec<Vec<Field>>,
}

impl MemberCollection {
    pub fn new(times: Vec<TimeIndex>, members: Vec<Vec<Field>>) -> Result<Self> {
        if members.is_empty() || times.is_empty() {
            return Err(CoreError::Argument(
                "member collection needs at least one member and one time".into(),
            ));
        }
        let grid = members[0]
            .first()
            .ok_or_else(|| CoreError::Argument("empty member series".into()))?
            .grid()
            .clone();
        for series in &members {
            if series.len() != times.len() {
                return Err(CoreError::Argument(format!(
                    "member series length {} does not match {} times",
                    series.len(),
                    times.len()
                )));
            }
            for f in series {
                grid.check_compatible(f.grid())?;
            }
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Argument(
                "times must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            grid,
            times,
            members,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[TimeIndex] {
        &self.times
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn members(&self) -> &[Vec<Field>] {
        &self.members
    }

    /// The jackknife dataset for experiment `target`: that member
    /// becomes the target series and the others, in order, the
    /// ensemble.
    pub fn jackknife_dataset(&self, target: usize) -> Result<PairedDataset> {
        if target >= self.members.len() {
            return Err(CoreError::Argument(format!(
                "target index {target} out of range for {} members",
                self.members.len()
            )));
        }
        let pairs = self
            .times
            .iter()
            .enumerate()
            .map(|(t, &time)| {
                let fields: Vec<Field> = self
                    .members
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != target)
                    .map(|(_, series)| series[t].clone())
                    .collect();
                Ok((
                    EnsembleSnapshot::new(time, fields)?,
                    self.members[target][t].clone(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        PairedDataset::new(pairs)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample-stddev / sqrt(n); 0 for a single experiment.
fn standard_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// Partitions `times` (the test window) into named blocks.
fn block_partition(spec: &BlockSpec, times: &[TimeIndex]) -> Vec<(String, Vec<usize>)> {
    match spec {
        BlockSpec::Decadal => {
            let mut out = Vec::new();
            let mut start = 0;
            while start < times.len() {
                let end = (start + 120).min(times.len());
                out.push((
                    format!("t{start:04}-t{:04}", end - 1),
                    (start..end).collect(),
                ));
                start = end;
            }
            out
        }
        BlockSpec::Monthly => (1..=12u8)
            .filter_map(|month| {
                let idxs: Vec<usize> = times
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.month() == month)
                    .map(|(i, _)| i)
                    .collect();
                (!idxs.is_empty()).then(|| (format!("m{month:02}"), idxs))
            })
            .collect(),
        BlockSpec::Custom(ranges) => ranges
            .iter()
            .filter_map(|&(start, end)| {
                let end = end.min(times.len());
                (start < end).then(|| {
                    (
                        format!("c{start:04}-c{:04}", end - 1),
                        (start..end).collect(),
                    )
                })
            })
            .collect(),
    }
}

/// White-noise control run: for each repetition, fresh i.i.d.
/// standard-normal data are split, every (analysis, depth) combination
/// is trained and calibrated, and coverage/width are measured on a
/// streamed test set. Rows report means over repetitions.
pub fn white_noise_control(cfg: &ExperimentConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let reps = cfg.members;
    let combos: Vec<(AnalysisKind, DepthKind)> = cfg
        .analysis_kinds
        .iter()
        .flat_map(|&a| cfg.depth_kinds.iter().map(move |&d| (a, d)))
        .collect();

    let per_rep: Vec<Result<Vec<(f64, f64)>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let rep_id = rep as u64;
            let start = TimeIndex::new(1, 1).expect("valid month");
            let needs_train = cfg
                .analysis_kinds
                .iter()
                .any(|k| *k != AnalysisKind::EnsembleAverage);
            let train = if needs_train {
                let mut rng = stream_rng(cfg.seed, rep_id, 0);
                Some(white_noise_dataset(
                    &cfg.grid,
                    cfg.members,
                    start,
                    cfg.split.n1,
                    &mut rng,
                )?)
            } else {
                None
            };
            let cal = {
                let mut rng = stream_rng(cfg.seed, rep_id, 1);
                white_noise_dataset(
                    &cfg.grid,
                    cfg.members,
                    start.plus_months(cfg.split.n1),
                    cfg.split.n2,
                    &mut rng,
                )?
            };

            let mut calibs: Vec<ConformalCalibration> = Vec::with_capacity(combos.len());
            for &kind in &cfg.analysis_kinds {
                let model = if kind == AnalysisKind::EnsembleAverage {
                    TrainedAnalysis::ensemble_average(cfg.grid.clone(), cfg.members)
                } else {
                    train_analysis(kind, train.as_ref().expect("generated"), &cfg.training)?
                };
                for &depth in &cfg.depth_kinds {
                    calibs.push(calibrate(model.clone(), &cal, depth, cfg.alpha)?);
                }
            }
            let widths: Vec<f64> = calibs
                .iter()
                .map(|c| Ok(c.residual_envelope()?.mean_width))
                .collect::<Result<_>>()?;

            let mut covered = vec![0usize; combos.len()];
            let mut rng = stream_rng(cfg.seed, rep_id, 2);
            let mut t = start.plus_months(cfg.split.n1 + cfg.split.n2);
            for _ in 0..cfg.n_test {
                let (snap, target) = white_noise_pair(&cfg.grid, cfg.members, t, &mut rng);
                t = t.next();
                let mut ci = 0;
                for _ in &cfg.analysis_kinds {
                    let pred = calibs[ci].model().predict(&snap)?;
                    let residual = target.sub(&pred)?;
                    for _ in &cfg.depth_kinds {
                        let c = &calibs[ci];
                        let s = depth_score(c.depth_kind(), &residual, c.pool())?;
                        if s >= c.tau() {
                            covered[ci] += 1;
                        }
                        ci += 1;
                    }
                }
            }
            Ok(combos
                .iter()
                .enumerate()
                .map(|(ci, _)| (covered[ci] as f64 / cfg.n_test as f64, widths[ci]))
                .collect())
        })
        .collect();

    let mut per_combo: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); combos.len()];
    for rep in per_rep {
        for (ci, (cov, width)) in rep?.into_iter().enumerate() {
            per_combo[ci].0.push(cov);
            per_combo[ci].1.push(width);
        }
    }

    let mut report = SuiteReport::default();
    for (ci, &(kind, depth)) in combos.iter().enumerate() {
        let (covs, widths) = &per_combo[ci];
        let uq = UqMethod::Conformal(depth);
        report.rows.push(MetricsRow {
            label: format!("wn/{kind}/{uq}"),
            coverage: Some(mean(covs)),
            mean_width: Some(mean(widths)),
            sw_distance: None,
            n_eval: reps * cfg.n_test,
        });
        report.summaries.push(SummaryRow {
            analysis: kind,
            uq,
            mean_coverage: Some(mean(covs)),
            mean_width: Some(mean(widths)),
            mean_sw: None,
            se_sw: None,
            n_experiments: reps,
        });
    }
    Ok(report)
}

/// Per-(kind, uq) output of one jackknife experiment.
struct ExperimentCell {
    kind: AnalysisKind,
    uq: UqMethod,
    coverage: Option<f64>,
    width: f64,
    sw: f64,
    blocks: Vec<(String, Option<f64>, f64, f64)>, // (name, coverage, width, sw)
}

struct ExperimentOutput {
    cells: Vec<ExperimentCell>,
    skipped: Vec<(AnalysisKind, String)>,
    /// Per-kind (CE - IMV, CE - IMV(BC)) pointwise Wasserstein maps.
    map_diffs: Vec<(Field, Option<Field>)>,
}

fn run_jackknife_experiment(
    collection: &MemberCollection,
    cfg: &ExperimentConfig,
    j: usize,
) -> Result<ExperimentOutput> {
    let ds = collection.jackknife_dataset(j)?;
    let (train, cal, test) = split_paired_dataset(&ds, cfg.split)?;
    if test.is_empty() {
        return Err(CoreError::Config(format!(
            "split {}+{} leaves no test data in a length-{} collection",
            cfg.split.n1,
            cfg.split.n2,
            ds.len()
        )));
    }
    let test_times: Vec<TimeIndex> = test.times();
    let test_targets: Vec<Field> = test.targets();
    let target_cloud = ProjectionCloud::new(test_targets.clone())?;
    let sw_seed = cfg.seed ^ SW_STREAM;

    let maps_fit: Option<QuantileMapSet> = if cfg.baselines.imv_bc {
        let obs: Vec<Field> = train.targets();
        let histories: Vec<Vec<Field>> = (0..collection.member_count() - 1)
            .map(|i| {
                train
                    .pairs()
                    .iter()
                    .map(|(snap, _)| snap.members()[i].clone())
                    .collect()
            })
            .collect();
        Some(fit_quantile_maps(&histories, &obs, cfg.n_q)?)
    } else {
        None
    };

    let partitions: Vec<(String, Vec<usize>)> = cfg
        .blocks
        .iter()
        .flat_map(|spec| block_partition(spec, &test_times))
        .collect();

    let mut out = ExperimentOutput {
        cells: Vec::new(),
        skipped: Vec::new(),
        map_diffs: Vec::new(),
    };

    for &kind in &cfg.analysis_kinds {
        let model = if kind == AnalysisKind::EnsembleAverage {
            TrainedAnalysis::ensemble_average(
                collection.grid().clone(),
                collection.member_count() - 1,
            )
        } else {
            match train_analysis(kind, &train, &cfg.training) {
                Ok(m) => m,
                Err(err) => {
                    out.skipped.push((kind, err.to_string()));
                    continue;
                }
            }
        };
        let preds: Vec<Field> = test
            .pairs()
            .iter()
            .map(|(snap, _)| model.predict(snap))
            .collect::<Result<_>>()?;

        let mut ce_map_first_depth: Option<Field> = None;
        for (di, &depth) in cfg.depth_kinds.iter().enumerate() {
            let calib = calibrate(model.clone(), &cal, depth, cfg.alpha)?;
            let kept = calib.kept_residuals();
            let width = calib.residual_envelope()?.mean_width;
            let flags: Vec<bool> = test
                .pairs()
                .iter()
                .zip(&preds)
                .map(|((_, y), pred)| {
                    let r = y.sub(pred)?;
                    Ok(depth_score(depth, &r, calib.pool())? >= calib.tau())
                })
                .collect::<Result<_>>()?;
            let tc = TranslatedCloud::new(&preds, &kept)?;
            let sw = sliced_wasserstein_translated(&tc, &target_cloud, cfg.n_proj, sw_seed)?;
            let blocks = partitions
                .iter()
                .map(|(name, idxs)| {
                    let centers: Vec<Field> = idxs.iter().map(|&i| preds[i].clone()).collect();
                    let targets: Vec<Field> =
                        idxs.iter().map(|&i| test_targets[i].clone()).collect();
                    let sw_b = sliced_wasserstein_translated(
                        &TranslatedCloud::new(&centers, &kept)?,
                        &ProjectionCloud::new(targets)?,
                        cfg.n_proj,
                        sw_seed,
                    )?;
                    let cov_b = idxs.iter().filter(|&&i| flags[i]).count() as f64
                        / idxs.len() as f64;
                    Ok((name.clone(), Some(cov_b), width, sw_b))
                })
                .collect::<Result<_>>()?;
            out.cells.push(ExperimentCell {
                kind,
                uq: UqMethod::Conformal(depth),
                coverage: Some(flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64),
                width,
                sw,
                blocks,
            });
            if di == 0 && cfg.emit_maps {
                ce_map_first_depth =
                    Some(pointwise_wasserstein_map_translated(&tc, &target_cloud)?);
            }
        }

        let mut imv_map: Option<Field> = None;
        let mut imv_bc_map: Option<Field> = None;
        for (enabled, uq) in [
            (cfg.baselines.imv, UqMethod::Imv),
            (cfg.baselines.imv_bc, UqMethod::ImvBc),
        ] {
            if !enabled {
                continue;
            }
            let clouds: Vec<Vec<Field>> = test
                .pairs()
                .iter()
                .zip(&preds)
                .map(|((snap, _), pred)| match uq {
                    UqMethod::Imv => imv_ensemble(snap, pred),
                    UqMethod::ImvBc => {
                        imv_bc_ensemble(snap, maps_fit.as_ref().expect("fitted"), pred)
                    }
                    UqMethod::Conformal(_) => unreachable!(),
                })
                .collect::<Result<_>>()?;
            let widths_t: Vec<f64> = clouds
                .iter()
                .map(|members| Ok(prediction_band(members)?.mean_width))
                .collect::<Result<_>>()?;
            let pooled: Vec<Field> = clouds.iter().flatten().cloned().collect();
            let pooled_cloud = ProjectionCloud::new(pooled)?;
            let sw = sliced_wasserstein(&pooled_cloud, &target_cloud, cfg.n_proj, sw_seed)?;
            let blocks = partitions
                .iter()
                .map(|(name, idxs)| {
                    let sub: Vec<Field> = idxs
                        .iter()
                        .flat_map(|&i| clouds[i].iter().cloned())
                        .collect();
                    let targets: Vec<Field> =
                        idxs.iter().map(|&i| test_targets[i].clone()).collect();
                    let sw_b = sliced_wasserstein(
                        &ProjectionCloud::new(sub)?,
                        &ProjectionCloud::new(targets)?,
                        cfg.n_proj,
                        sw_seed,
                    )?;
                    let width_b = mean(&idxs.iter().map(|&i| widths_t[i]).collect::<Vec<_>>());
                    Ok((name.clone(), None, width_b, sw_b))
                })
                .collect::<Result<_>>()?;
            out.cells.push(ExperimentCell {
                kind,
                uq,
                coverage: None,
                width: mean(&widths_t),
                sw,
                blocks,
            });
            if cfg.emit_maps {
                let map = pointwise_wasserstein_map(&pooled_cloud, &target_cloud)?;
                match uq {
                    UqMethod::Imv => imv_map = Some(map),
                    UqMethod::ImvBc => imv_bc_map = Some(map),
                    UqMethod::Conformal(_) => unreachable!(),
                }
            }
        }

        if let (Some(ce_map), Some(imv_map)) = (&ce_map_first_depth, &imv_map) {
            let diff_imv = ce_map.sub(imv_map)?;
            let diff_bc = match &imv_bc_map {
                Some(bc) => Some(ce_map.sub(bc)?),
                None => None,
            };
            out.map_diffs.push((diff_imv, diff_bc));
        }
    }
    Ok(out)
}

/// Perfect-model jackknife suite: each member in turn becomes the
/// target, the rest the ensemble; every (analysis, depth) combination
/// is compared against the re-centered baselines on the shared test
/// window.
pub fn perfect_model_suite(
    collection: &MemberCollection,
    cfg: &ExperimentConfig,
) -> Result<SuiteReport> {
    cfg.validate()?;
    if collection.member_count() < 2 {
        return Err(CoreError::Config(
            "perfect-model protocol needs at least 2 members".into(),
        ));
    }
    let m = collection.member_count();
    let outputs: Vec<Result<ExperimentOutput>> = (0..m)
        .into_par_iter()
        .map(|j| run_jackknife_experiment(collection, cfg, j))
        .collect();

    let mut report = SuiteReport::default();
    let mut map_imv_acc: Option<Field> = None;
    let mut map_bc_acc: Option<Field> = None;
    let mut map_count = 0usize;
    let mut by_combo: Vec<((AnalysisKind, UqMethod), Vec<&ExperimentCell>)> = Vec::new();
    let mut block_by_combo: Vec<((AnalysisKind, UqMethod, String), Vec<(Option<f64>, f64, f64)>)> =
        Vec::new();

    let outputs: Vec<ExperimentOutput> = outputs.into_iter().collect::<Result<_>>()?;
    for (j, output) in outputs.iter().enumerate() {
        for (kind, reason) in &output.skipped {
            report.rows.push(MetricsRow {
                label: format!("exp{j:02}/{kind}/skipped: {reason}"),
                coverage: None,
                mean_width: None,
                sw_distance: None,
                n_eval: 0,
            });
        }
        for cell in &output.cells {
            report.rows.push(MetricsRow {
                label: format!("exp{j:02}/{}/{}", cell.kind, cell.uq),
                coverage: cell.coverage,
                mean_width: Some(cell.width),
                sw_distance: Some(cell.sw),
                n_eval: collection.len() - cfg.split.n1 - cfg.split.n2,
            });
            for (name, cov, width, sw) in &cell.blocks {
                report.block_rows.push(BlockRow {
                    block: name.clone(),
                    row: MetricsRow {
                        label: format!("exp{j:02}/{}/{}", cell.kind, cell.uq),
                        coverage: *cov,
                        mean_width: Some(*width),
                        sw_distance: Some(*sw),
                        n_eval: 0,
                    },
                });
                let key = (cell.kind, cell.uq, name.clone());
                match block_by_combo.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, v)) => v.push((*cov, *width, *sw)),
                    None => block_by_combo.push((key, vec![(*cov, *width, *sw)])),
                }
            }
            let key = (cell.kind, cell.uq);
            match by_combo.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(cell),
                None => by_combo.push((key, vec![cell])),
            }
        }
        for (diff_imv, diff_bc) in &output.map_diffs {
            map_imv_acc = Some(match map_imv_acc {
                Some(acc) => acc.add(diff_imv)?,
                None => diff_imv.clone(),
            });
            if let Some(bc) = diff_bc {
                map_bc_acc = Some(match map_bc_acc {
                    Some(acc) => acc.add(bc)?,
                    None => bc.clone(),
                });
            }
            map_count += 1;
        }
    }

    for ((kind, uq), cells) in &by_combo {
        let sws: Vec<f64> = cells.iter().map(|c| c.sw).collect();
        let widths: Vec<f64> = cells.iter().map(|c| c.width).collect();
        let covs: Vec<f64> = cells.iter().filter_map(|c| c.coverage).collect();
        report.summaries.push(SummaryRow {
            analysis: *kind,
            uq: *uq,
            mean_coverage: (!covs.is_empty()).then(|| mean(&covs)),
            mean_width: Some(mean(&widths)),
            mean_sw: Some(mean(&sws)),
            se_sw: Some(standard_error(&sws)),
            n_experiments: cells.len(),
        });
    }
    for ((kind, uq, block), vals) in &block_by_combo {
        let sws: Vec<f64> = vals.iter().map(|v| v.2).collect();
        let widths: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let covs: Vec<f64> = vals.iter().filter_map(|v| v.0).collect();
        report.block_summaries.push((
            block.clone(),
            SummaryRow {
                analysis: *kind,
                uq: *uq,
                mean_coverage: (!covs.is_empty()).then(|| mean(&covs)),
                mean_width: Some(mean(&widths)),
                mean_sw: Some(mean(&sws)),
                se_sw: Some(standard_error(&sws)),
                n_experiments: vals.len(),
            },
        ));
    }
    if let Some(acc) = map_imv_acc {
        report
            .maps
            .push(("wdiff_ce_imv".into(), acc.scale(1.0 / map_count as f64)));
    }
    if let Some(acc) = map_bc_acc {
        report
            .maps
            .push(("wdiff_ce_imvbc".into(), acc.scale(1.0 / map_count as f64)));
    }
    Ok(report)
}

/// Calibration-size sensitivity sweep: the history budget n1 + n2 stays
/// fixed while the calibration share grows; each size is evaluated on
/// the same held-out test period with the first configured depth.
pub fn calibration_size_sweep(
    collection: &MemberCollection,
    cfg: &ExperimentConfig,
    sizes: &[usize],
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if sizes.is_empty() {
        return Err(CoreError::Config("no calibration sizes given".into()));
    }
    let budget = cfg.split.n1 + cfg.split.n2;
    if budget + 1 > collection.len() {
        return Err(CoreError::Config(format!(
            "history budget {budget} leaves no test data in a length-{} collection",
            collection.len()
        )));
    }
    for &n2 in sizes {
        if n2 == 0 || n2 >= budget {
            return Err(CoreError::Config(format!(
                "calibration size {n2} infeasible against history budget {budget}"
            )));
        }
        conformal_rank(n2, cfg.alpha)?;
    }
    let depth = cfg.depth_kinds[0];
    let m = collection.member_count();
    let sw_seed = cfg.seed ^ SW_STREAM;

    // (size, kind) -> per-experiment SW values.
    let per_exp: Vec<Result<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let ds = collection.jackknife_dataset(j)?;
            let mut sws = Vec::with_capacity(sizes.len() * cfg.analysis_kinds.len());
            for &n2 in sizes {
                let split = SplitSpec {
                    n1: budget - n2,
                    n2,
                };
                let (train, cal, test) = split_paired_dataset(&ds, split)?;
                let target_cloud = ProjectionCloud::new(test.targets())?;
                for &kind in &cfg.analysis_kinds {
                    let model = if kind == AnalysisKind::EnsembleAverage {
                        TrainedAnalysis::ensemble_average(
                            collection.grid().clone(),
                            collection.member_count() - 1,
                        )
                    } else {
                        train_analysis(kind, &train, &cfg.training)?
                    };
                    let preds: Vec<Field> = test
                        .pairs()
                        .iter()
                        .map(|(snap, _)| model.predict(snap))
                        .collect::<Result<_>>()?;
                    let calib = calibrate(model, &cal, depth, cfg.alpha)?;
                    let kept = calib.kept_residuals();
                    let sw = sliced_wasserstein_translated(
                        &TranslatedCloud::new(&preds, &kept)?,
                        &target_cloud,
                        cfg.n_proj,
                        sw_seed,
                    )?;
                    sws.push(sw);
                }
            }
            Ok(sws)
        })
        .collect();
    let per_exp: Vec<Vec<f64>> = per_exp.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (si, &n2) in sizes.iter().enumerate() {
        for (ki, &kind) in cfg.analysis_kinds.iter().enumerate() {
            let idx = si * cfg.analysis_kinds.len() + ki;
            let vals: Vec<f64> = per_exp.iter().map(|e| e[idx]).collect();
            rows.push(SweepRow {
                n2,
                analysis: kind,
                mean_sw: mean(&vals),
                se_sw: standard_error(&vals),
                n_experiments: vals.len(),
            });
        }
    }
    Ok(rows)
}
