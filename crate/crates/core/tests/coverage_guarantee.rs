//! Finite-sample coverage of the conformal machinery on exchangeable
//! data: over many independent (calibration, test) draws the empirical
//! coverage must sit in [1 - alpha, 1 - alpha + 1/n2] up to binomial
//! noise.

use gridce_core::experiment::synth::{stream_rng, white_noise_dataset, white_noise_pair};
use gridce_core::{calibrate, DepthKind, Grid, TimeIndex, TrainedAnalysis};

fn run_trials(depth: DepthKind, trials: usize, n2: usize, alpha: f64, seed: u64) -> f64 {
    let grid = Grid::new(2, 3).unwrap();
    let members = 3;
    let start = TimeIndex::new(1, 1).unwrap();
    let mut covered = 0usize;
    for trial in 0..trials {
        let mut rng = stream_rng(seed, trial as u64, 0);
        let cal = white_noise_dataset(&grid, members, start, n2, &mut rng).unwrap();
        let model = TrainedAnalysis::ensemble_average(grid.clone(), members);
        let calib = calibrate(model, &cal, depth, alpha).unwrap();
        let (snap, target) = white_noise_pair(&grid, members, start.plus_months(n2), &mut rng);
        if calib.covers(&snap, &target).unwrap() {
            covered += 1;
        }
    }
    covered as f64 / trials as f64
}

#[test]
fn exchangeable_coverage_within_binomial_band() {
    let trials = 150;
    let n2 = 49;
    let alpha = 0.1;
    // k = ceil(50 * 0.9) = 45 -> nominal coverage 0.9.
    let sigma = (0.9f64 * 0.1 / trials as f64).sqrt();
    for (depth, seed) in [
        (DepthKind::LinfDepth, 101u64),
        (DepthKind::IntegratedTukey, 102),
        (DepthKind::InvLinfNorm, 103),
    ] {
        let cov = run_trials(depth, trials, n2, alpha, seed);
        assert!(
            (cov - 0.9).abs() <= 3.0 * sigma,
            "{depth}: coverage {cov} outside the 3-sigma band around 0.9"
        );
        let upper = 1.0 - alpha + 1.0 / n2 as f64;
        assert!(
            cov <= upper + 3.0 * sigma,
            "{depth}: coverage {cov} statistically exceeds the theoretical cap {upper}"
        );
    }
}
