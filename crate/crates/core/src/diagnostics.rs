//! Distribution distances between endpoint ensembles of SGD and of the
//! limiting diffusion.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{run_ensemble, sgd_run, simulate_limit_sde, NoiseModel, SdeConfig, SgdConfig};
use crate::{Error, Loss, Matrix, Result, Vector};

/// Number of random directions in the sliced Wasserstein distance.
pub const N_SLICES: usize = 16;
/// Seed of the slicing directions, independent of all simulation seeds.
pub const SLICE_SEED: u64 = 0x51_1ce5;

/// Empirical mean and covariance of a point cloud.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub points: Vec<Vector>,
    pub mean: Vector,
    /// Sample covariance (`1/(N−1)` normalization; zero for one point).
    pub covariance: Matrix,
    pub projection_seed: u64,
}

impl EnsembleSummary {
    pub fn new(points: Vec<Vector>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidConfig("ensemble needs at least one point".into()))?;
        let dim = first.len();
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let n = points.len() as f64;
        let mean = points.iter().fold(Vector::zeros(dim), |acc, p| acc + p) / n;
        let mut covariance = Matrix::zeros(dim, dim);
        if points.len() > 1 {
            for p in &points {
                let c = p - &mean;
                covariance.ger(1.0, &c, &c, 1.0);
            }
            covariance /= n - 1.0;
        }
        Ok(Self {
            points,
            mean,
            covariance: crate::linalg::symmetrize(&covariance),
            projection_seed: SLICE_SEED,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Distances between two ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mean_dist: f64,
    pub cov_fro_dist: f64,
    pub sw1: f64,
}

/// Unit directions used for slicing, fixed by `seed`.
pub fn slice_directions(dim: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..N_SLICES)
        .map(|_| {
            let g = Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let n = g.norm();
            g / n
        })
        .collect()
}

/// Exact 1-Wasserstein distance between two empirical measures on the
/// line, `∫|F_a − F_b|`.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (wa, wb) = (1.0 / a.len() as f64, 1.0 / b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0_f64, 0.0_f64);
    let mut last = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (fa - fb).abs() * (next - last);
        last = next;
        while i < a.len() && a[i] == next {
            fa += wa;
            i += 1;
        }
        while j < b.len() && b[j] == next {
            fb += wb;
            j += 1;
        }
    }
    total
}

/// Mean distance, Frobenius covariance distance and sliced 1-Wasserstein
/// distance averaged over [`N_SLICES`] fixed directions.
pub fn compare(a: &EnsembleSummary, b: &EnsembleSummary) -> Result<Comparison> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let dirs = slice_directions(a.dim(), a.projection_seed);
    let project = |pts: &[Vector], d: &Vector| pts.iter().map(|p| p.dot(d)).collect::<Vec<_>>();
    let sw1 = dirs
        .iter()
        .map(|d| wasserstein_1d(&project(&a.points, d), &project(&b.points, d)))
        .sum::<f64>()
        / dirs.len() as f64;
    Ok(Comparison {
        mean_dist: (&a.mean - &b.mean).norm(),
        cov_fro_dist: (&a.covariance - &b.covariance).norm(),
        sw1,
    })
}

/// Settings of [`convergence_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Horizon in manifold time.
    pub t_end: f64,
    /// Learning rates, descending.
    pub etas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Step of the reference SDE simulation.
    pub sde_dt: f64,
    pub retraction_every: usize,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.etas.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("need at least one eta and one seed".into()));
        }
        if self.etas.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if self.etas.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidConfig("learning rates must be strictly descending".into()));
        }
        Ok(())
    }
}

/// One row of the sweep table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub steps: usize,
    pub n_seeds: usize,
    pub n_diverged: usize,
    pub mean_dist: f64,
    pub cov_fro_dist: f64,
    pub sw1: f64,
}

/// Seed offset separating reference-SDE generators from SGD generators.
const SDE_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Endpoints of the limiting diffusion from `x0`, one per seed.
pub fn limit_ensemble(
    loss: &dyn Loss,
    noise: &NoiseModel,
    x0: &Vector,
    cfg: &SweepConfig,
) -> Result<EnsembleSummary> {
    let outcomes = run_ensemble(&cfg.seeds, |seed| {
        let sde = SdeConfig {
            dt: cfg.sde_dt,
            t_end: cfg.t_end,
            retraction_every: cfg.retraction_every,
            seed: seed.wrapping_add(SDE_SEED_OFFSET),
            record_stride: 0,
        };
        let traj = simulate_limit_sde(loss, noise, x0, &sde)?;
        Ok(traj.last_state().cloned().expect("trajectory has a start point"))
    });
    EnsembleSummary::new(outcomes.into_iter().collect::<Result<_>>()?)
}

/// SGD endpoints after `⌊T/η²⌋` steps; diverged runs are counted, not kept.
pub fn sgd_ensemble(
    loss: &dyn Loss,
    noise: &NoiseModel,
    x0: &Vector,
    eta: f64,
    t_end: f64,
    seeds: &[u64],
) -> Result<(Vec<Vector>, usize)> {
    let steps = SgdConfig::steps_for_horizon(eta, t_end).max(1);
    let outcomes = run_ensemble(seeds, |seed| {
        let cfg = SgdConfig {
            eta,
            steps,
            seed,
            record_stride: 0,
        };
        Ok(sgd_run(loss, noise, &cfg, x0)?.last_state().cloned().expect("trajectory has a start point"))
    });
    let mut points = Vec::with_capacity(seeds.len());
    let mut diverged = 0;
    for r in outcomes {
        match r {
            Ok(p) => points.push(p),
            Err(Error::Divergence { .. }) => diverged += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((points, diverged))
}

/// For each learning rate, compare the SGD endpoint ensemble at manifold
/// time `T` with the limiting-diffusion ensemble.
pub fn convergence_sweep(loss: &dyn Loss, noise: &NoiseModel, x0: &Vector, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let reference = limit_ensemble(loss, noise, x0, cfg)?;
    sweep_against(loss, noise, x0, cfg, &reference)
}

/// [`convergence_sweep`] against a precomputed reference ensemble.
pub fn sweep_against(
    loss: &dyn Loss,
    noise: &NoiseModel,
    x0: &Vector,
    cfg: &SweepConfig,
    reference: &EnsembleSummary,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.etas.len());
    for &eta in &cfg.etas {
        let (points, n_diverged) = sgd_ensemble(loss, noise, x0, eta, cfg.t_end, &cfg.seeds)?;
        let cmp = if points.is_empty() {
            Comparison {
                mean_dist: f64::NAN,
                cov_fro_dist: f64::NAN,
                sw1: f64::NAN,
            }
        } else {
            compare(&EnsembleSummary::new(points)?, reference)?
        };
        rows.push(SweepRow {
            eta,
            steps: SgdConfig::steps_for_horizon(eta, cfg.t_end).max(1),
            n_seeds: cfg.seeds.len(),
            n_diverged,
            mean_dist: cmp.mean_dist,
            cov_fro_dist: cmp.cov_fro_dist,
            sw1: cmp.sw1,
        });
    }
    Ok(rows)
}

/// Whether `values` never increase, tolerating at most one adjacent
/// increase of no more than `slack` (relative).
pub fn non_increasing_with_slack(values: &[f64], slack: f64) -> bool {
    let mut inversions = 0;
    for w in values.windows(2) {
        if w[1] > w[0] {
            if w[1] > w[0] * (1.0 + slack) {
                return false;
            }
            inversions += 1;
        }
    }
    inversions <= 1
}

pub const SWEEP_CSV_HEADER: &str = "eta,steps,n_seeds,n_diverged,mean_dist,cov_fro_dist,sw1";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:e},{:e},{:e}",
            r.eta, r.steps, r.n_seeds, r.n_diverged, r.mean_dist, r.cov_fro_dist, r.sw1
        )?;
    }
    Ok(())
}

/// Ensemble summary table with columns `eta_or_dt, T, mean_1..mean_D,
/// cov_fro_diff, sw1_dist`, one row per labelled ensemble.
pub fn write_summary_csv<W: Write>(
    rows: &[(f64, f64, &EnsembleSummary, Comparison)],
    mut out: W,
) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.2.dim());
    let mut header = vec!["eta_or_dt".to_string(), "T".to_string()];
    header.extend((1..=dim).map(|i| format!("mean_{i}")));
    header.push("cov_fro_diff".into());
    header.push("sw1_dist".into());
    writeln!(out, "{}", header.join(","))?;
    for (step, t, summary, cmp) in rows {
        let mut cells = vec![step.to_string(), t.to_string()];
        cells.extend(summary.mean.iter().map(|m| format!("{m:e}")));
        cells.push(format!("{:e}", cmp.cov_fro_dist));
        cells.push(format!("{:e}", cmp.sw1));
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_decompose;
    use crate::loss::Quadratic;
    use proptest::prelude::*;
    use rand::Rng;

    fn cloud(n: usize, dim: usize, scale: f64, seed: u64) -> Vec<Vector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector::from_fn(dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    #[test]
    fn identical_ensembles_have_zero_distance() {
        let a = EnsembleSummary::new(cloud(100, 3, 1.0, 0)).unwrap();
        let cmp = compare(&a, &a).unwrap();
        assert_eq!(cmp, Comparison { mean_dist: 0.0, cov_fro_dist: 0.0, sw1: 0.0 });
    }

    #[test]
    fn translation() {
        let pts = cloud(50, 3, 1.0, 1);
        let s = Vector::from_column_slice(&[0.5, -1.0, 2.0]);
        let a = EnsembleSummary::new(pts.clone()).unwrap();
        let b = EnsembleSummary::new(pts.iter().map(|p| p + &s).collect()).unwrap();
        let cmp = compare(&a, &b).unwrap();
        assert!((cmp.mean_dist - s.norm()).abs() < 1e-12);
        assert!(cmp.cov_fro_dist < 1e-12);
        let expected: f64 =
            slice_directions(3, SLICE_SEED).iter().map(|d| d.dot(&s).abs()).sum::<f64>() / N_SLICES as f64;
        assert!((cmp.sw1 - expected).abs() < 1e-10);
    }

    #[test]
    fn gaussian_scale_mixture() {
        // W1(N(0,1), N(0,4)) = E|2Z − Z| = √(2/π) on every slice
        let a = EnsembleSummary::new(cloud(10_000, 2, 1.0, 2)).unwrap();
        let b = EnsembleSummary::new(cloud(10_000, 2, 2.0, 3)).unwrap();
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        let sw1 = compare(&a, &b).unwrap().sw1;
        assert!((sw1 - expected).abs() <= 0.1 * expected, "{sw1}");
    }

    #[test]
    fn dimension_mismatch() {
        let a = EnsembleSummary::new(cloud(3, 2, 1.0, 0)).unwrap();
        let b = EnsembleSummary::new(cloud(3, 3, 1.0, 0)).unwrap();
        assert!(matches!(compare(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn one_dimensional_wasserstein() {
        assert_eq!(wasserstein_1d(&[0.0], &[1.0]), 1.0);
        assert!((wasserstein_1d(&[0.0, 1.0], &[0.5]) - 0.5).abs() < 1e-15);
        assert!((wasserstein_1d(&[0.0, 0.0, 3.0], &[1.0, 1.0, 1.0]) - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn trend_with_one_inversion() {
        assert!(non_increasing_with_slack(&[3.0, 2.0, 1.0], 0.1));
        assert!(non_increasing_with_slack(&[3.0, 2.0, 2.1], 0.1));
        assert!(!non_increasing_with_slack(&[3.0, 2.0, 2.5], 0.1));
        assert!(!non_increasing_with_slack(&[1.0, 1.05, 1.1], 0.1));
    }

    #[test]
    fn single_eta_gives_single_row() {
        let q = Quadratic::valley(2, 1);
        let cfg = SweepConfig {
            t_end: 0.1,
            etas: vec![0.05],
            seeds: (0..4).collect(),
            sde_dt: 1e-2,
            retraction_every: 5,
        };
        let noise = NoiseModel::custom(|_| Matrix::zeros(2, 2));
        let rows = convergence_sweep(&q, &noise, &Vector::from_element(2, 0.0), &cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].steps, 40);
        // zero noise: both ensembles collapse to the start point
        assert!(rows[0].sw1 < 1e-12 && rows[0].mean_dist < 1e-12);
    }

    #[test]
    fn sweep_rejects_ascending_etas() {
        let cfg = SweepConfig {
            t_end: 1.0,
            etas: vec![0.01, 0.02],
            seeds: vec![0],
            sde_dt: 1e-3,
            retraction_every: 20,
        };
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn covariance_is_symmetric_psd(seed in 0u64..1000, n in 2usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vector> = (0..n).map(|_| Vector::from_fn(3, |_, _| rng.random_range(-5.0..5.0))).collect();
            let s = EnsembleSummary::new(pts).unwrap();
            prop_assert!((&s.covariance - s.covariance.transpose()).amax() == 0.0);
            let dec = spectral_decompose(&s.covariance, 0.0).unwrap();
            prop_assert!(dec.eigenvalues.min() >= -1e-10 * dec.eigenvalues.amax().max(1.0));
        }

        #[test]
        fn compare_is_symmetric(seed in 0u64..1000) {
            let a = EnsembleSummary::new(cloud(20, 2, 1.0, seed)).unwrap();
            let b = EnsembleSummary::new(cloud(30, 2, 1.5, seed + 1)).unwrap();
            let ab = compare(&a, &b).unwrap();
            let ba = compare(&b, &a).unwrap();
            prop_assert!((ab.mean_dist - ba.mean_dist).abs() < 1e-14);
            prop_assert!((ab.cov_fro_dist - ba.cov_fro_dist).abs() < 1e-14);
            prop_assert!((ab.sw1 - ba.sw1).abs() < 1e-12);
        }
    }
}
