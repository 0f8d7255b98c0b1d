//! SGD endpoint ensembles against the limiting diffusion as `η` shrinks.

use std::path::Path;

use manifold_sgd::diagnostics::{
    compare, limit_ensemble, non_increasing_with_slack, sgd_ensemble, write_summary_csv, write_sweep_csv,
    EnsembleSummary, SweepConfig, SweepRow,
};
use manifold_sgd::dynamics::{NoiseModel, SgdConfig};
use manifold_sgd::flow::phi_limit;
use manifold_sgd::olm::random_init;
use manifold_sgd::{FlowConfig, Loss, MotorProblem, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{at_least, olm_problem, positive, schema, seed_range};
use crate::config::{key, Config, Key};
use crate::error::{CliError, CliResult};
use crate::output::{core_io, Artifacts};

/// One tolerated inversion of at most this relative size.
const TREND_SLACK: f64 = 0.10;

const KEYS: &[Key] = &[
    key("model", "motor"),
    key("dim", "5"),
    key("noise", "auto"),
    key("delta", "1.0"),
    key("etas", "0.02,0.01,0.005"),
    key("seeds", "200"),
    key("t_end", "1.0"),
    key("sde_dt", "1e-3"),
    key("retraction_every", "20"),
];

/// OLM defaults are kept small: every seed runs `T/η²` SGD steps.
pub fn keys() -> Vec<Key> {
    let mut keys = schema(KEYS, true);
    for k in &mut keys {
        k.default = match k.name {
            "n" => "3",
            "d" => "6",
            "kappa" => "2",
            _ => k.default,
        };
    }
    keys
}

fn noise_for(cfg: &Config, motor: Option<MotorProblem>) -> CliResult<NoiseModel> {
    let label = || -> CliResult<NoiseModel> {
        let delta: f64 = cfg.get("delta")?;
        if !(delta >= 0.0) {
            return Err(CliError::Config(format!("delta must be non-negative, got {delta}")));
        }
        Ok(NoiseModel::LabelNoise { delta })
    };
    match (cfg.raw("noise"), motor) {
        ("auto" | "motor", Some(m)) => Ok(NoiseModel::Motor(m)),
        ("auto" | "label", None) => label(),
        ("isotropic", _) => Ok(NoiseModel::Isotropic),
        ("label", Some(_)) | ("motor", None) => Err(CliError::Config(format!(
            "noise {:?} does not apply to model {:?}",
            cfg.raw("noise"),
            cfg.raw("model")
        ))),
        (other, _) => Err(CliError::Config(format!(
            "noise must be auto, motor, label or isotropic, got {other:?}"
        ))),
    }
}

pub fn run(cfg: &Config, out: &Path) -> CliResult<()> {
    let seeds = seed_range(cfg, at_least(cfg, "seeds", 2)?)?;
    let sweep = SweepConfig {
        t_end: positive(cfg, "t_end")?,
        etas: cfg.list("etas")?,
        seeds: seeds.clone(),
        sde_dt: positive(cfg, "sde_dt")?,
        retraction_every: at_least(cfg, "retraction_every", 1)?,
    };
    sweep.validate()?;
    let base: u64 = cfg.get("seed")?;

    let (loss, x0, noise): (Box<dyn Loss>, Vector, NoiseModel) = match cfg.raw("model") {
        "motor" => {
            let m = MotorProblem::with_dim(cfg.get("dim")?)?;
            let noise = noise_for(cfg, Some(m))?;
            (Box::new(m), m.circle_point(0.0), noise)
        }
        "olm" => {
            let p = olm_problem(cfg, base)?;
            let noise = noise_for(cfg, None)?;
            let x_init = random_init(p.dim(), &mut ChaCha8Rng::seed_from_u64(base));
            let x0 = phi_limit(&p, &x_init, &FlowConfig::default())?;
            (Box::new(p), x0, noise)
        }
        other => return Err(CliError::Config(format!("model must be motor or olm, got {other:?}"))),
    };
    let art = Artifacts::new(out, "sgd-vs-limit", cfg, &seeds)?;

    let reference = limit_ensemble(loss.as_ref(), &noise, &x0, &sweep)?;
    let mut rows = Vec::new();
    let mut ensembles: Vec<(f64, EnsembleSummary)> = Vec::new();
    for &eta in &sweep.etas {
        let (points, n_diverged) = sgd_ensemble(loss.as_ref(), &noise, &x0, eta, sweep.t_end, &seeds)?;
        if points.len() < 2 {
            return Err(manifold_sgd::Error::Divergence {
                step: SgdConfig::steps_for_horizon(eta, sweep.t_end),
                norm: f64::INFINITY,
            }
            .into());
        }
        let summary = EnsembleSummary::new(points)?;
        let cmp = compare(&summary, &reference)?;
        rows.push(SweepRow {
            eta,
            steps: SgdConfig::steps_for_horizon(eta, sweep.t_end).max(1),
            n_seeds: seeds.len(),
            n_diverged,
            mean_dist: cmp.mean_dist,
            cov_fro_dist: cmp.cov_fro_dist,
            sw1: cmp.sw1,
        });
        ensembles.push((eta, summary));
    }
    let sw: Vec<f64> = rows.iter().map(|r| r.sw1).collect();
    let trend = non_increasing_with_slack(&sw, TREND_SLACK);

    art.write("sweep.csv", |w| core_io(write_sweep_csv(&rows, &mut *w)))?;
    let self_cmp = compare(&reference, &reference)?;
    let mut table = vec![(sweep.sde_dt, sweep.t_end, &reference, self_cmp)];
    for ((eta, summary), row) in ensembles.iter().zip(&rows) {
        let cmp = manifold_sgd::diagnostics::Comparison {
            mean_dist: row.mean_dist,
            cov_fro_dist: row.cov_fro_dist,
            sw1: row.sw1,
        };
        table.push((*eta, sweep.t_end, summary, cmp));
    }
    art.write("ensemble_summary.csv", |w| core_io(write_summary_csv(&table, &mut *w)))?;
    art.report(
        "sweep_summary.txt",
        &[
            ("model", cfg.raw("model").to_string()),
            ("reference_points", reference.len().to_string()),
            ("sw1_non_increasing", trend.to_string()),
        ],
    )?;
    art.plot(
        "sweep",
        "set logscale xy\nset xlabel 'eta'\nset ylabel 'distance to limit'\nplot 'sweep.csv' using 1:7 with linespoints title 'sliced W1', '' using 1:5 with linespoints title 'mean', '' using 1:6 with linespoints title 'covariance'\n",
    )?;

    for r in &rows {
        println!("eta {}: sliced W1 {:.4e}, mean {:.3e}, cov {:.3e}, diverged {}", r.eta, r.sw1, r.mean_dist, r.cov_fro_dist, r.n_diverged);
    }
    println!("sliced W1 non-increasing in eta: {trend}");
    Ok(())
}
