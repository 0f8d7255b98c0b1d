//! Closed-form `∂Φ` and `∂²Φ[Σ]` against finite-difference oracles.

use std::path::Path;

use manifold_sgd::flow::phi_limit;
use manifold_sgd::olm::random_init;
use manifold_sgd::phi::{d2phi_contract, d2phi_fd, dphi, dphi_fd, D2PHI_FD_STEP, DPHI_FD_STEP};
use manifold_sgd::{olm_generate, DataDistribution, FlowConfig, Loss, Matrix, MotorProblem, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{at_least, schema};
use crate::config::{key, Config, Key};
use crate::error::{CliError, CliResult};
use crate::output::Artifacts;

const KEYS: &[Key] = &[
    key("olm_n", "2"),
    key("olm_d", "3"),
    key("olm_kappa", "1"),
    key("motor_dim", "5"),
    key("points", "5"),
    key("tol_first", "1e-4"),
    key("tol_second", "1e-3"),
];

pub fn keys() -> Vec<Key> {
    schema(KEYS, false)
}

struct Check {
    model: &'static str,
    point: usize,
    order: u8,
    error: f64,
    tol: f64,
}

impl Check {
    fn pass(&self) -> bool {
        self.error <= self.tol
    }
}

fn rel(a: f64, b: f64) -> f64 {
    a / b.max(f64::MIN_POSITIVE)
}

fn checks_at(
    model: &'static str,
    point: usize,
    loss: &dyn Loss,
    x: &Vector,
    rng: &mut ChaCha8Rng,
    tols: (f64, f64),
) -> CliResult<[Check; 2]> {
    let closed = dphi(loss, x)?;
    let fd = dphi_fd(loss, x, DPHI_FD_STEP)?;
    let first = rel((&closed - &fd).norm(), fd.norm());
    let d = loss.dim();
    let b = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let sigma = &b * b.transpose();
    let closed = d2phi_contract(loss, x, &sigma)?;
    let fd = d2phi_fd(loss, x, &sigma, D2PHI_FD_STEP)?;
    let second = rel((&closed - &fd).norm(), fd.norm());
    Ok([
        Check {
            model,
            point,
            order: 1,
            error: first,
            tol: tols.0,
        },
        Check {
            model,
            point,
            order: 2,
            error: second,
            tol: tols.1,
        },
    ])
}

pub fn run(cfg: &Config, out: &Path) -> CliResult<()> {
    let seed: u64 = cfg.get("seed")?;
    let points = at_least(cfg, "points", 1)?;
    let tols: (f64, f64) = (cfg.get("tol_first")?, cfg.get("tol_second")?);
    if !(tols.0 >= 0.0 && tols.1 >= 0.0) {
        return Err(CliError::Config("tolerances must be non-negative".into()));
    }
    let olm = olm_generate(
        cfg.get("olm_n")?,
        cfg.get("olm_d")?,
        cfg.get("olm_kappa")?,
        DataDistribution::Gaussian,
        (0.5, 2.0),
        seed,
    )?;
    let motor = MotorProblem::with_dim(cfg.get("motor_dim")?)?;
    let art = Artifacts::new(out, "verify-derivatives", cfg, &[seed])?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for k in 0..points {
        let x0 = random_init(olm.dim(), &mut rng);
        let x = phi_limit(&olm, &x0, &FlowConfig::default())?;
        checks.extend(checks_at("olm", k, &olm, &x, &mut rng, tols)?);
    }
    for k in 0..points {
        let theta = std::f64::consts::TAU * k as f64 / points as f64 + 0.3;
        checks.extend(checks_at("motor", k, &motor, &motor.circle_point(theta), &mut rng, tols)?);
    }

    art.write("derivatives.csv", |w| {
        writeln!(w, "model,point,order,rel_error,tol,pass")?;
        for c in &checks {
            writeln!(w, "{},{},{},{:e},{:e},{}", c.model, c.point, c.order, c.error, c.tol, c.pass())?;
        }
        Ok(())
    })?;
    art.plot(
        "derivatives",
        "set logscale y\nset xlabel 'check'\nset ylabel 'relative error'\nplot 'derivatives.csv' using 0:4 with points pt 7\n",
    )?;

    for order in [1, 2] {
        let worst = checks
            .iter()
            .filter(|c| c.order == order)
            .map(|c| c.error)
            .fold(0.0, f64::max);
        println!("order {order}: max relative error {worst:.3e}");
    }
    match checks.iter().find(|c| !c.pass()) {
        Some(c) => Err(CliError::Check(format!(
            "{} order-{} derivative at point {}: relative error {:.3e} exceeds {:e}",
            c.model, c.order, c.point, c.error, c.tol
        ))),
        None => Ok(()),
    }
}
