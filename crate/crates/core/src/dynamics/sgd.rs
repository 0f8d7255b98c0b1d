use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NoiseModel;
use crate::{Error, Loss, Result, Trajectory, Vector};

/// Iterates with `‖x‖` above this count as diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub eta: f64,
    pub steps: usize,
    pub seed: u64,
    /// Record every `record_stride`-th step; 0 keeps only the endpoints.
    pub record_stride: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::InvalidConfig("eta must be positive".into()));
        }
        if self.steps < 1 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Steps needed to reach manifold time `t_end`, `⌊t_end/η²⌋`, with a
    /// relative slack of `1e−12` so that `1/0.1²` counts as 100.
    pub fn steps_for_horizon(eta: f64, t_end: f64) -> usize {
        (t_end / (eta * eta) * (1.0 + 1e-12)).floor() as usize
    }
}

/// `x_{k+1} = x_k − η(∇L(x_k) + ξ_k)`, time-stamped in manifold time
/// `t = kη²`.
pub fn sgd_run(loss: &dyn Loss, noise: &NoiseModel, cfg: &SgdConfig, x0: &Vector) -> Result<Trajectory> {
    cfg.validate()?;
    if x0.len() != loss.dim() {
        return Err(Error::DimensionMismatch {
            expected: loss.dim(),
            got: x0.len(),
        });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence { step: 0, norm: f64::NAN });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tick = cfg.eta * cfg.eta;
    let mut traj = Trajectory::new();
    traj.record(loss, 0.0, x0);
    let mut x = x0.clone();
    for k in 1..=cfg.steps {
        let g = noise.stochastic_gradient(loss, &x, &mut rng)?;
        x.axpy(-cfg.eta, &g, 1.0);
        let norm = x.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence { step: k, norm });
        }
        if k == cfg.steps || (cfg.record_stride > 0 && k % cfg.record_stride == 0) {
            traj.record(loss, k as f64 * tick, &x);
        }
    }
    Ok(traj)
}
