//! Discrete SGD and the limiting dynamics it approaches as `η → 0` on the
//! time scale `t = kη²`.

mod limit;
mod noise;
mod sgd;

pub use limit::{
    isotropic_flow_step, label_noise_flow, limiting_diffusion_factor, limiting_drift, limiting_drift_terms,
    motor_analytic, simulate_limit_sde, DriftTerms, IsotropicStep, SdeConfig, DEFAULT_RETRACTION_EVERY,
};
pub use noise::{CovarianceFn, NoiseModel};
pub use sgd::{sgd_run, SgdConfig, DIVERGENCE_NORM};

use rayon::prelude::*;

use crate::{Result, Vector};

/// Run `f` once per seed in parallel. Results come back in seed order.
pub fn run_ensemble<F>(seeds: &[u64], f: F) -> Vec<Result<Vector>>
where
    F: Fn(u64) -> Result<Vector> + Sync + Send,
{
    seeds.par_iter().map(|&s| f(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_keeps_seed_order() {
        let seeds: Vec<u64> = (0..64).rev().collect();
        let out = run_ensemble(&seeds, |s| Ok(Vector::from_element(1, s as f64)));
        for (s, r) in seeds.iter().zip(out) {
            assert_eq!(r.unwrap()[0], *s as f64);
        }
    }
}
