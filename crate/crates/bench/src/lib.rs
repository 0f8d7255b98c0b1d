//! Fixtures shared by the benchmarks.

use manifold_sgd::olm::lift_interior;
use manifold_sgd::{olm_generate, DataDistribution, MotorProblem, OlmProblem, Vector};

/// Gaussian OLM instance with a point on its manifold of minimizers.
pub fn olm_on_manifold(n: usize, d: usize, seed: u64) -> (OlmProblem, Vector) {
    let p = olm_generate(n, d, 2.min(d - 1), DataDistribution::Gaussian, (0.5, 2.0), seed)
        .expect("valid instance");
    let x = lift_interior(&p.w_star, 0.5);
    (p, x)
}

/// Motor of dimension `dim` with a circle point.
pub fn motor_on_circle(dim: usize) -> (MotorProblem, Vector) {
    let m = MotorProblem::with_dim(dim).expect("dim ≥ 5");
    let x = m.circle_point(0.7);
    (m, x)
}
