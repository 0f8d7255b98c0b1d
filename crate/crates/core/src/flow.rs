//! Gradient flow `dφ/dt = −∇L(φ)` and the projection map
//! `Φ(x) = lim_{t→∞} φ(x, t)`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::linalg::{power_iteration, spectral_decompose, DEFAULT_REL_TOL};
use crate::{Error, Loss, Result, Vector};

/// Allowed loss increase per accepted step before the step is retried.
const MONOTONE_SLACK: f64 = 1e-8;
/// Accepted steps between re-estimates of the stiffness bound.
const STIFFNESS_REFRESH: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Integrator {
    Rk4Fixed { dt: f64 },
    Rk45Adaptive { atol: f64, rtol: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub integrator: Integrator,
    /// Stop once `‖∇L‖ ≤ grad_stop`.
    pub grad_stop: f64,
    pub t_max: f64,
    /// Record every `record_stride`-th accepted step; 0 keeps only endpoints.
    pub record_stride: usize,
    pub max_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            integrator: Integrator::Rk45Adaptive {
                atol: 1e-10,
                rtol: 1e-8,
            },
            grad_stop: 1e-10,
            t_max: 1e6,
            record_stride: 0,
            max_steps: 5_000_000,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_stop > 0.0) {
            return Err(Error::InvalidConfig("grad_stop must be positive".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidConfig("t_max must be positive".into()));
        }
        match self.integrator {
            Integrator::Rk4Fixed { dt } if !(dt > 0.0) => {
                Err(Error::InvalidConfig("dt must be positive".into()))
            }
            Integrator::Rk45Adaptive { atol, rtol } if !(atol > 0.0 && rtol >= 0.0) => {
                Err(Error::InvalidConfig("tolerances must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Fixed-step RK4 configuration whose output is a smooth function of
    /// the starting point, as needed by finite-difference oracles.
    pub fn smooth(loss: &dyn Loss, x0: &Vector, grad_stop: f64) -> Self {
        let lambda = power_iteration(&loss.hessian(x0), 60).max(1e-3);
        Self {
            integrator: Integrator::Rk4Fixed {
                dt: (0.25 / lambda).min(0.05),
            },
            grad_stop,
            ..Self::default()
        }
    }
}

/// Time-stamped states with per-point loss and gradient norm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, x: Vector, loss: f64, grad_norm: f64) {
        self.times.push(t);
        self.states.push(x);
        self.losses.push(loss);
        self.grad_norms.push(grad_norm);
    }

    /// Push evaluating loss and gradient norm.
    pub fn record(&mut self, loss: &dyn Loss, t: f64, x: &Vector) {
        let value = loss.value(x);
        let g = loss.gradient(x).norm();
        self.push(t, x.clone(), value, g);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&Vector> {
        self.states.last()
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Times strictly increasing and every entry finite.
    pub fn is_well_formed(&self) -> bool {
        self.times.windows(2).all(|w| w[0] < w[1])
            && self.times.iter().all(|t| t.is_finite())
            && self.states.iter().all(|x| x.iter().all(|v| v.is_finite()))
            && self.losses.iter().all(|v| v.is_finite())
            && self.grad_norms.iter().all(|v| v.is_finite())
    }

    /// CSV with columns `t, x_1..x_D, loss, grad_norm`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.states.first().map_or(0, |x| x.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=dim).map(|i| format!("x_{i}")));
        header.push("loss".into());
        header.push("grad_norm".into());
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.states[k].iter().map(|v| v.to_string()));
            row.push(self.losses[k].to_string());
            row.push(self.grad_norms[k].to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Outcome of [`on_manifold`].
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldCheck {
    pub on_manifold: bool,
    pub grad_norm: f64,
    pub rank: usize,
    pub expected_rank: usize,
    pub min_active_eigenvalue: Option<f64>,
}

impl fmt::Display for ManifoldCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "|grad| = {:e}, Hessian rank {} (expected {}), smallest active eigenvalue {:?}",
            self.grad_norm, self.rank, self.expected_rank, self.min_active_eigenvalue
        )
    }
}

/// Default gradient tolerance used by manifold-membership preconditions.
pub const DEFAULT_MANIFOLD_GRAD_TOL: f64 = 1e-6;

/// `‖∇L(x)‖ ≤ grad_tol`, numerical rank of `∇²L(x)` equal to the expected
/// manifold rank, and all active eigenvalues positive.
pub fn on_manifold(loss: &dyn Loss, x: &Vector, grad_tol: f64, rank_rel_tol: f64) -> ManifoldCheck {
    let grad_norm = loss.gradient(x).norm();
    let expected_rank = loss.manifold_rank();
    let (rank, min_active) = match spectral_decompose(&loss.hessian(x), rank_rel_tol) {
        Ok(dec) => (dec.rank, dec.min_active()),
        Err(_) => (usize::MAX, None),
    };
    let on_manifold = grad_norm <= grad_tol
        && rank == expected_rank
        && min_active.is_none_or(|l| l > 0.0);
    ManifoldCheck {
        on_manifold,
        grad_norm,
        rank,
        expected_rank,
        min_active_eigenvalue: min_active,
    }
}

/// [`on_manifold`] with default tolerances, as a precondition.
pub fn require_on_manifold(loss: &dyn Loss, x: &Vector) -> Result<()> {
    let check = on_manifold(loss, x, DEFAULT_MANIFOLD_GRAD_TOL, DEFAULT_REL_TOL);
    if check.on_manifold {
        Ok(())
    } else {
        Err(Error::NotOnManifold(check))
    }
}

fn neg_grad(loss: &dyn Loss, x: &Vector) -> Vector {
    -loss.gradient(x)
}

fn rk4_step(loss: &dyn Loss, x: &Vector, h: f64) -> Vector {
    let k1 = neg_grad(loss, x);
    let k2 = neg_grad(loss, &(x + &k1 * (0.5 * h)));
    let k3 = neg_grad(loss, &(x + &k2 * (0.5 * h)));
    let k4 = neg_grad(loss, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

// Dormand–Prince 5(4) tableau.
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand–Prince step; returns the 5th-order solution and the
/// embedded error estimate.
fn dopri_step(loss: &dyn Loss, x: &Vector, h: f64) -> (Vector, Vector) {
    let mut k: Vec<Vector> = Vec::with_capacity(7);
    for row in DP_A.iter() {
        let mut xs = x.clone();
        for (kj, &a) in k.iter().zip(row) {
            if a != 0.0 {
                xs.axpy(h * a, kj, 1.0);
            }
        }
        k.push(neg_grad(loss, &xs));
    }
    let mut x5 = x.clone();
    let mut err = Vector::zeros(x.len());
    for s in 0..7 {
        x5.axpy(h * DP_B5[s], &k[s], 1.0);
        err.axpy(h * (DP_B5[s] - DP_B4[s]), &k[s], 1.0);
    }
    (x5, err)
}

fn stiffness_cap(loss: &dyn Loss, x: &Vector) -> f64 {
    let lambda = power_iteration(&loss.hessian(x), 30);
    if lambda > 0.0 {
        2.0 / lambda
    } else {
        f64::INFINITY
    }
}

/// Integrate gradient flow from `x0` until `‖∇L‖ ≤ grad_stop`.
///
/// Steps that raise the loss by more than `1e−8` are rejected and retried
/// with half the step size. Reaching `t_max` is an error carrying the
/// partial trajectory.
pub fn flow(loss: &dyn Loss, x0: &Vector, cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if x0.len() != loss.dim() {
        return Err(Error::DimensionMismatch {
            expected: loss.dim(),
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: 0, norm: f64::NAN });
    }

    let mut traj = Trajectory::new();
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut value = loss.value(&x);
    let mut grad_norm = loss.gradient(&x).norm();
    traj.push(t, x.clone(), value, grad_norm);
    if grad_norm <= cfg.grad_stop {
        return Ok(traj);
    }

    let mut h_max = stiffness_cap(loss, &x);
    let mut h = match cfg.integrator {
        Integrator::Rk4Fixed { dt } => dt,
        Integrator::Rk45Adaptive { .. } => (0.5 * h_max).min(1.0),
    };
    let mut accepted = 0usize;
    let mut attempts = 0usize;

    while grad_norm > cfg.grad_stop {
        if t >= cfg.t_max || attempts >= cfg.max_steps {
            return Err(Error::NonConverged {
                t,
                grad_norm,
                partial: Box::new(traj),
            });
        }
        attempts += 1;
        let (candidate, step_taken, next_h) = match cfg.integrator {
            Integrator::Rk4Fixed { dt } => {
                let mut step = dt;
                let mut cand = rk4_step(loss, &x, step);
                let mut halvings = 0;
                while loss.value(&cand) > value + MONOTONE_SLACK && halvings < 30 {
                    step *= 0.5;
                    cand = rk4_step(loss, &x, step);
                    halvings += 1;
                }
                (cand, step, dt)
            }
            Integrator::Rk45Adaptive { atol, rtol } => {
                let step = h.min(h_max);
                let (cand, err) = dopri_step(loss, &x, step);
                let mut err_norm = 0.0_f64;
                for i in 0..x.len() {
                    let scale = atol + rtol * x[i].abs().max(cand[i].abs());
                    err_norm = err_norm.max(err[i].abs() / scale);
                }
                if !err_norm.is_finite() {
                    h = step * 0.25;
                    continue;
                }
                let factor = if err_norm == 0.0 {
                    5.0
                } else {
                    (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
                };
                if err_norm > 1.0 {
                    h = step * factor;
                    continue;
                }
                if loss.value(&cand) > value + MONOTONE_SLACK {
                    h = step * 0.5;
                    continue;
                }
                (cand, step, step * factor)
            }
        };
        if candidate.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: accepted,
                norm: candidate.norm(),
            });
        }
        x = candidate;
        t += step_taken;
        h = next_h;
        accepted += 1;
        value = loss.value(&x);
        grad_norm = loss.gradient(&x).norm();
        if cfg.record_stride > 0 && accepted.is_multiple_of(cfg.record_stride) {
            traj.push(t, x.clone(), value, grad_norm);
        }
        if accepted.is_multiple_of(STIFFNESS_REFRESH) {
            h_max = stiffness_cap(loss, &x);
        }
    }
    if traj.final_time() < t {
        traj.push(t, x, value, grad_norm);
    }
    Ok(traj)
}

/// `Φ(x0)`: the end point of gradient flow, checked to lie on the manifold.
pub fn phi_limit(loss: &dyn Loss, x0: &Vector, cfg: &FlowConfig) -> Result<Vector> {
    let cfg = FlowConfig {
        record_stride: 0,
        ..cfg.clone()
    };
    let traj = flow(loss, x0, &cfg)?;
    let x = traj.last_state().cloned().expect("flow records its end point");
    let check = on_manifold(loss, &x, cfg.grad_stop, DEFAULT_REL_TOL);
    if !check.on_manifold {
        return Err(Error::NotOnManifold(check));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{DataDistribution, Quadratic};
    use crate::{olm, Matrix, MotorProblem, OlmProblem};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn quadratic_decays_exponentially() {
        let q = Quadratic::isotropic(2);
        for integrator in [
            Integrator::Rk4Fixed { dt: 1e-2 },
            Integrator::Rk45Adaptive {
                atol: 1e-12,
                rtol: 1e-10,
            },
        ] {
            let cfg = FlowConfig {
                integrator,
                record_stride: 1,
                ..FlowConfig::default()
            };
            let traj = flow(&q, &v(&[1.0, 1.0]), &cfg).unwrap();
            assert!(traj.is_well_formed());
            for (t, x) in traj.times.iter().zip(&traj.states) {
                assert!((x[0] - (-t).exp()).abs() < 1e-6, "t = {t}");
            }
            for w in traj.losses.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn phi_of_quadratic_is_origin() {
        let q = Quadratic::isotropic(3);
        let x = phi_limit(&q, &v(&[1.0, -2.0, 0.5]), &FlowConfig::default()).unwrap();
        assert!(x.norm() < 1e-9);
    }

    #[test]
    fn olm_uv_conserved_and_phi_solves_invariants() {
        // d = n = 1, z = 1, y = 3 from (3, 1): uv = 3 and u² − v² = 3.
        let p = OlmProblem::new(dmatrix![1.0], v(&[3.0]), 0, None).unwrap();
        let cfg = FlowConfig {
            record_stride: 1,
            ..FlowConfig::default()
        };
        let traj = flow(&p, &v(&[3.0, 1.0]), &cfg).unwrap();
        for x in &traj.states {
            assert!((x[0] * x[1] - 3.0).abs() < 1e-8);
        }
        let end = traj.last_state().unwrap();
        let u2 = (3.0 + 3.0 * 5f64.sqrt()) / 2.0;
        assert_relative_eq!(end[0], u2.sqrt(), max_relative = 1e-8);
        assert_relative_eq!(end[1], 3.0 / u2.sqrt(), max_relative = 1e-8);
        assert_relative_eq!(end[0], 2.2032, epsilon = 1e-4);
        assert_relative_eq!(end[1], 1.3616, epsilon = 1e-4);
    }

    #[test]
    fn phi_fixes_manifold_points() {
        let p = OlmProblem::new(dmatrix![1.0], v(&[3.0]), 0, None).unwrap();
        let u2: f64 = (3.0 + 3.0 * 5f64.sqrt()) / 2.0;
        let x0 = v(&[u2.sqrt(), 3.0 / u2.sqrt()]);
        let x = phi_limit(&p, &x0, &FlowConfig::default()).unwrap();
        assert!((x - x0).norm() < 1e-9);
    }

    #[test]
    fn motor_radial_line_converges_to_circle() {
        let m = MotorProblem::with_dim(5).unwrap();
        let mut x0 = Vector::zeros(5);
        x0[0] = 2.0;
        let x = phi_limit(&m, &x0, &FlowConfig::default()).unwrap();
        let mut target = Vector::zeros(5);
        target[0] = 1.0;
        assert!((x - target).norm() < 1e-9);
    }

    #[test]
    fn manifold_checks() {
        let p = crate::olm_generate(2, 4, 1, DataDistribution::Gaussian, (0.5, 2.0), 2).unwrap();
        let x = olm::lift_interior(&p.w_star, 0.5);
        assert!(on_manifold(&p, &x, 1e-8, DEFAULT_REL_TOL).on_manifold);

        let origin = Vector::zeros(p.dim());
        assert!(!on_manifold(&p, &origin, 1e-8, DEFAULT_REL_TOL).on_manifold);

        let m = MotorProblem::with_dim(6).unwrap();
        let check = on_manifold(&m, &m.circle_point(0.4), 1e-12, DEFAULT_REL_TOL);
        assert!(check.on_manifold);
        assert_eq!(check.rank, 5);
    }

    #[test]
    fn phi_is_invariant_along_flow() {
        let p = crate::olm_generate(2, 3, 1, DataDistribution::Gaussian, (0.5, 2.0), 3).unwrap();
        let x0 = v(&[0.9, -1.2, 0.6, 1.1, 0.7, -0.8]);
        let cfg = FlowConfig {
            record_stride: 5,
            ..FlowConfig::default()
        };
        let traj = flow(&p, &x0, &cfg).unwrap();
        let reference = phi_limit(&p, &x0, &cfg).unwrap();
        for x in traj.states.iter().step_by(4) {
            let y = phi_limit(&p, x, &cfg).unwrap();
            assert!((y - &reference).norm() <= 10.0 * cfg.grad_stop * 10.0, "drift along flow");
        }
    }

    #[test]
    fn non_convergence_is_an_error() {
        let q = Quadratic::new(Matrix::identity(2, 2) * 1e-3, Vector::zeros(2));
        let cfg = FlowConfig {
            t_max: 1.0,
            ..FlowConfig::default()
        };
        match flow(&q, &v(&[1.0, 1.0]), &cfg) {
            Err(Error::NonConverged { partial, .. }) => assert!(!partial.is_empty()),
            other => panic!("expected NonConverged, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_csv_layout() {
        let mut t = Trajectory::new();
        t.push(0.0, v(&[1.0, 2.0]), 0.5, 1.5);
        t.push(0.5, v(&[0.5, 1.0]), 0.25, 0.75);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x_1,x_2,loss,grad_norm"));
        assert_eq!(lines.next(), Some("0,1,2,0.5,1.5"));
    }
}
