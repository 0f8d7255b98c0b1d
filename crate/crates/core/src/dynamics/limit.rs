use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::NoiseModel;
use crate::flow::{phi_limit, require_on_manifold, FlowConfig};
use crate::linalg::{psd_sqrt, spectral_decompose, symmetrize};
use crate::loss::motor::rotate;
use crate::phi::{grad_trace_hessian, LocalFrame};
use crate::{Error, Loss, Matrix, MotorProblem, Result, Trajectory, Vector};

/// Default number of SDE or flow steps between retractions onto the
/// manifold.
pub const DEFAULT_RETRACTION_EVERY: usize = 20;

/// The three named pieces of the limiting drift.
#[derive(Debug, Clone)]
pub struct DriftTerms {
    /// `−½(∇²L)†∂²(∇L)[Σ_∥]`.
    pub tangent_compensation: Vector,
    /// `−∂Φ·∂²(∇L)[(∇²L)†Σ_⊥∥]`.
    pub mixed_regularization: Vector,
    /// `−½∂Φ·∂²(∇L)[L⁻¹(Σ_⊥)]`.
    pub normal_regularization: Vector,
}

impl DriftTerms {
    pub fn total(&self) -> Vector {
        &self.tangent_compensation + &self.mixed_regularization + &self.normal_regularization
    }
}

fn drift_terms_in_frame(frame: &LocalFrame, loss: &dyn Loss, x: &Vector, sigma: &Matrix) -> Result<DriftTerms> {
    let split = frame.split(sigma);
    let tangent_compensation = -(&frame.pinv * loss.third_contraction(x, &split.sigma_par)) * 0.5;
    let cross = symmetrize(&(&frame.pinv * &split.sigma_cross));
    let mixed_regularization = -(&frame.projector * loss.third_contraction(x, &cross));
    let lyap = frame.normal_block_lyapunov(&split.sigma_perp, sigma)?;
    let normal_regularization = -(&frame.projector * loss.third_contraction(x, &lyap)) * 0.5;
    Ok(DriftTerms {
        tangent_compensation,
        mixed_regularization,
        normal_regularization,
    })
}

/// Drift of the limiting diffusion at `x` on the manifold, term by term.
pub fn limiting_drift_terms(loss: &dyn Loss, noise: &NoiseModel, x: &Vector) -> Result<DriftTerms> {
    let frame = LocalFrame::on(loss, x)?;
    let sigma = noise.covariance(loss, x)?;
    drift_terms_in_frame(&frame, loss, x, &sigma)
}

/// Drift of the limiting diffusion at `x` on the manifold.
pub fn limiting_drift(loss: &dyn Loss, noise: &NoiseModel, x: &Vector) -> Result<Vector> {
    Ok(limiting_drift_terms(loss, noise, x)?.total())
}

/// `Σ_∥^{1/2}` at `x` on the manifold.
pub fn limiting_diffusion_factor(loss: &dyn Loss, noise: &NoiseModel, x: &Vector) -> Result<Matrix> {
    let frame = LocalFrame::on(loss, x)?;
    let sigma = noise.covariance(loss, x)?;
    tangent_root(&frame, &sigma)
}

fn tangent_root(frame: &LocalFrame, sigma: &Matrix) -> Result<Matrix> {
    let par = symmetrize(&frame.split(sigma).sigma_par);
    Ok(psd_sqrt(&spectral_decompose(&par, 0.0)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub dt: f64,
    /// Horizon in manifold time.
    pub t_end: f64,
    pub retraction_every: usize,
    pub seed: u64,
    /// Record every `record_stride`-th step; 0 keeps only the endpoints.
    pub record_stride: usize,
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::InvalidConfig("horizon must be non-negative".into()));
        }
        if self.retraction_every < 1 {
            return Err(Error::InvalidConfig("retraction_every must be at least 1".into()));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.t_end / self.dt * (1.0 + 1e-12)).floor() as usize
    }
}

fn retraction_config() -> FlowConfig {
    FlowConfig {
        grad_stop: 1e-11,
        ..FlowConfig::default()
    }
}

fn check_state(step: usize, x: &Vector) -> Result<()> {
    let norm = x.norm();
    if norm.is_finite() && norm <= super::DIVERGENCE_NORM {
        Ok(())
    } else {
        Err(Error::Divergence { step, norm })
    }
}

/// Euler–Maruyama integration of the limiting diffusion
/// `dY = drift(Y)dt + Σ_∥^{1/2}(Y)dW`.
///
/// Between retractions the iterate sits slightly off the manifold, so the
/// coefficients are evaluated there with the Hessian rank fixed to the
/// manifold's. Every `retraction_every` steps `Y ← Φ(Y)`; a failed
/// retraction surfaces as an error.
pub fn simulate_limit_sde(loss: &dyn Loss, noise: &NoiseModel, x0: &Vector, cfg: &SdeConfig) -> Result<Trajectory> {
    cfg.validate()?;
    require_on_manifold(loss, x0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = cfg.steps();
    let sqrt_dt = cfg.dt.sqrt();
    let retract = retraction_config();
    let mut traj = Trajectory::new();
    traj.record(loss, 0.0, x0);
    let mut y = x0.clone();
    for k in 1..=steps {
        let frame = LocalFrame::near(loss, &y)?;
        let sigma = noise.covariance(loss, &y)?;
        let drift = drift_terms_in_frame(&frame, loss, &y, &sigma)?.total();
        let root = tangent_root(&frame, &sigma)?;
        let xi = Vector::from_fn(y.len(), |_, _| StandardNormal.sample(&mut rng));
        y += drift * cfg.dt + root * xi * sqrt_dt;
        check_state(k, &y)?;
        if k % cfg.retraction_every == 0 || k == steps {
            y = phi_limit(loss, &y, &retract)?;
        }
        if k == steps || (cfg.record_stride > 0 && k % cfg.record_stride == 0) {
            traj.record(loss, k as f64 * cfg.dt, &y);
        }
    }
    Ok(traj)
}

fn rk4_with_retraction(
    loss: &dyn Loss,
    x0: &Vector,
    t_end: f64,
    dt: f64,
    field: impl Fn(&Vector) -> Result<Vector>,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidConfig("need dt > 0 and T ≥ 0".into()));
    }
    require_on_manifold(loss, x0)?;
    let retract = retraction_config();
    let mut traj = Trajectory::new();
    traj.record(loss, 0.0, x0);
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut k = 0usize;
    while t < t_end * (1.0 - 1e-12) {
        let h = dt.min(t_end - t);
        let k1 = field(&x)?;
        let k2 = field(&(&x + &k1 * (0.5 * h)))?;
        let k3 = field(&(&x + &k2 * (0.5 * h)))?;
        let k4 = field(&(&x + &k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        k += 1;
        t += h;
        check_state(k, &x)?;
        if k.is_multiple_of(DEFAULT_RETRACTION_EVERY) || t >= t_end * (1.0 - 1e-12) {
            x = phi_limit(loss, &x, &retract)?;
        }
        traj.record(loss, t, &x);
    }
    Ok(traj)
}

/// The label-noise limit `dY/dt = −¼∂Φ(Y)∇tr[c∇²L(Y)]`, integrated by RK4
/// with periodic retraction. Every step is recorded.
pub fn label_noise_flow(loss: &dyn Loss, c: f64, x0: &Vector, t_end: f64, dt: f64) -> Result<Trajectory> {
    rk4_with_retraction(loss, x0, t_end, dt, |x| {
        let frame = LocalFrame::near(loss, x)?;
        Ok(&frame.projector * grad_trace_hessian(loss, x) * (-0.25 * c))
    })
}

/// Drift and diffusion of the limit under isotropic noise `Σ = I`.
#[derive(Debug, Clone)]
pub struct IsotropicStep {
    pub drift: Vector,
    pub diffusion: Matrix,
    /// `−½(∇²L)†∂²(∇L)[∂Φ]`.
    pub tangent_compensation: Vector,
    /// `−¼∂Φ·∂²(∇L)[(∇²L)†]`, i.e. `−¼∂Φ∇ln|∇²L|₊`.
    pub normal_regularization: Vector,
}

/// Limit coefficients for isotropic noise at `x` on the manifold.
///
/// With `Σ = I` the normal block is `I − ∂Φ` and
/// `L⁻¹(I − ∂Φ) = ½(∇²L)†`, which gives the factor `¼` on the
/// normal-regularization term.
pub fn isotropic_flow_step(loss: &dyn Loss, x: &Vector) -> Result<IsotropicStep> {
    let frame = LocalFrame::on(loss, x)?;
    let tangent_compensation = -(&frame.pinv * loss.third_contraction(x, &frame.projector)) * 0.5;
    let normal_regularization = -(&frame.projector * loss.third_contraction(x, &frame.pinv)) * 0.25;
    Ok(IsotropicStep {
        drift: &tangent_compensation + &normal_regularization,
        diffusion: frame.projector,
        tangent_compensation,
        normal_regularization,
    })
}

/// Closed-form motor limit: rotate the first two coordinates of `x0` by
/// the angle `t(D−2)/2` and zero the rest.
pub fn motor_analytic(m: &MotorProblem, x0: &Vector, t: f64) -> Vector {
    let speed = (m.dim() as f64 - 2.0) / 2.0;
    let p = rotate([x0[0], x0[1]], speed * t);
    let mut out = Vector::zeros(m.dim());
    out[0] = p[0];
    out[1] = p[1];
    out
}
