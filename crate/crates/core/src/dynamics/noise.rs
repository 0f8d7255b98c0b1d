use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{psd_sqrt, spectral_decompose, symmetrize};
use crate::{Error, Loss, Matrix, MotorProblem, Result, Vector};

/// Covariance field `x ↦ Σ(x)` of a custom noise model.
pub type CovarianceFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

/// Gradient noise added to SGD steps.
#[derive(Clone)]
pub enum NoiseModel {
    /// Labels perturbed by `±δ` on a per-sample regression loss.
    LabelNoise { delta: f64 },
    /// Standard Gaussian noise, `Σ = I`.
    Isotropic,
    /// Diagonal motor noise (clamped at zero off the circle).
    Motor(MotorProblem),
    /// Gaussian noise with a user supplied covariance.
    Custom(CovarianceFn),
}

impl fmt::Debug for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LabelNoise { delta } => write!(f, "LabelNoise {{ delta: {delta} }}"),
            Self::Isotropic => f.write_str("Isotropic"),
            Self::Motor(m) => write!(f, "Motor({m:?})"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

fn standard_normal(dim: usize, rng: &mut impl Rng) -> Vector {
    Vector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

impl NoiseModel {
    /// Zero-mean Gaussian noise with covariance `Σ`.
    pub fn custom(f: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    /// Covariance of the stochastic gradient at `x`.
    ///
    /// For label noise this is `(1/n) Σᵢ (rᵢ² + δ²) ∇fᵢ∇fᵢᵀ − ∇L∇Lᵀ`, which
    /// reduces to `δ²∇²L` on the manifold.
    pub fn covariance(&self, loss: &dyn Loss, x: &Vector) -> Result<Matrix> {
        let d = loss.dim();
        match self {
            Self::LabelNoise { delta } => {
                let ps = loss
                    .per_sample()
                    .ok_or(Error::UnsupportedNoise("label noise needs a per-sample loss"))?;
                let n = ps.n_samples();
                let mut sigma = Matrix::zeros(d, d);
                if n == 0 {
                    return Ok(sigma);
                }
                for i in 0..n {
                    let r = ps.residual(i, x);
                    let g = ps.feature_gradient(i, x);
                    sigma.ger((r * r + delta * delta) / n as f64, &g, &g, 1.0);
                }
                let grad = loss.gradient(x);
                sigma.ger(-1.0, &grad, &grad, 1.0);
                Ok(symmetrize(&sigma))
            }
            Self::Isotropic => Ok(Matrix::identity(d, d)),
            Self::Motor(m) => {
                check_motor_dim(m, d)?;
                Ok(m.noise_covariance(x))
            }
            Self::Custom(f) => {
                let sigma = f(x);
                if sigma.nrows() != d || sigma.ncols() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: sigma.nrows(),
                    });
                }
                Ok(sigma)
            }
        }
    }

    /// A noise vector `ξ` with `E ξ = 0` and `Cov ξ = Σ(x)`.
    pub fn sample(&self, loss: &dyn Loss, x: &Vector, rng: &mut impl Rng) -> Result<Vector> {
        match self {
            Self::LabelNoise { .. } => Ok(self.stochastic_gradient(loss, x, rng)? - loss.gradient(x)),
            Self::Isotropic => Ok(standard_normal(loss.dim(), rng)),
            Self::Motor(m) => {
                check_motor_dim(m, loss.dim())?;
                let sd = m.noise_variances(x).map(f64::sqrt);
                Ok(sd.component_mul(&standard_normal(loss.dim(), rng)))
            }
            Self::Custom(_) => {
                let sigma = self.covariance(loss, x)?;
                let root = psd_sqrt(&spectral_decompose(&symmetrize(&sigma), 0.0)?);
                Ok(root * standard_normal(loss.dim(), rng))
            }
        }
    }

    /// `∇L(x) + ξ`. Label noise uses the exact per-sample form
    /// `(fᵢ(x) − yᵢ + δₖ)∇fᵢ(x)` with `i` and the sign of `δₖ` uniform.
    pub fn stochastic_gradient(&self, loss: &dyn Loss, x: &Vector, rng: &mut impl Rng) -> Result<Vector> {
        match self {
            Self::LabelNoise { delta } => {
                let ps = loss
                    .per_sample()
                    .ok_or(Error::UnsupportedNoise("label noise needs a per-sample loss"))?;
                let n = ps.n_samples();
                if n == 0 {
                    return Ok(Vector::zeros(loss.dim()));
                }
                let i = rng.random_range(0..n);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Ok(ps.feature_gradient(i, x) * (ps.residual(i, x) + sign * delta))
            }
            _ => Ok(loss.gradient(x) + self.sample(loss, x, rng)?),
        }
    }
}

fn check_motor_dim(m: &MotorProblem, dim: usize) -> Result<()> {
    if m.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: m.dim(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::olm::lift_interior;
    use crate::{olm_generate, DataDistribution};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empirical(noise: &NoiseModel, loss: &dyn Loss, x: &Vector, samples: usize) -> (Vector, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = loss.dim();
        let mut mean = Vector::zeros(d);
        let mut second = Matrix::zeros(d, d);
        for _ in 0..samples {
            let xi = noise.sample(loss, x, &mut rng).unwrap();
            mean += &xi;
            second.ger(1.0, &xi, &xi, 1.0);
        }
        mean /= samples as f64;
        second /= samples as f64;
        (mean.clone(), second - &mean * mean.transpose())
    }

    fn check_moments(noise: &NoiseModel, loss: &dyn Loss, x: &Vector) {
        let samples = 100_000;
        let sigma = noise.covariance(loss, x).unwrap();
        let (mean, cov) = empirical(noise, loss, x, samples);
        assert!(mean.norm() <= 5.0 * (sigma.trace() / samples as f64).sqrt(), "mean {mean}");
        assert!((&cov - &sigma).norm() <= 0.05 * sigma.norm(), "{cov} vs {sigma}");
    }

    #[test]
    fn label_noise_moments_on_manifold() {
        let p = olm_generate(3, 4, 1, DataDistribution::Gaussian, (0.5, 2.0), 3).unwrap();
        let x = lift_interior(&p.w_star, 0.5);
        let noise = NoiseModel::LabelNoise { delta: 0.7 };
        let sigma = noise.covariance(&p, &x).unwrap();
        assert!((&sigma - p.hessian(&x) * 0.49).amax() < 1e-10);
        check_moments(&noise, &p, &x);
    }

    #[test]
    fn motor_and_isotropic_moments() {
        let m = MotorProblem::with_dim(5).unwrap();
        check_moments(&NoiseModel::Motor(m), &m, &m.circle_point(0.4));
        check_moments(&NoiseModel::Isotropic, &m, &m.circle_point(0.4));
    }

    #[test]
    fn custom_noise_moments() {
        let m = MotorProblem::with_dim(5).unwrap();
        let noise = NoiseModel::custom(|x: &Vector| {
            let b = Matrix::from_fn(5, 5, |i, j| ((i + 2 * j) as f64 * 0.3 + x[0]).sin());
            &b * b.transpose()
        });
        check_moments(&noise, &m, &m.circle_point(1.0));
    }

    #[test]
    fn label_noise_requires_per_sample_loss() {
        let m = MotorProblem::with_dim(5).unwrap();
        let noise = NoiseModel::LabelNoise { delta: 1.0 };
        assert!(matches!(
            noise.covariance(&m, &m.circle_point(0.0)),
            Err(Error::UnsupportedNoise(_))
        ));
    }
}
