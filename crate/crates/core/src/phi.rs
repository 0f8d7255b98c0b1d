//! First and second derivatives of the projection map `Φ` on the manifold.
//!
//! On the manifold `∂Φ` is the orthogonal projector onto the kernel of the
//! Hessian, and the second derivative contracted with a symmetric `Σ`
//! splits along the tangent/normal decomposition of `Σ`:
//!
//! ```text
//! ∂²Φ[Σ] = −H†·∂²(∇L)[Σ_∥] − ∂Φ·∂²(∇L)[L_H⁻¹(Σ_⊥)] − 2·∂Φ·∂²(∇L)[H†Σ_⊥∥]
//! ```
//!
//! with `H = ∇²L` and `L_H` the Lyapunov operator. The `*_fd` functions are
//! independent oracles that differentiate [`phi_limit`] numerically.

use rayon::prelude::*;

use crate::flow::{phi_limit, require_on_manifold, FlowConfig};
use crate::linalg::{
    kernel_projection, lyapunov_inverse, pseudo_inverse, spectral_decompose, symmetrize,
    SpectralDecomposition, DEFAULT_REL_TOL,
};
use crate::{Error, Loss, Matrix, Result, Vector};

/// Relative `W_H` membership tolerance for `Σ_⊥`, which is itself built
/// from a numerical projector.
pub const NORMAL_BLOCK_DOMAIN_TOL: f64 = 1e-6;

/// Default step of [`dphi_fd`].
pub const DPHI_FD_STEP: f64 = 1e-4;
/// Default step of [`d2phi_fd`].
pub const D2PHI_FD_STEP: f64 = 1e-3;

/// Tangent/normal blocks of a noise covariance.
#[derive(Debug, Clone)]
pub struct NoiseSplit {
    /// Tangent projector `P = ∂Φ`.
    pub projector: Matrix,
    /// `Σ_∥ = PΣP`.
    pub sigma_par: Matrix,
    /// `Σ_⊥ = (I−P)Σ(I−P)`.
    pub sigma_perp: Matrix,
    /// `Σ_⊥∥ = (I−P)ΣP`.
    pub sigma_cross: Matrix,
}

impl NoiseSplit {
    pub fn new(projector: Matrix, sigma: &Matrix) -> Self {
        let n = projector.nrows();
        let normal = Matrix::identity(n, n) - &projector;
        Self {
            sigma_par: &projector * sigma * &projector,
            sigma_perp: &normal * sigma * &normal,
            sigma_cross: &normal * sigma * &projector,
            projector,
        }
    }

    /// `Σ_∥⊥ = Σ_⊥∥ᵀ`.
    pub fn sigma_par_cross(&self) -> Matrix {
        self.sigma_cross.transpose()
    }

    /// Sum of the four blocks.
    pub fn reconstruct(&self) -> Matrix {
        &self.sigma_par + &self.sigma_perp + &self.sigma_cross + self.sigma_par_cross()
    }
}

/// Hessian data at a point on (or numerically next to) the manifold.
#[derive(Debug, Clone)]
pub struct LocalFrame {
    pub hessian: Matrix,
    pub spectrum: SpectralDecomposition,
    /// `∂Φ`, the projector onto the Hessian kernel.
    pub projector: Matrix,
    /// `(∇²L)†`.
    pub pinv: Matrix,
}

impl LocalFrame {
    /// Build the frame treating the `manifold_rank` largest eigenvalues as
    /// the normal directions. No membership check is performed.
    pub fn near(loss: &dyn Loss, x: &Vector) -> Result<Self> {
        let hessian = loss.hessian(x);
        let spectrum = spectral_decompose(&hessian, DEFAULT_REL_TOL)?.with_rank(loss.manifold_rank());
        let projector = kernel_projection(&spectrum)?;
        let pinv = pseudo_inverse(&spectrum);
        Ok(Self {
            hessian,
            spectrum,
            projector,
            pinv,
        })
    }

    /// Frame at a point verified to lie on the manifold.
    pub fn on(loss: &dyn Loss, x: &Vector) -> Result<Self> {
        require_on_manifold(loss, x)?;
        Self::near(loss, x)
    }

    pub fn split(&self, sigma: &Matrix) -> NoiseSplit {
        NoiseSplit::new(self.projector.clone(), sigma)
    }

    /// `L⁻¹(Σ_⊥)`. A normal block that is round-off relative to `Σ` is
    /// treated as zero rather than tested for `W_H` membership.
    pub fn normal_block_lyapunov(&self, sigma_perp: &Matrix, sigma: &Matrix) -> Result<Matrix> {
        if sigma_perp.norm() <= 1e-12 * sigma.norm() {
            return Ok(Matrix::zeros(sigma.nrows(), sigma.ncols()));
        }
        lyapunov_inverse(&self.spectrum, sigma_perp, NORMAL_BLOCK_DOMAIN_TOL)
    }

    /// The three terms of `∂²Φ[Σ]`.
    pub fn second_order_terms(&self, loss: &dyn Loss, x: &Vector, sigma: &Matrix) -> Result<SecondOrderTerms> {
        let split = self.split(sigma);
        let tangent = -(&self.pinv * loss.third_contraction(x, &split.sigma_par));

        let lyap = self.normal_block_lyapunov(&split.sigma_perp, sigma)?;
        let normal = -(&self.projector * loss.third_contraction(x, &lyap));

        let mixed_arg = symmetrize(&(&self.pinv * &split.sigma_cross));
        let mixed = -(&self.projector * loss.third_contraction(x, &mixed_arg)) * 2.0;
        Ok(SecondOrderTerms {
            tangent,
            normal,
            mixed,
        })
    }
}

/// The three pieces of `∂²Φ[Σ]`, signs included.
#[derive(Debug, Clone)]
pub struct SecondOrderTerms {
    /// `−H†·∂²(∇L)[Σ_∥]`.
    pub tangent: Vector,
    /// `−∂Φ·∂²(∇L)[L_H⁻¹(Σ_⊥)]`.
    pub normal: Vector,
    /// `−2·∂Φ·∂²(∇L)[H†Σ_⊥∥]`.
    pub mixed: Vector,
}

impl SecondOrderTerms {
    pub fn total(&self) -> Vector {
        &self.tangent + &self.normal + &self.mixed
    }
}

/// `∂Φ(x)` for `x` on the manifold.
pub fn dphi(loss: &dyn Loss, x: &Vector) -> Result<Matrix> {
    Ok(LocalFrame::on(loss, x)?.projector)
}

/// Decompose `Σ` into tangent, normal and cross blocks at `x`.
pub fn split_noise(loss: &dyn Loss, x: &Vector, sigma: &Matrix) -> Result<NoiseSplit> {
    check_square(sigma, loss.dim())?;
    Ok(LocalFrame::on(loss, x)?.split(sigma))
}

/// `∂²Φ(x)[Σ]` for `x` on the manifold.
pub fn d2phi_contract(loss: &dyn Loss, x: &Vector, sigma: &Matrix) -> Result<Vector> {
    check_square(sigma, loss.dim())?;
    let frame = LocalFrame::on(loss, x)?;
    Ok(frame.second_order_terms(loss, x, sigma)?.total())
}

/// `∇ tr ∇²L(x) = ∂²(∇L)(x)[I]`.
pub fn grad_trace_hessian(loss: &dyn Loss, x: &Vector) -> Vector {
    let d = loss.dim();
    loss.third_contraction(x, &Matrix::identity(d, d))
}

fn check_square(sigma: &Matrix, dim: usize) -> Result<()> {
    if sigma.nrows() != dim || sigma.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: sigma.nrows(),
        });
    }
    Ok(())
}

fn oracle_config(loss: &dyn Loss, x: &Vector, h: f64) -> FlowConfig {
    FlowConfig::smooth(loss, x, (h * h * h).min(1e-12))
}

/// Central-difference Jacobian of `Φ` at `x`.
pub fn dphi_fd(loss: &dyn Loss, x: &Vector, h: f64) -> Result<Matrix> {
    let d = loss.dim();
    let cfg = oracle_config(loss, x, h);
    let columns: Vec<Vector> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut plus = x.clone();
            plus[j] += h;
            let mut minus = x.clone();
            minus[j] -= h;
            let fp = phi_limit(loss, &plus, &cfg)?;
            let fm = phi_limit(loss, &minus, &cfg)?;
            Ok((fp - fm) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    Ok(Matrix::from_columns(&columns))
}

/// `∂²Φ(x)[Σ]` by finite differences of `Φ`.
///
/// Second directional derivatives are taken along the eigenvectors of `Σ`
/// with non-negligible eigenvalue, each with a central stencil at steps `h`
/// and `h/2` combined by Richardson extrapolation.
pub fn d2phi_fd(loss: &dyn Loss, x: &Vector, sigma: &Matrix, h: f64) -> Result<Vector> {
    let d = loss.dim();
    check_square(sigma, d)?;
    let sym = symmetrize(sigma);
    let scale = sym.amax();
    if scale == 0.0 {
        return Ok(Vector::zeros(d));
    }
    let dec = spectral_decompose(&sym, 0.0)?;
    let cfg = oracle_config(loss, x, h / 2.0);
    let center = phi_limit(loss, x, &cfg)?;
    let directions: Vec<(f64, Vector)> = (0..d)
        .filter(|&k| dec.eigenvalues[k].abs() > 1e-12 * scale)
        .map(|k| (dec.eigenvalues[k], dec.eigenvectors.column(k).into_owned()))
        .collect();

    let second = |e: &Vector, step: f64| -> Result<Vector> {
        let fp = phi_limit(loss, &(x + e * step), &cfg)?;
        let fm = phi_limit(loss, &(x - e * step), &cfg)?;
        Ok((fp - &center * 2.0 + fm) / (step * step))
    };
    let parts: Vec<Vector> = directions
        .par_iter()
        .map(|(mu, e)| {
            let coarse = second(e, h)?;
            let fine = second(e, h / 2.0)?;
            Ok((fine * 4.0 - coarse) / 3.0 * *mu)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(Vector::zeros(d), |acc, p| acc + p))
}
