//! Loss functions with analytic derivatives up to third order.
//!
//! The third derivative is only ever needed contracted with a symmetric
//! matrix, `∂²(∇L)(x)[A]_i = Σ_jk ∂_i∂_j∂_k L(x) A_jk`, so that is the
//! interface models implement. Since the third-derivative tensor is fully
//! symmetric this equals `∇_x ⟨∇²L(x), A⟩`.

pub(crate) mod motor;
mod olm;

pub use motor::MotorProblem;
pub use olm::{canonical_param, olm_generate, DataDistribution, OlmProblem};

use crate::linalg::spectral_decompose;
use crate::{Matrix, Vector};

/// A `C³` loss on `ℝᴰ` whose minimizers are expected to form a manifold on
/// which the Hessian has rank [`Loss::manifold_rank`].
pub trait Loss: Send + Sync {
    fn dim(&self) -> usize;

    /// Expected rank `M` of the Hessian on the manifold of minimizers.
    fn manifold_rank(&self) -> usize;

    fn value(&self, x: &Vector) -> f64;

    fn gradient(&self, x: &Vector) -> Vector;

    fn hessian(&self, x: &Vector) -> Matrix;

    /// `∂²(∇L)(x)[A]`. Falls back to finite differences of the Hessian.
    fn third_contraction(&self, x: &Vector, a: &Matrix) -> Vector {
        fd_third_contraction(self, x, a, default_fd_step(x))
    }

    /// Per-sample structure for regression losses of the form
    /// `(1/n) Σ ½(fᵢ(x) − yᵢ)²`, used by label-noise SGD.
    fn per_sample(&self) -> Option<&dyn PerSampleLoss> {
        None
    }
}

/// Regression loss `(1/n) Σᵢ ½(fᵢ(x) − yᵢ)²` exposed sample by sample.
pub trait PerSampleLoss: Send + Sync {
    fn n_samples(&self) -> usize;

    /// `fᵢ(x) − yᵢ`.
    fn residual(&self, i: usize, x: &Vector) -> f64;

    /// `∇fᵢ(x)`.
    fn feature_gradient(&self, i: usize, x: &Vector) -> Vector;
}

impl<L: Loss + ?Sized> Loss for &L {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn manifold_rank(&self) -> usize {
        (**self).manifold_rank()
    }
    fn value(&self, x: &Vector) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        (**self).gradient(x)
    }
    fn hessian(&self, x: &Vector) -> Matrix {
        (**self).hessian(x)
    }
    fn third_contraction(&self, x: &Vector, a: &Matrix) -> Vector {
        (**self).third_contraction(x, a)
    }
    fn per_sample(&self) -> Option<&dyn PerSampleLoss> {
        (**self).per_sample()
    }
}

/// `h = 1e−4 · (1 + ‖x‖)`.
pub fn default_fd_step(x: &Vector) -> f64 {
    1e-4 * (1.0 + x.norm())
}

/// Central-difference gradient of `loss.value`.
pub fn fd_gradient<L: Loss + ?Sized>(loss: &L, x: &Vector, h: f64) -> Vector {
    let mut g = Vector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = loss.value(&probe);
        probe[i] = x[i] - h;
        let minus = loss.value(&probe);
        probe[i] = x[i];
        g[i] = (plus - minus) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of `loss.gradient`, symmetrized.
pub fn fd_hessian<L: Loss + ?Sized>(loss: &L, x: &Vector, h: f64) -> Matrix {
    let d = x.len();
    let mut hess = Matrix::zeros(d, d);
    let mut probe = x.clone();
    for j in 0..d {
        probe[j] = x[j] + h;
        let plus = loss.gradient(&probe);
        probe[j] = x[j] - h;
        let minus = loss.gradient(&probe);
        probe[j] = x[j];
        hess.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    crate::linalg::symmetrize(&hess)
}

/// `∂²(∇L)(x)[A]` from central differences of the Hessian.
///
/// With `A = Σ μₖ eₖeₖᵀ`, each rank-one term equals the directional
/// derivative of `∇²L` along `eₖ` applied to `eₖ`, so only `2·rank(A)`
/// Hessian evaluations are needed.
pub fn fd_third_contraction<L: Loss + ?Sized>(loss: &L, x: &Vector, a: &Matrix, h: f64) -> Vector {
    let d = x.len();
    let mut out = Vector::zeros(d);
    let sym = crate::linalg::symmetrize(a);
    let scale = sym.amax();
    if scale == 0.0 {
        return out;
    }
    let dec = spectral_decompose(&sym, 0.0).expect("symmetrized input");
    for k in 0..d {
        let mu = dec.eigenvalues[k];
        if mu.abs() <= 1e-14 * scale {
            continue;
        }
        let e = dec.eigenvectors.column(k).into_owned();
        let plus = loss.hessian(&(x + &e * h));
        let minus = loss.hessian(&(x - &e * h));
        out += ((plus - minus) * &e) * (mu / (2.0 * h));
    }
    out
}

/// `½ (x − c)ᵀ A (x − c)` with a constant PSD matrix `A`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub a: Matrix,
    pub center: Vector,
    rank: usize,
}

impl Quadratic {
    pub fn new(a: Matrix, center: Vector) -> Self {
        let rank = spectral_decompose(&a, crate::linalg::DEFAULT_REL_TOL)
            .map(|d| d.rank)
            .unwrap_or(a.nrows());
        Self { a, center, rank }
    }

    /// `½‖x‖²` on `ℝᴰ`.
    pub fn isotropic(dim: usize) -> Self {
        Self::new(Matrix::identity(dim, dim), Vector::zeros(dim))
    }

    /// `½ Σ_{i ≥ flat} xᵢ²`: a flat valley along the first `flat` axes.
    pub fn valley(dim: usize, flat: usize) -> Self {
        let diag = Vector::from_fn(dim, |i, _| if i < flat { 0.0 } else { 1.0 });
        Self::new(Matrix::from_diagonal(&diag), Vector::zeros(dim))
    }
}

impl Loss for Quadratic {
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn manifold_rank(&self) -> usize {
        self.rank
    }
    fn value(&self, x: &Vector) -> f64 {
        let r = x - &self.center;
        0.5 * r.dot(&(&self.a * &r))
    }
    fn gradient(&self, x: &Vector) -> Vector {
        &self.a * (x - &self.center)
    }
    fn hessian(&self, _x: &Vector) -> Matrix {
        self.a.clone()
    }
    fn third_contraction(&self, x: &Vector, _a: &Matrix) -> Vector {
        Vector::zeros(x.len())
    }
}

/// `c · L(x)`; shares the manifold of minimizers with `L`.
#[derive(Debug, Clone)]
pub struct Scaled<L> {
    pub inner: L,
    pub factor: f64,
}

impl<L: Loss> Loss for Scaled<L> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn manifold_rank(&self) -> usize {
        self.inner.manifold_rank()
    }
    fn value(&self, x: &Vector) -> f64 {
        self.factor * self.inner.value(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.inner.gradient(x) * self.factor
    }
    fn hessian(&self, x: &Vector) -> Matrix {
        self.inner.hessian(x) * self.factor
    }
    fn third_contraction(&self, x: &Vector, a: &Matrix) -> Vector {
        self.inner.third_contraction(x, a) * self.factor
    }
}

/// Wraps a loss and hides its analytic third derivative, forcing the
/// finite-difference fallback.
#[derive(Debug, Clone)]
pub struct WithoutThird<L>(pub L);

impl<L: Loss> Loss for WithoutThird<L> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn manifold_rank(&self) -> usize {
        self.0.manifold_rank()
    }
    fn value(&self, x: &Vector) -> f64 {
        self.0.value(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.0.gradient(x)
    }
    fn hessian(&self, x: &Vector) -> Matrix {
        self.0.hessian(x)
    }
}
