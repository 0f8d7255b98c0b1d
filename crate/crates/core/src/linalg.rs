//! Spectral linear algebra on small dense symmetric matrices.
//!
//! Everything here goes through one [`SpectralDecomposition`]: the eigenvalues
//! above a relative cutoff define the numerical range of the matrix, the rest
//! its numerical kernel. Pseudo-inverse, kernel projection, Lyapunov inverse
//! and pseudo-log-determinant are all evaluated in that eigenbasis.

use nalgebra::SymmetricEigen;

use crate::{Error, Matrix, Result, Vector};

/// Default relative rank cutoff.
pub const DEFAULT_REL_TOL: f64 = 1e-8;

/// Default relative tolerance for the `W_H` membership test.
pub const DEFAULT_DOMAIN_TOL: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-10;

/// Eigen-decomposition of a symmetric matrix with a rank cutoff.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vector,
    /// Orthonormal eigenvectors, one per column, matching `eigenvalues`.
    pub eigenvectors: Matrix,
    /// Number of eigenvalues with `|λ| > cutoff`.
    pub rank: usize,
    /// Absolute threshold separating range from kernel.
    pub cutoff: f64,
}

/// Maximum entry of `|H - Hᵀ|`.
pub fn max_asymmetry(h: &Matrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..h.nrows() {
        for j in (i + 1)..h.ncols() {
            worst = worst.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    worst
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Decompose a symmetric matrix; `cutoff = rel_tol · max|λ|`.
pub fn spectral_decompose(h: &Matrix, rel_tol: f64) -> Result<SpectralDecomposition> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            got: h.ncols(),
        });
    }
    let scale = h.amax().max(1.0);
    let asymmetry = max_asymmetry(h);
    if asymmetry > SYMMETRY_TOL * scale {
        return Err(Error::Symmetry { asymmetry });
    }
    let eig = SymmetricEigen::new(symmetrize(h));

    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }

    let max_abs = eigenvalues.amax();
    let cutoff = rel_tol.max(0.0) * max_abs;
    let rank = eigenvalues.iter().filter(|l| l.abs() > cutoff).count();
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
        rank,
        cutoff,
    })
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Whether eigenvalue `i` lies above the cutoff.
    pub fn is_active(&self, i: usize) -> bool {
        self.eigenvalues[i].abs() > self.cutoff
    }

    /// Re-cut so that exactly the `rank` largest-magnitude eigenvalues are
    /// active. Used near a manifold whose Hessian rank is known a priori.
    pub fn with_rank(mut self, rank: usize) -> Self {
        let n = self.dim();
        let rank = rank.min(n);
        let mut mags: Vec<f64> = self.eigenvalues.iter().map(|l| l.abs()).collect();
        mags.sort_by(f64::total_cmp);
        self.cutoff = if rank == n {
            0.5 * mags[0]
        } else {
            mags[n - rank - 1]
        };
        self.rank = (0..n).filter(|&i| self.is_active(i)).count();
        self
    }

    /// `V diag(f(λ)) Vᵀ` summed over the indices selected by `keep`.
    fn spectral_map(&self, keep: impl Fn(usize) -> bool, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for k in (0..n).filter(|&k| keep(k)) {
            let v = self.eigenvectors.column(k);
            out.ger(f(self.eigenvalues[k]), &v, &v, 1.0);
        }
        out
    }

    /// Reassemble `V diag(λ) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        self.spectral_map(|_| true, |l| l)
    }

    /// Orthogonal projector onto the numerical range, `A A†`.
    pub fn range_projection(&self) -> Matrix {
        self.spectral_map(|k| self.is_active(k), |_| 1.0)
    }

    /// Largest eigenvalue magnitude.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.amax()
    }

    /// Smallest active eigenvalue, if any.
    pub fn min_active(&self) -> Option<f64> {
        (0..self.dim())
            .filter(|&k| self.is_active(k))
            .map(|k| self.eigenvalues[k])
            .min_by(f64::total_cmp)
    }
}

/// Moore–Penrose pseudo-inverse; sub-cutoff eigenvalues are treated as zero.
pub fn pseudo_inverse(dec: &SpectralDecomposition) -> Matrix {
    dec.spectral_map(|k| dec.is_active(k), |l| 1.0 / l)
}

/// Projector onto the kernel, `I − A A†`, for a positive-semidefinite input.
pub fn kernel_projection(dec: &SpectralDecomposition) -> Result<Matrix> {
    if let Some(&eigenvalue) = dec.eigenvalues.iter().find(|&&l| l < -dec.cutoff) {
        return Err(Error::NotPsd { eigenvalue });
    }
    Ok(dec.spectral_map(|k| !dec.is_active(k), |_| 1.0))
}

/// Symmetric PSD square root; negative eigenvalues are clamped to zero.
pub fn psd_sqrt(dec: &SpectralDecomposition) -> Matrix {
    dec.spectral_map(|_| true, |l| l.max(0.0).sqrt())
}

fn frobenius(a: &Matrix) -> f64 {
    a.norm()
}

/// Inverse of the Lyapunov operator `X ↦ HX + XH` restricted to
/// `W_H = {Σ = Σᵀ : HH†Σ = Σ = ΣHH†}`.
///
/// `domain_tol` is the relative Frobenius tolerance of the membership test.
pub fn lyapunov_inverse(
    dec: &SpectralDecomposition,
    sigma: &Matrix,
    domain_tol: f64,
) -> Result<Matrix> {
    let n = dec.dim();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma.nrows(),
        });
    }
    let scale = frobenius(sigma);
    if max_asymmetry(sigma) > domain_tol * scale.max(f64::MIN_POSITIVE) + SYMMETRY_TOL {
        return Err(Error::Domain("Σ is not symmetric".into()));
    }
    let range = dec.range_projection();
    let left = frobenius(&(&range * sigma - sigma));
    let right = frobenius(&(sigma * &range - sigma));
    if left.max(right) > domain_tol * scale {
        return Err(Error::Domain(format!(
            "Σ has a component outside the range of H (relative residual {:e})",
            left.max(right) / scale
        )));
    }

    let v = &dec.eigenvectors;
    let mut rotated = v.transpose() * sigma * v;
    for i in 0..n {
        for j in 0..n {
            if dec.is_active(i) && dec.is_active(j) {
                let denom = dec.eigenvalues[i] + dec.eigenvalues[j];
                if denom.abs() <= dec.cutoff {
                    return Err(Error::Domain(format!(
                        "λ_{i} + λ_{j} = {denom:e}: Lyapunov operator is singular"
                    )));
                }
                rotated[(i, j)] /= denom;
            } else {
                rotated[(i, j)] = 0.0;
            }
        }
    }
    Ok(symmetrize(&(v * rotated * v.transpose())))
}

/// `Σ ln λᵢ` over the active eigenvalues, i.e. the log pseudo-determinant.
pub fn pseudo_log_det(dec: &SpectralDecomposition) -> Result<f64> {
    let mut acc = 0.0;
    for k in (0..dec.dim()).filter(|&k| dec.is_active(k)) {
        let l = dec.eigenvalues[k];
        if l <= 0.0 {
            return Err(Error::NotPsd { eigenvalue: l });
        }
        acc += l.ln();
    }
    Ok(acc)
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration.
pub fn power_iteration(h: &Matrix, iters: usize) -> f64 {
    let n = h.nrows();
    if n == 0 {
        return 0.0;
    }
    // fixed, non-degenerate start vector
    let mut v = Vector::from_fn(n, |i, _| 1.0 + 0.1 * ((i as f64) * 0.7).sin());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = h * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm;
        v = w / norm;
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn diag(values: &[f64]) -> Matrix {
        Matrix::from_diagonal(&Vector::from_column_slice(values))
    }

    fn random_psd(rng: &mut impl Rng, d: usize, rank: usize) -> Matrix {
        let b = Matrix::from_fn(d, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
        &b * b.transpose()
    }

    #[test]
    fn diagonal_rank_one() {
        let dec = spectral_decompose(&diag(&[2.0, 0.0]), 1e-8).unwrap();
        assert_eq!(dec.eigenvalues.as_slice(), &[0.0, 2.0]);
        assert_eq!(dec.rank, 1);
    }

    #[test]
    fn identity_full_rank() {
        let dec = spectral_decompose(&Matrix::identity(3, 3), 1e-8).unwrap();
        for l in dec.eigenvalues.iter() {
            assert_relative_eq!(*l, 1.0, epsilon = 1e-14);
        }
        assert_eq!(dec.rank, 3);
    }

    #[test]
    fn rank_one_projector() {
        let v = Vector::from_column_slice(&[0.6, 0.8]);
        let dec = spectral_decompose(&(&v * v.transpose()), 1e-8).unwrap();
        assert_relative_eq!(dec.eigenvalues[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(dec.eigenvalues[1], 1.0, epsilon = 1e-14);
        let top = dec.eigenvectors.column(1);
        assert_relative_eq!(top.dot(&v).abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let h = dmatrix![1.0, 2.0; 0.0, 1.0];
        assert!(matches!(spectral_decompose(&h, 1e-8), Err(Error::Symmetry { .. })));
    }

    #[test]
    fn pseudo_inverse_examples() {
        let dec = spectral_decompose(&diag(&[2.0, 0.0]), 1e-8).unwrap();
        assert_relative_eq!(pseudo_inverse(&dec), diag(&[0.5, 0.0]), epsilon = 1e-14);
        let dec = spectral_decompose(&Matrix::identity(3, 3), 1e-8).unwrap();
        assert_relative_eq!(pseudo_inverse(&dec), Matrix::identity(3, 3), epsilon = 1e-14);
        let v = Vector::from_column_slice(&[0.6, 0.8]);
        let p = &v * v.transpose();
        let dec = spectral_decompose(&p, 1e-8).unwrap();
        assert_relative_eq!(pseudo_inverse(&dec), p, epsilon = 1e-14);
    }

    #[test]
    fn kernel_projection_examples() {
        let dec = spectral_decompose(&diag(&[0.0, 3.0]), 1e-8).unwrap();
        assert_relative_eq!(kernel_projection(&dec).unwrap(), diag(&[1.0, 0.0]), epsilon = 1e-14);
        let dec = spectral_decompose(&Matrix::zeros(2, 2), 1e-8).unwrap();
        assert_relative_eq!(kernel_projection(&dec).unwrap(), Matrix::identity(2, 2));
    }

    #[test]
    fn kernel_projection_rejects_indefinite() {
        let dec = spectral_decompose(&diag(&[-1.0, 3.0]), 1e-8).unwrap();
        assert!(matches!(kernel_projection(&dec), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn lyapunov_examples() {
        let dec = spectral_decompose(&diag(&[1.0, 2.0]), 1e-8).unwrap();
        let x = lyapunov_inverse(&dec, &dmatrix![2.0, 3.0; 3.0, 8.0], 1e-8).unwrap();
        assert_relative_eq!(x, dmatrix![1.0, 1.0; 1.0, 2.0], epsilon = 1e-13);

        let dec = spectral_decompose(&diag(&[2.0, 0.0]), 1e-8).unwrap();
        let x = lyapunov_inverse(&dec, &diag(&[4.0, 0.0]), 1e-8).unwrap();
        assert_relative_eq!(x, diag(&[1.0, 0.0]), epsilon = 1e-14);

        let err = lyapunov_inverse(&dec, &diag(&[0.0, 1.0]), 1e-8);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn pseudo_log_det_examples() {
        let dec = spectral_decompose(&diag(&[1.0, 0.0]), 1e-8).unwrap();
        assert_relative_eq!(pseudo_log_det(&dec).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let dec = spectral_decompose(&diag(&[e, 0.0, 2.0]), 1e-8).unwrap();
        assert_relative_eq!(pseudo_log_det(&dec).unwrap(), 1.0 + 2f64.ln(), epsilon = 1e-14);
        let v = Vector::from_column_slice(&[1.0, 2.0, 2.0]) / 3.0;
        let dec = spectral_decompose(&(&v * v.transpose() * 2.0), 1e-8).unwrap();
        assert_relative_eq!(pseudo_log_det(&dec).unwrap(), 2f64.ln(), epsilon = 1e-13);
    }

    #[test]
    fn forced_rank_recuts() {
        let dec = spectral_decompose(&diag(&[1e-6, 1.0, 3.0]), 1e-8).unwrap();
        assert_eq!(dec.rank, 3);
        let dec = dec.with_rank(2);
        assert_eq!(dec.rank, 2);
        assert!(!dec.is_active(0));
        assert_eq!(dec.with_rank(3).rank, 3);
    }

    #[test]
    fn power_iteration_matches_top_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_psd(&mut rng, 6, 4);
        let dec = spectral_decompose(&h, 1e-8).unwrap();
        let est = power_iteration(&h, 200);
        assert_relative_eq!(est, dec.spectral_radius(), max_relative = 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn decomposition_invariants(seed in any::<u64>(), d in 2usize..7, r in 0usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = r.min(d - 1);
            let h = random_psd(&mut rng, d, r);
            let dec = spectral_decompose(&h, 1e-8).unwrap();
            let v = &dec.eigenvectors;
            let gram = v.transpose() * v - Matrix::identity(d, d);
            prop_assert!(gram.amax() < 1e-10);
            let scale = h.norm().max(1e-300);
            prop_assert!((dec.reconstruct() - &h).norm() <= 1e-8 * scale.max(1.0));
            prop_assert_eq!(dec.rank, r);
            for w in dec.eigenvalues.as_slice().windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
        }
    }
}
