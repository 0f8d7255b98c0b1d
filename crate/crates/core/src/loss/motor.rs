//! The k-phase motor: a circle of minimizers in the first two coordinates
//! with `k = D − 2` auxiliary dimensions whose curvature depends on the
//! position on the circle.
//!
//! `L(x) = ⅛(‖x₁:₂‖² − 1)² + ½ Σⱼ (2 + ⟨cⱼ, x₁:₂⟩) xⱼ²` where
//! `cⱼ = Q_α^{j−3} v` are `k` unit vectors evenly spaced by `α = 2π/k`.

use super::Loss;
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorProblem {
    dim: usize,
    v_unit: [f64; 2],
    alpha: f64,
}

/// Rotation of a planar vector by `theta`.
pub(crate) fn rotate(p: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl MotorProblem {
    /// `dim ≥ 5` and `v_unit` of unit length within `1e−12`.
    pub fn new(dim: usize, v_unit: [f64; 2]) -> Result<Self> {
        if dim < 5 {
            return Err(Error::InvalidConfig(format!("motor needs D ≥ 5, got {dim}")));
        }
        let norm = v_unit[0].hypot(v_unit[1]);
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("v must be a unit vector (|v| = {norm})")));
        }
        Ok(Self {
            dim,
            v_unit,
            alpha: 2.0 * std::f64::consts::PI / (dim - 2) as f64,
        })
    }

    /// Motor with `v = (1, 0)`.
    pub fn with_dim(dim: usize) -> Result<Self> {
        Self::new(dim, [1.0, 0.0])
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn v_unit(&self) -> [f64; 2] {
        self.v_unit
    }

    /// Direction `cⱼ` attached to auxiliary coordinate `2 + j` (0-based `j`).
    pub fn direction(&self, j: usize) -> [f64; 2] {
        rotate(self.v_unit, self.alpha * j as f64)
    }

    fn aux(&self) -> usize {
        self.dim - 2
    }

    fn planar(x: &Vector) -> [f64; 2] {
        [x[0], x[1]]
    }

    /// Diagonal of the motor noise covariance,
    /// `Σⱼⱼ = (1 + ⟨cⱼ, Q_{−π/2}x₁:₂⟩)(2 + ⟨cⱼ, x₁:₂⟩)` on the auxiliary
    /// coordinates and zero on the first two. Entries are clamped at zero
    /// off the manifold.
    pub fn noise_variances(&self, x: &Vector) -> Vector {
        let p = Self::planar(x);
        let q = rotate(p, -std::f64::consts::FRAC_PI_2);
        let mut out = Vector::zeros(self.dim);
        for j in 0..self.aux() {
            let c = self.direction(j);
            out[2 + j] = ((1.0 + dot(c, q)) * (2.0 + dot(c, p))).max(0.0);
        }
        out
    }

    pub fn noise_covariance(&self, x: &Vector) -> Matrix {
        Matrix::from_diagonal(&self.noise_variances(x))
    }

    /// A point on the circle of minimizers at angle `theta`.
    pub fn circle_point(&self, theta: f64) -> Vector {
        let mut x = Vector::zeros(self.dim);
        x[0] = theta.cos();
        x[1] = theta.sin();
        x
    }
}

impl Loss for MotorProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn manifold_rank(&self) -> usize {
        self.dim - 1
    }

    fn value(&self, x: &Vector) -> f64 {
        let p = Self::planar(x);
        let r2 = dot(p, p);
        let mut acc = 0.125 * (r2 - 1.0).powi(2);
        for j in 0..self.aux() {
            acc += 0.5 * (2.0 + dot(self.direction(j), p)) * x[2 + j] * x[2 + j];
        }
        acc
    }

    fn gradient(&self, x: &Vector) -> Vector {
        let p = Self::planar(x);
        let r2 = dot(p, p);
        let mut g = Vector::zeros(self.dim);
        g[0] = 0.5 * (r2 - 1.0) * p[0];
        g[1] = 0.5 * (r2 - 1.0) * p[1];
        for j in 0..self.aux() {
            let c = self.direction(j);
            let xj = x[2 + j];
            g[0] += 0.5 * c[0] * xj * xj;
            g[1] += 0.5 * c[1] * xj * xj;
            g[2 + j] = (2.0 + dot(c, p)) * xj;
        }
        g
    }

    fn hessian(&self, x: &Vector) -> Matrix {
        let p = Self::planar(x);
        let r2 = dot(p, p);
        let mut h = Matrix::zeros(self.dim, self.dim);
        for a in 0..2 {
            for b in 0..2 {
                h[(a, b)] = p[a] * p[b];
            }
            h[(a, a)] += 0.5 * (r2 - 1.0);
        }
        for j in 0..self.aux() {
            let c = self.direction(j);
            let xj = x[2 + j];
            for a in 0..2 {
                h[(a, 2 + j)] = c[a] * xj;
                h[(2 + j, a)] = c[a] * xj;
            }
            h[(2 + j, 2 + j)] = 2.0 + dot(c, p);
        }
        h
    }

    /// `∇_x ⟨∇²L(x), A⟩`.
    fn third_contraction(&self, x: &Vector, a: &Matrix) -> Vector {
        let p = Self::planar(x);
        let mut out = Vector::zeros(self.dim);
        let trace12 = a[(0, 0)] + a[(1, 1)];
        for k in 0..2 {
            out[k] = trace12 * p[k];
            for b in 0..2 {
                out[k] += (a[(k, b)] + a[(b, k)]) * p[b];
            }
        }
        for j in 0..self.aux() {
            let c = self.direction(j);
            let ajj = a[(2 + j, 2 + j)];
            out[0] += ajj * c[0];
            out[1] += ajj * c[1];
            out[2 + j] = (0..2).map(|k| c[k] * (a[(k, 2 + j)] + a[(2 + j, k)])).sum();
        }
        out
    }
}
