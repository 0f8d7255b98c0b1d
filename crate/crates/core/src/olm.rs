//! Overparametrized linear model experiments: the implicit regularizer
//! `R`, the Riemannian flow it drives, a weighted-ℓ1 oracle and the
//! kernel-regime baseline.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{sgd_run, NoiseModel, SgdConfig};
use crate::flow::{flow, phi_limit, require_on_manifold, FlowConfig};
use crate::linalg::{pseudo_inverse, spectral_decompose, DEFAULT_REL_TOL};
use crate::{canonical_param, Error, Matrix, OlmProblem, Result, Trajectory, Vector};

/// Stop the Riemannian flow once `‖F‖` drops below this.
pub const F_STOP: f64 = 1e-9;
/// Relative feasibility slack before a Gauss–Newton reprojection.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Gradient tolerance when projecting an SGD endpoint back onto the zero set.
pub const SGD_PROJECTION_GRAD_STOP: f64 = 1e-8;
/// Once the products are gone the iterate still slides along a face of the
/// feasible set at a rate set by the problem, so recovery runs the flow up
/// to this multiple of the horizon.
pub const FLOW_TIME_CAP: f64 = 50.0;
/// Recovery stops once one horizon of flow moves the null-space part of
/// `w` by less than this, relative to `max(1, ‖w*‖∞)`.
pub const W_SETTLE_TOL: f64 = 1e-10;
/// Target product `|uⱼvⱼ|` used to pick the flow horizon.
pub const PRODUCT_TARGET: f64 = 1e-10;

/// `(u, v)` with `u² = [w]₊ + t` and `v² = [−w]₊ + t`: a point of the
/// level set `u⊙u − v⊙v = w` with every coordinate nonzero when `t > 0`.
pub fn lift_interior(w: &Vector, t: f64) -> Vector {
    let u = w.map(|wj| (wj.max(0.0) + t).sqrt());
    let v = w.map(|wj| ((-wj).max(0.0) + t).sqrt());
    OlmProblem::join(&u, &v)
}

/// `R(x) = Σⱼ aⱼ(uⱼ² + vⱼ²)` with `aⱼ = (4/n) Σᵢ zᵢⱼ²`.
pub fn regularizer(p: &OlmProblem, x: &Vector) -> f64 {
    let (u, v) = p.split(x);
    let a = p.coordinate_weights();
    (0..p.d()).map(|j| a[j] * (u[j] * u[j] + v[j] * v[j])).sum()
}

pub fn regularizer_gradient(p: &OlmProblem, x: &Vector) -> Vector {
    let (u, v) = p.split(x);
    let a = p.coordinate_weights() * 2.0;
    OlmProblem::join(&a.component_mul(&u), &a.component_mul(&v))
}

/// Orthonormal basis of the row space of `Z` (`d × rank`).
fn row_space_basis(p: &OlmProblem) -> Matrix {
    let d = p.d();
    if p.n() == 0 {
        return Matrix::zeros(d, 0);
    }
    let dec = spectral_decompose(&(p.z.transpose() * &p.z), DEFAULT_REL_TOL).expect("Gram matrix is symmetric");
    let cols: Vec<Vector> = (0..d)
        .filter(|&k| dec.is_active(k))
        .map(|k| dec.eigenvectors.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        Matrix::zeros(d, 0)
    } else {
        Matrix::from_columns(&cols)
    }
}

/// Constraint geometry at a point: `K = [U B; −V B]` spans the same space
/// as the feature gradients `∇fᵢ`.
struct Constraints {
    basis: Matrix,
}

impl Constraints {
    fn new(p: &OlmProblem) -> Self {
        Self {
            basis: row_space_basis(p),
        }
    }

    fn k(&self, p: &OlmProblem, x: &Vector) -> Matrix {
        let d = p.d();
        let r = self.basis.ncols();
        let (u, v) = p.split(x);
        let mut k = Matrix::zeros(2 * d, r);
        for c in 0..r {
            for j in 0..d {
                k[(j, c)] = u[j] * self.basis[(j, c)];
                k[(d + j, c)] = -v[j] * self.basis[(j, c)];
            }
        }
        k
    }

    /// `(KᵀK)†` through its spectral decomposition.
    fn normal_pinv(k: &Matrix) -> Matrix {
        let ktk = k.transpose() * k;
        spectral_decompose(&crate::linalg::symmetrize(&ktk), 1e-12)
            .map(|dec| pseudo_inverse(&dec))
            .unwrap_or_else(|_| Matrix::zeros(ktk.nrows(), ktk.ncols()))
    }

    /// Remove the component of `g` in the span of `K`.
    fn project_out(&self, p: &OlmProblem, x: &Vector, g: &Vector) -> Vector {
        if self.basis.ncols() == 0 {
            return g.clone();
        }
        let k = self.k(p, x);
        let coeff = Self::normal_pinv(&k) * (k.transpose() * g);
        g - k * coeff
    }

    /// One Gauss–Newton step on `Bᵀ(u⊙u − v⊙v) = Bᵀw_ref`.
    fn reproject(&self, p: &OlmProblem, x: &Vector, w_ref: &Vector) -> Vector {
        if self.basis.ncols() == 0 {
            return x.clone();
        }
        let k = self.k(p, x);
        let r = self.basis.transpose() * (p.weights(x) - w_ref);
        let step = Self::normal_pinv(&k) * r;
        x - k * step * 0.5
    }
}

/// Minimum-norm element of `∇R + span{∇fᵢ}`, i.e. `∇R` with its
/// component along the feature gradients removed.
pub fn lagrangian_f(p: &OlmProblem, x: &Vector) -> Vector {
    Constraints::new(p).project_out(p, x, &regularizer_gradient(p, x))
}

/// Residual `‖Z(u⊙u − v⊙v) − y‖`.
pub fn feasibility_residual(p: &OlmProblem, x: &Vector) -> f64 {
    (&p.z * p.weights(x) - &p.y).norm()
}

/// Per-coordinate products and their decay rates at a feasible point.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub x: Vector,
    /// `uⱼvⱼ`.
    pub products: Vector,
    /// `sⱼ = (4/n) Σᵢ zᵢⱼ²`.
    pub rates: Vector,
}

impl FlowState {
    pub fn new(p: &OlmProblem, x: Vector) -> Result<Self> {
        let residual = feasibility_residual(p, &x);
        if residual > 1e-8 * p.y.norm().max(1e-300) && residual > 1e-14 {
            return Err(Error::Domain(format!("infeasible state, residual {residual:e}")));
        }
        let (u, v) = p.split(&x);
        Ok(Self {
            products: u.component_mul(&v),
            rates: p.coordinate_weights(),
            x,
        })
    }
}

/// Horizon after which every `|uⱼvⱼ|` has decayed to `target`.
pub fn flow_horizon(p: &OlmProblem, x0: &Vector, target: f64) -> f64 {
    let (u, v) = p.split(x0);
    let max_product = u.component_mul(&v).amax();
    let min_rate = p.coordinate_weights().min();
    if max_product <= target || min_rate <= 0.0 {
        return 0.0;
    }
    3.0 / min_rate * (max_product / target).ln()
}

/// RK4 integration of `dx/dt = −¼F(x)` on the feasible set from `x0`.
///
/// Feasibility is restored by a Gauss–Newton step whenever the residual
/// exceeds `1e−7‖y‖`. Every step is recorded.
pub fn riemannian_flow(p: &OlmProblem, x0: &Vector, t_end: f64, dt: f64) -> Result<Trajectory> {
    riemannian_flow_until(p, x0, t_end, dt, |_, _| false)
}

/// [`riemannian_flow`] that also stops as soon as `stop(t, x)` holds after
/// a step.
fn riemannian_flow_until(
    p: &OlmProblem,
    x0: &Vector,
    t_end: f64,
    dt: f64,
    mut stop: impl FnMut(f64, &Vector) -> bool,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidConfig("need dt > 0 and T ≥ 0".into()));
    }
    require_on_manifold(p, x0)?;
    let cons = Constraints::new(p);
    let w_ref = {
        let w0 = p.weights(x0);
        &cons.basis * (cons.basis.transpose() * w0)
    };
    let field = |x: &Vector| cons.project_out(p, x, &regularizer_gradient(p, x)) * -0.25;
    let tol = FEASIBILITY_TOL * p.y.norm().max(1e-300);

    let mut traj = Trajectory::new();
    let mut x = x0.clone();
    let mut t = 0.0;
    traj.record(p, t, &x);
    let mut step = 0usize;
    while t < t_end {
        let h = dt.min(t_end - t);
        let k1 = field(&x);
        if 4.0 * k1.norm() <= F_STOP {
            break;
        }
        let k2 = field(&(&x + &k1 * (0.5 * h)));
        let k3 = field(&(&x + &k2 * (0.5 * h)));
        let k4 = field(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        step += 1;
        if !x.iter().all(|v| v.is_finite()) || x.norm() > 1e8 {
            return Err(Error::Divergence { step, norm: x.norm() });
        }
        if feasibility_residual(p, &x) > tol {
            x = cons.reproject(p, &x, &w_ref);
        }
        t += h;
        traj.record(p, t, &x);
        if stop(t, &x) {
            break;
        }
    }
    Ok(traj)
}

/// Result of the weighted-ℓ1 oracle.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub w: Vector,
    pub objective: f64,
    pub support: Vec<usize>,
    pub certificate: Certificate,
}

/// Dual certificate check for a candidate solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub ok: bool,
    /// `max_{j ∉ S} |(Zᵀλ)ⱼ| / aⱼ`; strictly below one certifies uniqueness.
    pub off_support_ratio: f64,
    /// `‖(Zᵀλ)_S + sign(w_S)⊙a_S‖∞`.
    pub equality_residual: f64,
}

fn weighted_l1(a: &Vector, w: &Vector) -> f64 {
    a.iter().zip(w.iter()).map(|(a, w)| a * w.abs()).sum()
}

/// Least-squares fit `Z_S w_S = y`; `None` when the fit is not exact.
fn fit_support(p: &OlmProblem, support: &[usize]) -> Option<Vector> {
    let zs = p.z.select_columns(support);
    let svd = zs.clone().svd(true, true);
    let ws = svd.solve(&p.y, 1e-12).ok()?;
    let residual = (&zs * &ws - &p.y).norm();
    if residual > 1e-9 * p.y.norm().max(1e-300) {
        return None;
    }
    let mut w = Vector::zeros(p.d());
    for (k, &j) in support.iter().enumerate() {
        w[j] = ws[k];
    }
    Some(w)
}

/// Revised simplex on the split form `w = w⁺ − w⁻ ≥ 0`, warm-started from
/// the largest entries of `start`. Bland's rule keeps degenerate pivots from
/// cycling. Needs `Z` of full row rank; returns `None` otherwise.
fn simplex_refine(p: &OlmProblem, a: &Vector, start: &Vector) -> Option<Vector> {
    let (n, d) = (p.n(), p.d());
    if n > d {
        return None;
    }
    let column = |k: usize| -> Vector {
        let c = p.z.column(k % d).into_owned();
        if k < d {
            c
        } else {
            -c
        }
    };

    // greedy basis: largest |start| first, keep columns that add rank
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| start[j].abs().total_cmp(&start[i].abs()).then(i.cmp(&j)));
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut ortho: Vec<Vector> = Vec::with_capacity(n);
    let col_scale = p.z.norm().max(1e-300);
    for &j in &order {
        if chosen.len() == n {
            break;
        }
        let mut v = p.z.column(j).into_owned();
        for q in &ortho {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        let nv = v.norm();
        if nv > 1e-10 * col_scale {
            ortho.push(v / nv);
            chosen.push(j);
        }
    }
    if chosen.len() < n {
        return None;
    }
    let zs = p.z.select_columns(&chosen);
    let xs = zs.lu().solve(&p.y)?;
    let mut basis: Vec<usize> = chosen.iter().zip(xs.iter()).map(|(&j, &x)| if x < 0.0 { j + d } else { j }).collect();

    let cost = |k: usize| a[k % d];
    let cost_tol = 1e-12 * a.max().max(1e-300);
    for _ in 0..50 * (n + d) {
        let b = Matrix::from_columns(&basis.iter().map(|&k| column(k)).collect::<Vec<_>>());
        let lu = b.clone().lu();
        let x_b = lu.solve(&p.y)?;
        let c_b = Vector::from_iterator(n, basis.iter().map(|&k| cost(k)));
        let lambda = b.transpose().lu().solve(&c_b)?;
        let entering = (0..2 * d).find(|k| !basis.contains(k) && cost(*k) - lambda.dot(&column(*k)) < -cost_tol);
        let Some(k) = entering else {
            // degenerate basic entries are zero up to round-off
            let floor = 1e-12 * x_b.amax();
            let mut support: Vec<usize> = basis
                .iter()
                .zip(x_b.iter())
                .filter(|(_, &x)| x > floor)
                .map(|(&kb, _)| kb % d)
                .collect();
            support.sort_unstable();
            return fit_support(p, &support);
        };
        let u = lu.solve(&column(k))?;
        let mut leave: Option<(f64, usize)> = None;
        for i in 0..n {
            if u[i] > 1e-12 {
                let ratio = x_b[i].max(0.0) / u[i];
                let better = match leave {
                    None => true,
                    Some((r, li)) => ratio < r - 1e-15 || (ratio <= r + 1e-15 && basis[i] < basis[li]),
                };
                if better {
                    leave = Some((ratio, i));
                }
            }
        }
        let (_, i) = leave?;
        basis[i] = k;
    }
    None
}

/// Check optimality of `w` for `min Σ aⱼ|wⱼ|` s.t. `Zw = y`.
///
/// Looks for `t = Zᵀλ` with `t_S = −sign(w_S)⊙a_S` and `|tⱼ| ≤ aⱼ` off the
/// support. `t` must lie in the row space of `Z`; among such vectors the
/// weighted ℓ∞ norm of `t_{Sᶜ}` is minimized by Lawson reweighting.
pub fn dual_certificate(p: &OlmProblem, w: &Vector, support_tol: f64) -> Certificate {
    let d = p.d();
    let a = p.coordinate_weights();
    let scale = w.amax().max(1e-300);
    let support: Vec<usize> = (0..d).filter(|&j| w[j].abs() > support_tol * scale).collect();
    let off: Vec<usize> = (0..d).filter(|j| !support.contains(j)).collect();
    let basis = row_space_basis(p);
    let null = null_space(&basis, d);

    let mut t = Vector::zeros(d);
    for &j in &support {
        t[j] = -w[j].signum() * a[j];
    }
    if !off.is_empty() && null.ncols() > 0 {
        // N_offᵀ t_off = −N_Sᵀ t_S
        let n_off = null.select_rows(&off);
        let n_s = null.select_rows(&support);
        let t_s = Vector::from_iterator(support.len(), support.iter().map(|&j| t[j]));
        let rhs = -(n_s.transpose() * t_s);
        let m = n_off.transpose();
        let a_off = Vector::from_iterator(off.len(), off.iter().map(|&j| a[j]));
        let mut weights = Vector::from_element(off.len(), 1.0);
        let mut best: Option<(f64, Vector)> = None;
        let rhs_scale = rhs.norm().max(a_off.max());
        for _ in 0..300 {
            // minimize Σ cⱼ tⱼ²/aⱼ² subject to M t = rhs
            let floor = weights.max() * 1e-10;
            let inv_w = Vector::from_fn(off.len(), |k, _| a_off[k] * a_off[k] / weights[k].max(floor));
            let mw = Matrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] * inv_w[c]);
            let gram = crate::linalg::symmetrize(&(&mw * m.transpose()));
            let Ok(dec) = spectral_decompose(&gram, 1e-13) else { break };
            let t_off = mw.transpose() * (pseudo_inverse(&dec) * &rhs);
            if (&m * &t_off - &rhs).norm() > 1e-9 * rhs_scale {
                break;
            }
            let ratios = t_off.component_div(&a_off).abs();
            let worst = ratios.max();
            if best.as_ref().is_none_or(|(b, _)| worst < *b) {
                best = Some((worst, t_off.clone()));
            }
            let total: f64 = weights.iter().zip(ratios.iter()).map(|(w, r)| w * r).sum();
            if total <= 0.0 || worst < 1.0 - 1e-3 {
                break;
            }
            weights = Vector::from_fn(off.len(), |k, _| weights[k] * ratios[k] / total);
        }
        if let Some((_, t_off)) = best {
            for (k, &j) in off.iter().enumerate() {
                t[j] = t_off[k];
            }
        }
    }

    let zt = p.z.transpose();
    let lambda = zt.clone().svd(true, true).solve(&t, 1e-12).unwrap_or_else(|_| Vector::zeros(p.n()));
    let fitted = zt * lambda;
    let equality_residual = support
        .iter()
        .map(|&j| (fitted[j] + w[j].signum() * a[j]).abs() / a[j])
        .fold(0.0, f64::max);
    let off_support_ratio = off.iter().map(|&j| fitted[j].abs() / a[j]).fold(0.0, f64::max);
    Certificate {
        ok: equality_residual <= 1e-8 && off_support_ratio <= 1.0 + 1e-8,
        off_support_ratio,
        equality_residual,
    }
}

/// Orthonormal complement of the columns of `basis` in `ℝᵈ`.
fn null_space(basis: &Matrix, d: usize) -> Matrix {
    let projector = Matrix::identity(d, d) - basis * basis.transpose();
    let dec = spectral_decompose(&crate::linalg::symmetrize(&projector), DEFAULT_REL_TOL).expect("symmetric");
    let cols: Vec<Vector> = (0..d)
        .filter(|&k| dec.eigenvalues[k] > 0.5)
        .map(|k| dec.eigenvectors.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        Matrix::zeros(d, 0)
    } else {
        Matrix::from_columns(&cols)
    }
}

/// Weighted-ℓ1 minimization `min Σ aⱼ|wⱼ|` subject to `Zw = y`.
///
/// Projected subgradient descent on the affine feasible set, then every
/// support made of the `k` largest entries of the best iterate is refit
/// by least squares and the best feasible refit kept. `tol` is the
/// relative objective improvement below which the descent stops early.
pub fn convex_oracle(p: &OlmProblem, max_iter: usize, tol: f64) -> Result<OracleSolution> {
    let d = p.d();
    let a = p.coordinate_weights();
    let basis = row_space_basis(p);
    if basis.ncols() < p.n().min(d) {
        return Err(Error::DegenerateData {
            rank: basis.ncols(),
            expected: p.n().min(d),
        });
    }
    let w0 = {
        let svd = p.z.clone().svd(true, true);
        svd.solve(&p.y, 1e-12).map_err(|e| Error::Domain(e.to_string()))?
    };
    let null_proj = Matrix::identity(d, d) - &basis * basis.transpose();

    let mut w = w0.clone();
    let mut best = w.clone();
    let mut best_obj = weighted_l1(&a, &w);
    let step0 = w0.amax().max(1e-3) / a.max().max(1e-300);
    let mut last_check = best_obj;
    for k in 0..max_iter {
        let g = &null_proj * a.component_mul(&w.map(f64::signum));
        let gn = g.norm();
        if gn == 0.0 {
            break;
        }
        w -= g * (step0 / ((k + 1) as f64).sqrt() / gn * a.norm());
        // re-center on the affine set to stop round-off creep
        w = &null_proj * &w + &basis * (basis.transpose() * &w0);
        let obj = weighted_l1(&a, &w);
        if obj < best_obj {
            best_obj = obj;
            best = w.clone();
        }
        if (k + 1) % 2000 == 0 {
            if last_check - best_obj <= tol * best_obj.max(1e-300) {
                break;
            }
            last_check = best_obj;
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| best[j].abs().total_cmp(&best[i].abs()).then(i.cmp(&j)));
    let max_support = basis.ncols().max(1);
    let mut polished: Option<(f64, Vector)> = None;
    for k in 1..=max_support.min(d) {
        let mut support = order[..k].to_vec();
        support.sort_unstable();
        if let Some(candidate) = fit_support(p, &support) {
            let obj = weighted_l1(&a, &candidate);
            if polished.as_ref().is_none_or(|(o, _)| obj < o * (1.0 - 1e-12)) {
                polished = Some((obj, candidate));
            }
        }
    }
    // the descent iterate only wins when it is clearly better
    let mut chosen = match polished {
        Some((obj, w)) if obj <= best_obj * (1.0 + 1e-6) => (obj, w),
        _ => (best_obj, best),
    };
    if let Some(vertex) = simplex_refine(p, &a, &chosen.1) {
        let obj = weighted_l1(&a, &vertex);
        if (&p.z * &vertex - &p.y).norm() <= 1e-9 * p.y.norm().max(1e-300) && obj <= chosen.0 * (1.0 + 1e-12) {
            chosen = (obj, vertex);
        }
    }
    let (objective, w) = chosen;
    let scale = w.amax().max(1e-300);
    let support = (0..d).filter(|&j| w[j].abs() > 1e-9 * scale).collect();
    let certificate = dual_certificate(p, &w, 1e-9);
    Ok(OracleSolution {
        w,
        objective,
        support,
        certificate,
    })
}

/// How the OLM is trained in [`run_recovery`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum RecoveryMode {
    /// Gradient flow to the manifold, then the Riemannian flow.
    Flow { dt: f64 },
    /// Label-noise SGD with `δ = 1` for `⌊T/η²⌋` steps.
    Sgd { eta: f64 },
}

impl RecoveryMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Flow { .. } => "flow",
            Self::Sgd { .. } => "sgd",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub kappa: usize,
    pub dist: String,
    pub mode: String,
    pub x_final: Vec<f64>,
    pub w_final: Vec<f64>,
    /// `‖w_final − w*‖∞`.
    pub linf_error: f64,
    /// `‖w_final − ŵ‖∞` against the oracle.
    pub oracle_error: f64,
    pub r_final: f64,
    pub r_groundtruth: f64,
    pub oracle_agreement: bool,
    pub recovered: bool,
    pub dual_certificate_ok: bool,
    /// Set when the certificate fails: the oracle answer is unverified.
    pub certificate_warning: Option<String>,
    /// Manifold time covered by the run.
    pub horizon: f64,
    pub wallclock_secs: f64,
}

impl RecoveryReport {
    pub const CSV_HEADER: &'static str =
        "seed,n,d,kappa,dist,mode,linf_error,oracle_error,r_final,r_groundtruth,oracle_agreement,recovered,dual_certificate_ok,horizon";

    /// One results-table row; wallclock is left out to keep tables
    /// reproducible.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:e},{:e},{:e},{:e},{},{},{},{}",
            self.seed,
            self.n,
            self.d,
            self.kappa,
            self.dist,
            self.mode,
            self.linf_error,
            self.oracle_error,
            self.r_final,
            self.r_groundtruth,
            self.oracle_agreement,
            self.recovered,
            self.dual_certificate_ok,
            self.horizon
        )
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(|e| Error::Io(e.into()))
    }
}

/// Random start with every coordinate in `±[0.5, 1.5]`.
pub fn random_init(dim: usize, rng: &mut impl Rng) -> Vector {
    Vector::from_fn(dim, |_, _| {
        let m: f64 = rng.random_range(0.5..1.5);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Train from a random interior start and compare against the oracle and
/// the groundtruth. Both comparisons use the `ℓ∞` threshold `eps`.
///
/// In SGD mode the reported point is `Φ` of the last iterate: the raw
/// iterate carries normal fluctuations of order `√η` that the limit
/// discards.
pub fn run_recovery(p: &OlmProblem, mode: RecoveryMode, eps: f64, init_seed: u64) -> Result<RecoveryReport> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let x_init = random_init(2 * p.d(), &mut rng);
    let x_gamma = phi_limit(p, &x_init, &FlowConfig::default())?;
    let horizon = flow_horizon(p, &x_gamma, PRODUCT_TARGET);
    let mut flow_time = horizon;

    let x_final = match mode {
        RecoveryMode::Flow { dt } => {
            // Off-support coordinates keep F above F_STOP long after w has
            // settled, so also stop once a horizon of flow leaves w in place.
            // Only the null-space part of w can slide; the rest is
            // reprojection jitter.
            let basis = Constraints::new(p).basis;
            let slide = |w: Vector| &w - &basis * (basis.transpose() * &w);
            let settle = W_SETTLE_TOL * p.w_star.amax().max(1.0);
            let mut checkpoint = (horizon, slide(p.weights(&x_gamma)));
            let traj = riemannian_flow_until(p, &x_gamma, horizon * FLOW_TIME_CAP, dt, |t, x| {
                if t < checkpoint.0 {
                    return false;
                }
                let w = slide(p.weights(x));
                let moved = (&w - &checkpoint.1).amax();
                checkpoint = (t + horizon, w);
                moved <= settle
            })?;
            flow_time = traj.final_time();
            traj.last_state().cloned().expect("trajectory has a start point")
        }
        RecoveryMode::Sgd { eta } => {
            let steps = SgdConfig::steps_for_horizon(eta, horizon).max(1);
            let cfg = SgdConfig {
                eta,
                steps,
                seed: rng.random(),
                record_stride: 0,
            };
            let traj = sgd_run(p, &NoiseModel::LabelNoise { delta: 1.0 }, &cfg, &x_gamma)?;
            let end = traj.last_state().expect("trajectory has a start point");
            // Near the boundary the Hessian rank drops and convergence turns
            // sublinear, so skip the manifold check and stop a little early.
            let cfg = FlowConfig {
                grad_stop: SGD_PROJECTION_GRAD_STOP,
                ..FlowConfig::default()
            };
            flow(p, end, &cfg)?
                .last_state()
                .cloned()
                .expect("flow records its end point")
        }
    };

    let oracle = convex_oracle(p, 20_000, 1e-10)?;
    let w_final = p.weights(&x_final);
    let linf_error = (&w_final - &p.w_star).amax();
    let oracle_error = (&w_final - &oracle.w).amax();
    let certificate_warning = (!oracle.certificate.ok).then(|| {
        format!(
            "dual certificate failed (off-support ratio {:.4}, equality residual {:.2e})",
            oracle.certificate.off_support_ratio, oracle.certificate.equality_residual
        )
    });
    Ok(RecoveryReport {
        seed: p.seed,
        n: p.n(),
        d: p.d(),
        kappa: p.kappa,
        dist: p.dist.map_or_else(|| "file".to_string(), |d| d.to_string()),
        mode: mode.name().into(),
        x_final: x_final.iter().copied().collect(),
        w_final: w_final.iter().copied().collect(),
        linf_error,
        oracle_error,
        r_final: regularizer(p, &x_final),
        r_groundtruth: regularizer(p, &canonical_param(&p.w_star)),
        oracle_agreement: oracle_error <= eps,
        recovered: linf_error <= eps,
        dual_certificate_ok: oracle.certificate.ok,
        certificate_warning,
        horizon: flow_time,
        wallclock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Per-trial and mean test loss of the kernel-regime predictor.
#[derive(Debug, Clone)]
pub struct KernelBaseline {
    pub trials: Vec<f64>,
    pub mean: f64,
    pub radius: f64,
}

/// Kernel-regime test loss `‖(I − P_Z)w‖²` for `w` uniform on the sphere
/// of the given radius, `trials` times. `z` may have zero rows.
pub fn kernel_baseline_from_data(z: &Matrix, radius: f64, trials: usize, seed: u64) -> KernelBaseline {
    let d = z.ncols();
    let projector = if z.nrows() == 0 {
        Matrix::zeros(d, d)
    } else {
        let zzt = z * z.transpose();
        let dec = spectral_decompose(&crate::linalg::symmetrize(&zzt), DEFAULT_REL_TOL).expect("symmetric");
        z.transpose() * pseudo_inverse(&dec) * z
    };
    let residual_map = Matrix::identity(d, d) - projector;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let losses: Vec<f64> = (0..trials)
        .map(|_| {
            let g = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = &g * (radius / g.norm());
            (&residual_map * w).norm_squared()
        })
        .collect();
    let mean = if trials == 0 {
        0.0
    } else {
        losses.iter().sum::<f64>() / trials as f64
    };
    KernelBaseline {
        trials: losses,
        mean,
        radius,
    }
}

/// [`kernel_baseline_from_data`] with the problem's data and `‖w*‖`.
pub fn gd_kernel_baseline(p: &OlmProblem, trials: usize, seed: u64) -> Result<KernelBaseline> {
    if p.n() > p.d() {
        return Err(Error::InvalidConfig(format!("kernel baseline needs n ≤ d (n={}, d={})", p.n(), p.d())));
    }
    Ok(kernel_baseline_from_data(&p.z, p.w_star.norm(), trials, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{olm_generate, DataDistribution, Loss};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn gaussian(n: usize, d: usize, kappa: usize, seed: u64) -> OlmProblem {
        olm_generate(n, d, kappa, DataDistribution::Gaussian, (0.5, 2.0), seed).unwrap()
    }

    #[test]
    fn regularizer_examples() {
        let p = olm_generate(4, 6, 2, DataDistribution::Boolean, (0.5, 2.0), 1).unwrap();
        let x = random_init(12, &mut ChaCha8Rng::seed_from_u64(0));
        let (u, vv) = p.split(&x);
        assert_relative_eq!(regularizer(&p, &x), 4.0 * (u.norm_squared() + vv.norm_squared()), max_relative = 1e-12);
        assert_eq!(regularizer(&p, &Vector::zeros(12)), 0.0);

        let q = gaussian(3, 5, 2, 3);
        let w = v(&[1.0, -2.0, 0.0, 0.5, -0.1]);
        let expected = weighted_l1(&q.coordinate_weights(), &w);
        assert_relative_eq!(regularizer(&q, &canonical_param(&w)), expected, max_relative = 1e-12);
    }

    #[test]
    fn regularizer_equals_trace_of_hessian_on_manifold() {
        let p = gaussian(3, 5, 2, 9);
        let x = lift_interior(&p.w_star, 0.7);
        assert_relative_eq!(regularizer(&p, &x), p.hessian(&x).trace(), max_relative = 1e-12);
    }

    #[test]
    fn f_is_orthogonal_to_feature_gradients() {
        use crate::PerSampleLoss;
        for seed in 0..5 {
            let p = gaussian(4, 7, 2, seed);
            let x = random_init(14, &mut ChaCha8Rng::seed_from_u64(seed + 100));
            let f = lagrangian_f(&p, &x);
            for i in 0..p.n() {
                let g = p.feature_gradient(i, &x);
                assert!(f.dot(&g).abs() <= 1e-8 * f.norm().max(1.0) * g.norm());
            }
        }
    }

    #[test]
    fn f_without_constraints_is_grad_r() {
        let z = Matrix::zeros(0, 3);
        let p = OlmProblem::new(z, v(&[0.0, 0.0, 0.0]), 0, None).unwrap();
        let x = v(&[1.0, 2.0, 3.0, -1.0, 0.5, 0.2]);
        assert_eq!(lagrangian_f(&p, &x), regularizer_gradient(&p, &x));
    }

    #[test]
    fn oracle_matches_vertex_enumeration() {
        // an optimal vertex has at most n nonzeros; try every such support
        for seed in 0..6 {
            let p = gaussian(3, 7, 1, seed);
            let a = p.coordinate_weights();
            let mut best = f64::INFINITY;
            for i in 0..7 {
                for j in i + 1..7 {
                    for k in j + 1..7 {
                        if let Some(w) = fit_support(&p, &[i, j, k]) {
                            best = best.min(weighted_l1(&a, &w));
                        }
                    }
                }
            }
            let sol = convex_oracle(&p, 20_000, 1e-10).unwrap();
            assert!(sol.certificate.ok, "seed {seed}");
            assert!((sol.objective - best).abs() <= 1e-9 * best, "seed {seed}: {} vs {best}", sol.objective);
        }
    }

    #[test]
    fn f_vanishes_at_certified_optimum() {
        let p = gaussian(5, 8, 1, 21);
        let oracle = convex_oracle(&p, 20_000, 1e-10).unwrap();
        assert!(oracle.certificate.ok);
        let x = canonical_param(&oracle.w);
        let grad_r = regularizer_gradient(&p, &x);
        assert!(lagrangian_f(&p, &x).norm() <= 1e-8 * grad_r.norm());
    }

    #[test]
    fn single_sample_flow_reaches_canonical_point() {
        let p = OlmProblem::new(dmatrix![1.0], v(&[3.0]), 0, None).unwrap();
        let x0 = v(&[2.2032, 1.3616]);
        let x0 = phi_limit(&p, &x0, &FlowConfig::default()).unwrap();
        let traj = riemannian_flow(&p, &x0, 40.0, 0.05).unwrap();
        let end = traj.last_state().unwrap();
        assert!((end - v(&[3f64.sqrt(), 0.0])).amax() < 1e-6, "{end}");
    }

    #[test]
    fn products_decay_at_their_rates() {
        let p = gaussian(3, 6, 2, 4);
        let x0 = phi_limit(&p, &random_init(12, &mut ChaCha8Rng::seed_from_u64(8)), &FlowConfig::default()).unwrap();
        let state = FlowState::new(&p, x0.clone()).unwrap();
        let t_end = 3.0 / state.rates.min();
        let traj = riemannian_flow(&p, &x0, t_end, 0.01).unwrap();
        for j in 0..p.d() {
            let s = state.rates[j];
            let k = traj.times.iter().position(|&t| t >= 3.0 / s).unwrap();
            let (u, vv) = p.split(&traj.states[k]);
            let slope = ((u[j] * vv[j]).abs().ln() - state.products[j].abs().ln()) / traj.times[k];
            assert!((slope + s).abs() <= 0.01 * s, "coordinate {j}: {slope} vs {}", -s);
        }
    }

    #[test]
    fn regularizer_decreases_and_feasibility_holds() {
        let p = gaussian(3, 6, 2, 5);
        let x0 = phi_limit(&p, &random_init(12, &mut ChaCha8Rng::seed_from_u64(2)), &FlowConfig::default()).unwrap();
        let traj = riemannian_flow(&p, &x0, 10.0, 0.05).unwrap();
        let mut last = f64::INFINITY;
        for x in &traj.states {
            let r = regularizer(&p, x);
            assert!(r < last || lagrangian_f(&p, x).norm() <= 1e-8);
            last = r;
            assert!(feasibility_residual(&p, x) <= 1e-7 * p.y.norm());
        }
    }

    #[test]
    fn oracle_identity_data() {
        let w = v(&[1.0, -2.0, 0.0, 3.0]);
        let p = OlmProblem::new(Matrix::identity(4, 4), w.clone(), 0, None).unwrap();
        let sol = convex_oracle(&p, 1000, 1e-10).unwrap();
        assert!((sol.w - w).amax() < 1e-10);
    }

    #[test]
    fn oracle_two_vertex_line() {
        let z = dmatrix![2.0, 1.0];
        // y = 10 from w* = (5, 0); weights a = (16, 4)
        let p = OlmProblem::new(z, v(&[5.0, 0.0]), 0, None).unwrap();
        assert_relative_eq!(p.coordinate_weights(), v(&[16.0, 4.0]));
        let sol = convex_oracle(&p, 5000, 1e-12).unwrap();
        assert!((sol.w - v(&[0.0, 10.0])).amax() < 1e-9);
        assert!(sol.certificate.ok);
    }

    #[test]
    fn certificate_rejects_suboptimal_point() {
        let p = OlmProblem::new(dmatrix![2.0, 1.0], v(&[5.0, 0.0]), 0, None).unwrap();
        let cert = dual_certificate(&p, &v(&[5.0, 0.0]), 1e-9);
        assert!(!cert.ok);
        assert!(cert.off_support_ratio > 1.0);
    }

    #[test]
    fn oracle_recovers_sparse_groundtruth() {
        let p = gaussian(20, 30, 2, 17);
        let sol = convex_oracle(&p, 20_000, 1e-10).unwrap();
        assert!(sol.certificate.ok);
        assert!((sol.w - &p.w_star).amax() < 1e-8);
    }

    #[test]
    fn recovery_in_flow_mode() {
        let p = gaussian(12, 16, 2, 3);
        let report = run_recovery(&p, RecoveryMode::Flow { dt: 0.05 }, 1e-3, 11).unwrap();
        assert!(report.dual_certificate_ok);
        assert!(report.recovered && report.oracle_agreement, "{report:?}");
        assert!(report.r_final >= 0.0 && report.linf_error >= 0.0);
        let mut json = Vec::new();
        report.write_json(&mut json).unwrap();
        let back: RecoveryReport = serde_json::from_slice(&json).unwrap();
        assert_eq!(back.csv_row(), report.csv_row());
    }

    #[test]
    fn recovery_in_sgd_mode_tracks_flow() {
        let p = gaussian(6, 8, 1, 2);
        let flow_report = run_recovery(&p, RecoveryMode::Flow { dt: 0.05 }, 0.05, 5).unwrap();
        let sgd_report = run_recovery(&p, RecoveryMode::Sgd { eta: 0.01 }, 0.05, 5).unwrap();
        let gap = flow_report
            .w_final
            .iter()
            .zip(&sgd_report.w_final)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap <= 0.05, "gap {gap}");
    }

    #[test]
    fn undersampled_regime_is_reported() {
        let p = gaussian(1, 6, 5, 0);
        let report = run_recovery(&p, RecoveryMode::Flow { dt: 0.05 }, 1e-3, 0).unwrap();
        assert!(!report.recovered);
    }

    #[test]
    fn uv_products_conserved_by_gradient_flow() {
        let p = gaussian(3, 5, 2, 6);
        let x0 = random_init(10, &mut ChaCha8Rng::seed_from_u64(1));
        let cfg = FlowConfig {
            record_stride: 1,
            ..FlowConfig::default()
        };
        let traj = flow(&p, &x0, &cfg).unwrap();
        let (u0, v0) = p.split(&x0);
        let p0 = u0.component_mul(&v0);
        for x in &traj.states {
            let (u, vv) = p.split(x);
            assert!((u.component_mul(&vv) - &p0).amax() <= 1e-6 * p0.amax());
            for j in 0..5 {
                assert_eq!(u[j].signum(), u0[j].signum());
            }
        }
    }

    #[test]
    fn kernel_baseline_examples() {
        let full = gaussian(5, 5, 2, 1);
        assert!(gd_kernel_baseline(&full, 20, 0).unwrap().mean < 1e-20);

        let empty = kernel_baseline_from_data(&Matrix::zeros(0, 4), 2.0, 10, 0);
        assert_relative_eq!(empty.mean, 4.0, max_relative = 1e-12);

        let p = gaussian(10, 40, 3, 4);
        let base = gd_kernel_baseline(&p, 200, 9).unwrap();
        let ratio = base.mean / p.w_star.norm_squared();
        assert!((ratio - 0.75).abs() <= 0.05 * 0.75, "{ratio}");
        let r2 = p.w_star.norm_squared();
        assert!(base.trials.iter().all(|&l| l >= 0.0 && l <= r2 * (1.0 + 1e-12)));
    }

    #[test]
    fn kernel_baseline_rejects_overdetermined() {
        assert!(gd_kernel_baseline(&gaussian(6, 4, 1, 0), 5, 0).is_err());
    }
}
