//! Overparametrized linear model `w = u⊙u − v⊙v` fit by squared loss.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Loss, PerSampleLoss};
use crate::{Error, Matrix, Result, Vector};

const BOOLEAN_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataDistribution {
    Gaussian,
    Boolean,
}

impl FromStr for DataDistribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "boolean" => Ok(Self::Boolean),
            other => Err(Error::Parse(format!("unknown distribution {other:?}"))),
        }
    }
}

impl std::fmt::Display for DataDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Boolean => "boolean",
        })
    }
}

/// Data, labels and groundtruth of an OLM instance. The loss acts on
/// `x = (u, v) ∈ ℝ^{2d}`.
#[derive(Debug, Clone)]
pub struct OlmProblem {
    /// `n × d` data matrix, one sample per row.
    pub z: Matrix,
    pub y: Vector,
    pub w_star: Vector,
    pub kappa: usize,
    pub seed: u64,
    pub dist: Option<DataDistribution>,
    /// `ZᵀZ / n`.
    gram: Matrix,
    /// `Zᵀy / n`.
    zty: Vector,
    rank: usize,
}

fn numerical_rank(z: &Matrix) -> usize {
    if z.nrows() == 0 || z.ncols() == 0 {
        return 0;
    }
    let svd = z.clone().svd(false, false);
    let smax = svd.singular_values.amax();
    let tol = smax * 1e-10 * z.nrows().max(z.ncols()) as f64;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

impl OlmProblem {
    /// Build from data and groundtruth; labels are `y = Z w*`.
    ///
    /// Fails with [`Error::DegenerateData`] unless `Z` has full rank
    /// `min(n, d)`.
    pub fn new(z: Matrix, w_star: Vector, seed: u64, dist: Option<DataDistribution>) -> Result<Self> {
        if z.ncols() != w_star.len() {
            return Err(Error::DimensionMismatch {
                expected: z.ncols(),
                got: w_star.len(),
            });
        }
        let n = z.nrows();
        let expected = n.min(z.ncols());
        let rank = numerical_rank(&z);
        if rank < expected {
            return Err(Error::DegenerateData { rank, expected });
        }
        let y = &z * &w_star;
        let inv_n = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        let gram = z.transpose() * &z * inv_n;
        let zty = z.transpose() * &y * inv_n;
        let kappa = w_star.iter().filter(|w| **w != 0.0).count();
        Ok(Self {
            z,
            y,
            w_star,
            kappa,
            seed,
            dist,
            gram,
            zty,
            rank,
        })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn d(&self) -> usize {
        self.z.ncols()
    }

    /// Split `x` into `(u, v)`.
    pub fn split(&self, x: &Vector) -> (Vector, Vector) {
        let d = self.d();
        (x.rows(0, d).into_owned(), x.rows(d, d).into_owned())
    }

    pub fn join(u: &Vector, v: &Vector) -> Vector {
        let mut x = Vector::zeros(u.len() + v.len());
        x.rows_mut(0, u.len()).copy_from(u);
        x.rows_mut(u.len(), v.len()).copy_from(v);
        x
    }

    /// `w = u⊙u − v⊙v`.
    pub fn weights(&self, x: &Vector) -> Vector {
        let (u, v) = self.split(x);
        u.component_mul(&u) - v.component_mul(&v)
    }

    /// Per-coordinate regularizer weights `aⱼ = (4/n) Σᵢ zᵢⱼ²`.
    pub fn coordinate_weights(&self) -> Vector {
        self.gram.diagonal() * 4.0
    }

    /// `ZᵀZ / n`.
    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    /// `g = Zᵀ(Zw − y)/n`.
    fn scaled_residual(&self, w: &Vector) -> Vector {
        &self.gram * w - &self.zty
    }

    /// Value, gradient and Hessian in one pass.
    pub fn eval(&self, x: &Vector) -> (f64, Vector, Matrix) {
        (self.value(x), self.gradient(x), self.hessian(x))
    }

    /// Write the plain-text problem file: a header `n d kappa seed`, the rows
    /// of `Z`, then `w*` on one line.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {} {} {}", self.n(), self.d(), self.kappa, self.seed)?;
        for row in self.z.row_iter() {
            writeln!(out, "{}", join_f64(row.iter()))?;
        }
        writeln!(out, "{}", join_f64(self.w_star.iter()))?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of problem file".into()))?
                .map_err(Error::from)
        };
        let header = parse_row::<u64>(&next()?)?;
        let [n, d, kappa, seed] = header[..] else {
            return Err(Error::Parse("header must be `n d kappa seed`".into()));
        };
        let (n, d) = (n as usize, d as usize);
        let mut z = Matrix::zeros(n, d);
        for i in 0..n {
            let row = parse_row::<f64>(&next()?)?;
            if row.len() != d {
                return Err(Error::Parse(format!("row {i} has {} entries, expected {d}", row.len())));
            }
            for (j, value) in row.into_iter().enumerate() {
                z[(i, j)] = value;
            }
        }
        let w = parse_row::<f64>(&next()?)?;
        if w.len() != d {
            return Err(Error::Parse("w* length does not match d".into()));
        }
        let problem = Self::new(z, Vector::from_vec(w), seed, None)?;
        if problem.kappa != kappa as usize {
            return Err(Error::Parse(format!(
                "header kappa {kappa} does not match w* sparsity {}",
                problem.kappa
            )));
        }
        Ok(problem)
    }
}

fn join_f64<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut s = String::new();
    for (k, v) in values.enumerate() {
        if k > 0 {
            s.push(' ');
        }
        // `{:e}` is the shortest representation that round-trips
        write!(s, "{v:e}").unwrap();
    }
    s
}

fn parse_row<T: FromStr>(line: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| tok.parse::<T>().map_err(|_| Error::Parse(format!("bad number {tok:?}"))))
        .collect()
}

/// Sample an OLM instance.
///
/// Rows of `Z` are iid `N(0, I_d)` or uniform on `{±1}^d`; `w*` has a
/// uniformly random support of size `kappa` with magnitudes uniform in
/// `magnitude_range` and random signs. Boolean data is redrawn (up to ten
/// times) when it is rank deficient.
pub fn olm_generate(
    n: usize,
    d: usize,
    kappa: usize,
    dist: DataDistribution,
    magnitude_range: (f64, f64),
    seed: u64,
) -> Result<OlmProblem> {
    if kappa < 1 || kappa >= d || n < 1 {
        return Err(Error::InvalidConfig(format!(
            "need 1 ≤ kappa < d and n ≥ 1 (n={n}, d={d}, kappa={kappa})"
        )));
    }
    let (lo, hi) = magnitude_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidConfig(format!("bad magnitude range ({lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w_star = Vector::zeros(d);
    for j in sample(&mut rng, d, kappa).into_iter() {
        let magnitude = if hi > lo { rng.random_range(lo..hi) } else { lo };
        w_star[j] = if rng.random::<bool>() { magnitude } else { -magnitude };
    }
    let attempts = match dist {
        DataDistribution::Gaussian => 1,
        DataDistribution::Boolean => BOOLEAN_RETRIES + 1,
    };
    let mut last_err = None;
    for _ in 0..attempts {
        let z = Matrix::from_fn(n, d, |_, _| match dist {
            DataDistribution::Gaussian => rng.sample(StandardNormal),
            DataDistribution::Boolean => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        });
        match OlmProblem::new(z, w_star.clone(), seed, Some(dist)) {
            Ok(p) => return Ok(p),
            Err(e @ Error::DegenerateData { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// `(u, v) = ([w]₊^{1/2}, [−w]₊^{1/2})`.
pub fn canonical_param(w: &Vector) -> Vector {
    let u = w.map(|wj| wj.max(0.0).sqrt());
    let v = w.map(|wj| (-wj).max(0.0).sqrt());
    OlmProblem::join(&u, &v)
}

impl Loss for OlmProblem {
    fn dim(&self) -> usize {
        2 * self.d()
    }

    fn manifold_rank(&self) -> usize {
        self.rank
    }

    fn value(&self, x: &Vector) -> f64 {
        let n = self.n();
        if n == 0 {
            return 0.0;
        }
        let r = &self.z * self.weights(x) - &self.y;
        0.5 * r.norm_squared() / n as f64
    }

    fn gradient(&self, x: &Vector) -> Vector {
        let (u, v) = self.split(x);
        let g = self.scaled_residual(&(u.component_mul(&u) - v.component_mul(&v)));
        Self::join(&(u.component_mul(&g) * 2.0), &(v.component_mul(&g) * -2.0))
    }

    fn hessian(&self, x: &Vector) -> Matrix {
        let d = self.d();
        let (u, v) = self.split(x);
        let g = self.scaled_residual(&(u.component_mul(&u) - v.component_mul(&v)));
        let mut h = Matrix::zeros(2 * d, 2 * d);
        for j in 0..d {
            for k in 0..d {
                let c = 4.0 * self.gram[(j, k)];
                h[(j, k)] = c * u[j] * u[k];
                h[(j, d + k)] = -c * u[j] * v[k];
                h[(d + j, k)] = -c * v[j] * u[k];
                h[(d + j, d + k)] = c * v[j] * v[k];
            }
            h[(j, j)] += 2.0 * g[j];
            h[(d + j, d + j)] -= 2.0 * g[j];
        }
        h
    }

    /// `∇_x ⟨∇²L(x), A⟩`, differentiated blockwise.
    fn third_contraction(&self, x: &Vector, a: &Matrix) -> Vector {
        let d = self.d();
        let (u, v) = self.split(x);
        let a_uu = a.view((0, 0), (d, d));
        let a_uv = a.view((0, d), (d, d));
        let a_vu = a.view((d, 0), (d, d));
        let a_vv = a.view((d, d), (d, d));

        let delta = Vector::from_fn(d, |j, _| a_uu[(j, j)] - a_vv[(j, j)]);
        let c_delta = &self.gram * delta;
        let m_uu = self.gram.component_mul(&(a_uu + a_uu.transpose()));
        let m_vv = self.gram.component_mul(&(a_vv + a_vv.transpose()));
        let cross = self.gram.component_mul(&(a_uv + a_vu.transpose()));

        let grad_u = (u.component_mul(&c_delta) + &m_uu * &u - &cross * &v) * 4.0;
        let grad_v = (-v.component_mul(&c_delta) + &m_vv * &v - cross.transpose() * &u) * 4.0;
        Self::join(&grad_u, &grad_v)
    }

    fn per_sample(&self) -> Option<&dyn PerSampleLoss> {
        Some(self)
    }
}

impl PerSampleLoss for OlmProblem {
    fn n_samples(&self) -> usize {
        self.n()
    }

    fn residual(&self, i: usize, x: &Vector) -> f64 {
        let d = self.d();
        let mut f = 0.0;
        for j in 0..d {
            f += self.z[(i, j)] * (x[j] * x[j] - x[d + j] * x[d + j]);
        }
        f - self.y[i]
    }

    fn feature_gradient(&self, i: usize, x: &Vector) -> Vector {
        let d = self.d();
        Vector::from_fn(2 * d, |k, _| {
            if k < d {
                2.0 * self.z[(i, k)] * x[k]
            } else {
                -2.0 * self.z[(i, k - d)] * x[k]
            }
        })
    }
}
