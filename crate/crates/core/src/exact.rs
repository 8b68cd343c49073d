//! Exact regularized HRBF system `(A + ηI) λ = y` for small inputs.
//!
//! Block `A_{i,j}` holds the kernel of center `j` (support `ρ_j`) evaluated at
//! `p_i - p_j`:
//!
//! ```text
//! | φ     -∇φᵀ |
//! | ∇φ    -Hφ  |
//! ```
//!
//! so blocks vanish exactly when `p_i` lies outside the support of center `j`.
//! Systems up to `dense_limit` centers are solved by dense LU, larger ones by
//! block-Jacobi preconditioned BiCGSTAB.

use nalgebra::{DMatrix, DVector, Matrix4};
use rayon::prelude::*;

use crate::kernel::{self, Want};
use crate::octree::PointOctree;
use crate::quasi::CsrbfField;
use crate::{Error, HermitePointSet, Result, Vec3};

/// Condition estimates above this are reported as ill-conditioned
/// (about half of the double-precision digits lost).
pub const ILL_CONDITIONED: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactOptions {
    pub cap: usize,
    pub dense_limit: usize,
    pub max_iterations: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions {
            cap: 5000,
            dense_limit: 500,
            max_iterations: 5000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExactSystem {
    pub n: usize,
    pub points: Vec<Vec3>,
    pub rho: Vec<f64>,
    pub eta: f64,
    /// Non-zero blocks of `A` per block row, sorted by column.
    pub rows: Vec<Vec<(usize, Matrix4<f64>)>>,
    pub y: Vec<f64>,
    pub dense_limit: usize,
    pub max_iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    DenseLu,
    BiCgStab,
}

#[derive(Clone, Debug)]
pub struct ExactSolveResult {
    pub lambda: Vec<f64>,
    pub residual_inf: f64,
    /// `‖A + ηI - D‖∞`.
    pub delta_a_inf: f64,
    /// `‖D⁻¹‖∞`.
    pub d_inv_inf: f64,
    /// Estimate of `κ∞(A + ηI)`; only computed on the dense path.
    pub condition_estimate: Option<f64>,
    pub method: SolveMethod,
    pub iterations: usize,
}

impl ExactSolveResult {
    pub fn ill_conditioned(&self) -> bool {
        self.condition_estimate.is_some_and(|c| c > ILL_CONDITIONED)
    }
}

/// The `4×4` block of center `j` seen from `x`.
pub fn block(x: &Vec3, center: &Vec3, rho: f64) -> Matrix4<f64> {
    let e = kernel::eval(center, rho, x, Want::ALL);
    let mut m = Matrix4::zeros();
    m[(0, 0)] = e.value;
    for a in 0..3 {
        m[(0, a + 1)] = -e.gradient[a];
        m[(a + 1, 0)] = e.gradient[a];
        for b in 0..3 {
            m[(a + 1, b + 1)] = -e.hessian[(a, b)];
        }
    }
    m
}

pub fn assemble(ps: &HermitePointSet, rho: &[f64], eta: f64, opts: &ExactOptions) -> Result<ExactSystem> {
    let n = ps.len();
    if n > opts.cap {
        return Err(Error::ExactCapExceeded { n, cap: opts.cap });
    }
    if rho.len() != n || rho.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidInput("one positive radius per point is required".into()));
    }
    let rho_max = rho.iter().copied().fold(0.0, f64::max);
    let index = PointOctree::build(&ps.points, crate::octree::DEFAULT_LEAF_CAPACITY)?;
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &ps.points[i];
            let mut row = Vec::new();
            for j in index.radius_query(x, rho_max) {
                if (x - ps.points[j]).norm_squared() < rho[j] * rho[j] {
                    row.push((j, block(x, &ps.points[j], rho[j])));
                }
            }
            row
        })
        .collect();
    let y = ps.normals.iter().flat_map(|nm| [0.0, nm.x, nm.y, nm.z]).collect();
    Ok(ExactSystem {
        n,
        points: ps.points.clone(),
        rho: rho.to_vec(),
        eta,
        rows,
        y,
        dense_limit: opts.dense_limit,
        max_iterations: opts.max_iterations,
    })
}

impl ExactSystem {
    /// `(A + ηI) x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 4 * self.n];
        out.par_chunks_mut(4).enumerate().for_each(|(i, o)| {
            for (j, m) in &self.rows[i] {
                let xj = nalgebra::Vector4::from_column_slice(&x[4 * j..4 * j + 4]);
                let v = m * xj;
                for r in 0..4 {
                    o[r] += v[r];
                }
            }
            for r in 0..4 {
                o[r] += self.eta * x[4 * i + r];
            }
        });
        out
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let dim = 4 * self.n;
        let mut a = DMatrix::from_diagonal_element(dim, dim, self.eta);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, m) in row {
                let mut view = a.view_mut((4 * i, 4 * j), (4, 4));
                view += m;
            }
        }
        a
    }

    /// Diagonal of `D` for block `i` (without `η`).
    fn d_block(&self, i: usize) -> [f64; 4] {
        let g = 20.0 / (self.rho[i] * self.rho[i]);
        [1.0, g, g, g]
    }

    /// `‖A + ηI - D‖∞` from the assembled blocks.
    pub fn delta_a_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let mut sums = [0.0f64; 4];
                for (j, m) in &self.rows[i] {
                    let mut m = *m;
                    if *j == i {
                        let d = self.d_block(i);
                        for r in 0..4 {
                            m[(r, r)] -= d[r];
                        }
                    }
                    for r in 0..4 {
                        sums[r] += (0..4).map(|c| m[(r, c)].abs()).sum::<f64>();
                    }
                }
                sums.into_iter().fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// `‖D⁻¹‖∞ = max_i max(1/(1+η), ρ_i²/(20+ηρ_i²))`.
    pub fn d_inv_inf(&self) -> f64 {
        self.rho
            .iter()
            .map(|r| (1.0 / (1.0 + self.eta)).max(r * r / (20.0 + self.eta * r * r)))
            .fold(0.0, f64::max)
    }

    fn residual_inf(&self, lambda: &[f64]) -> f64 {
        self.apply(lambda)
            .iter()
            .zip(&self.y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn tolerance(&self) -> f64 {
        1e-9 * (1.0 + self.y.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }
}

pub fn solve(sys: &ExactSystem) -> Result<ExactSolveResult> {
    let (lambda, condition_estimate, method, iterations) = if sys.n <= sys.dense_limit {
        let (l, c) = solve_dense(sys)?;
        (l, Some(c), SolveMethod::DenseLu, 1)
    } else {
        let (l, it) = solve_bicgstab(sys)?;
        (l, None, SolveMethod::BiCgStab, it)
    };
    let residual_inf = sys.residual_inf(&lambda);
    if !(residual_inf <= sys.tolerance()) {
        return Err(Error::Factorization {
            condition_estimate: condition_estimate.unwrap_or(f64::INFINITY),
        });
    }
    Ok(ExactSolveResult {
        lambda,
        residual_inf,
        delta_a_inf: sys.delta_a_inf(),
        d_inv_inf: sys.d_inv_inf(),
        condition_estimate,
        method,
        iterations,
    })
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

fn solve_dense(sys: &ExactSystem) -> Result<(Vec<f64>, f64)> {
    let a = sys.dense();
    let a_norm = (0..a.nrows())
        .map(|r| a.row(r).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let lu = a.clone().lu();
    let y = DVector::from_column_slice(&sys.y);
    let singular = || Error::Factorization {
        condition_estimate: f64::INFINITY,
    };
    let mut x = lu.solve(&y).ok_or_else(singular)?;
    // One step of iterative refinement.
    let r = &y - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    // Lower estimate of ‖A⁻¹‖∞ by a few steps of inverse iteration.
    let mut v = DVector::from_fn(a.nrows(), |i, _| if i % 2 == 0 { 1.0 } else { -0.5 });
    let mut inv_norm = 0.0f64;
    for _ in 0..8 {
        let before = inf_norm(&v);
        let w = lu.solve(&v).ok_or_else(singular)?;
        let after = inf_norm(&w);
        inv_norm = inv_norm.max(after / before);
        v = w / after;
    }
    let cond = a_norm * inv_norm;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Factorization {
            condition_estimate: cond,
        });
    }
    Ok((x.as_slice().to_vec(), cond))
}

fn solve_bicgstab(sys: &ExactSystem) -> Result<(Vec<f64>, usize)> {
    let dim = 4 * sys.n;
    let fail = || Error::Factorization {
        condition_estimate: f64::INFINITY,
    };
    // Block-Jacobi preconditioner from the diagonal blocks of A + ηI.
    let inv_blocks: Vec<Matrix4<f64>> = (0..sys.n)
        .map(|i| {
            let diag = sys.rows[i]
                .iter()
                .find(|(j, _)| *j == i)
                .map(|(_, m)| *m)
                .unwrap_or_else(Matrix4::zeros);
            (diag + Matrix4::identity() * sys.eta).try_inverse().ok_or_else(fail)
        })
        .collect::<Result<_>>()?;
    let precond = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        out.par_chunks_mut(4).enumerate().for_each(|(i, o)| {
            let r = inv_blocks[i] * nalgebra::Vector4::from_column_slice(&v[4 * i..4 * i + 4]);
            o.copy_from_slice(r.as_slice());
        });
        out
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let amax = |a: &[f64]| a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let target = 0.1 * sys.tolerance();

    let mut x = precond(&sys.y);
    let ax = sys.apply(&x);
    let mut r: Vec<f64> = sys.y.iter().zip(&ax).map(|(a, b)| a - b).collect();
    let r_hat = r.clone();
    let (mut rho_prev, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; dim];
    let mut p = vec![0.0; dim];
    for it in 0..sys.max_iterations {
        if amax(&r) <= target {
            return Ok((x, it));
        }
        let rho = dot(&r_hat, &r);
        if rho == 0.0 || omega == 0.0 {
            return Err(fail());
        }
        let beta = (rho / rho_prev) * (alpha / omega);
        for k in 0..dim {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        let p_hat = precond(&p);
        v = sys.apply(&p_hat);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(a, b)| a - alpha * b).collect();
        if amax(&s) <= target {
            for k in 0..dim {
                x[k] += alpha * p_hat[k];
            }
            return Ok((x, it + 1));
        }
        let s_hat = precond(&s);
        let t = sys.apply(&s_hat);
        omega = dot(&t, &s) / dot(&t, &t);
        for k in 0..dim {
            x[k] += alpha * p_hat[k] + omega * s_hat[k];
            r[k] = s[k] - omega * t[k];
        }
        rho_prev = rho;
        if !alpha.is_finite() || !omega.is_finite() {
            return Err(fail());
        }
    }
    if amax(&r) <= target {
        Ok((x, sys.max_iterations))
    } else {
        Err(fail())
    }
}

/// `f(x) = Σ_j a_j φ_j(x) - <b_j, ∇φ_j(x)>`, zero outside every support.
pub fn eval_exact(ps: &HermitePointSet, rho: &[f64], lambda: &[f64], x: &Vec3) -> f64 {
    let mut f = 0.0;
    for (j, p) in ps.points.iter().enumerate() {
        let e = kernel::eval(p, rho[j], x, Want::VALUE | Want::GRADIENT);
        if !e.inside_support {
            continue;
        }
        let b = Vec3::new(lambda[4 * j + 1], lambda[4 * j + 2], lambda[4 * j + 3]);
        f += lambda[4 * j] * e.value - b.dot(&e.gradient);
    }
    f
}

/// The exact interpolant as a field usable by the isosurface extractor.
pub fn interpolant(ps: &HermitePointSet, rho: &[f64], lambda: &[f64]) -> Result<CsrbfField> {
    let a = (0..ps.len()).map(|j| lambda[4 * j]).collect();
    let b = (0..ps.len())
        .map(|j| Vec3::new(lambda[4 * j + 1], lambda[4 * j + 2], lambda[4 * j + 3]))
        .collect();
    CsrbfField::new(ps.points.clone(), rho.to_vec(), Some(a), b)
}
