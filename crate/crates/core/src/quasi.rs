//! Closed-form HRBF quasi-interpolation.
//!
//! Replacing the regularized HRBF system matrix by its isolated-center block
//! diagonal gives the coefficients `a_j = 0`, `b_j = ρ_j² n_j / (20 + η ρ_j²)`
//! and the implicit function
//!
//! ```text
//! f(x) = -Σ_j <b_j, ∇φ_j(x - p_j)>
//! ```
//!
//! which is only defined where at least one support ball covers `x`.
//! [`tune_parameters`] picks the support radii and `η` so that the distance
//! between these coefficients and the exact solution stays bounded.

use std::sync::atomic::{AtomicU32, Ordering};

use rayon::prelude::*;

use crate::exact::ExactSolveResult;
use crate::octree::PointOctree;
use crate::{Error, HermitePointSet, Result, Vec3};

/// Growth factor of the incremental support enlargement.
pub const SUPPORT_GROWTH: f64 = 1.05;
/// Margin added to the smallest admissible `η`.
pub const ETA_MARGIN: f64 = 1e-5;

/// Supports must stay below `sqrt(20)` for `‖D⁻¹‖∞ = 1/(1+η)`.
pub fn max_support() -> f64 {
    20f64.sqrt()
}

/// `Ā = m (5/(4ρ_min) + 35/ρ_min²)`, the bound on `‖ΔA‖∞`.
pub fn a_bar(m: usize, rho_min: f64) -> f64 {
    m as f64 * (5.0 / (4.0 * rho_min) + 35.0 / (rho_min * rho_min))
}

/// Right-hand side of the admissibility condition `η > Ā - 1`.
pub fn eta_threshold(m: usize, rho_min: f64) -> f64 {
    a_bar(m, rho_min) - 1.0
}

/// `Ā ρ_max² / ((1 + η - Ā)(20 + η ρ_max²))`, or `None` when `1 + η ≤ Ā`.
pub fn lemma2_bound(a_bar: f64, eta: f64, rho_max: f64) -> Option<f64> {
    let gap = 1.0 + eta - a_bar;
    (gap > 0.0).then(|| a_bar * rho_max * rho_max / (gap * (20.0 + eta * rho_max * rho_max)))
}

#[derive(Clone, Debug)]
pub struct TuneOptions {
    pub s: f64,
    pub noisy_mode: bool,
    pub eta_override: Option<f64>,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            s: 1.0,
            noisy_mode: false,
            eta_override: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuningParams {
    pub s: f64,
    pub d_bar: f64,
    /// Largest number of other points inside a temporary support `s·d̄`.
    pub m: usize,
    /// Largest count reached by any support one growth step past its final
    /// radius (always `> m` unless a support already holds every point).
    pub m_overshoot: usize,
    /// Largest number of other centers covering any center under the final
    /// radii; `η` is derived from `max(m, m_covering)`.
    pub m_covering: usize,
    pub rho: Vec<f64>,
    pub rho_min: f64,
    pub rho_max: f64,
    pub eta: f64,
    pub uniform_support: bool,
    pub eta_overridden: bool,
}

impl TuningParams {
    /// The `m` entering the error bound.
    pub fn m_bound(&self) -> usize {
        self.m.max(self.m_covering)
    }

    pub fn a_bar(&self) -> f64 {
        a_bar(self.m_bound(), self.rho_min)
    }

    /// Whether `η` strictly exceeds `Ā - 1` and `ρ_max < sqrt(20)`.
    pub fn satisfies_eta_bound(&self) -> bool {
        self.eta > eta_threshold(self.m_bound(), self.rho_min) && self.rho_max < max_support()
    }

    /// Fixed-radius parameters, mainly for experiments and tests.
    pub fn uniform(rho: f64, n: usize, m: usize, eta: f64) -> TuningParams {
        TuningParams {
            s: 1.0,
            d_bar: rho,
            m,
            m_overshoot: m,
            m_covering: m,
            rho: vec![rho; n],
            rho_min: rho,
            rho_max: rho,
            eta,
            uniform_support: true,
            eta_overridden: true,
        }
    }
}

/// Support radii and regularization with the defaults `noisy_mode = false`
/// and `η` from the admissibility condition.
pub fn tune_parameters(ps: &HermitePointSet, idx: &PointOctree, s: f64, noisy_mode: bool) -> Result<TuningParams> {
    tune_parameters_with(
        ps,
        idx,
        &TuneOptions {
            s,
            noisy_mode,
            eta_override: None,
        },
    )
}

pub fn tune_parameters_with(ps: &HermitePointSet, idx: &PointOctree, opts: &TuneOptions) -> Result<TuningParams> {
    let n = ps.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    if !(opts.s >= 1.0) {
        return Err(Error::InvalidInput(format!("amplifier s must be >= 1, got {}", opts.s)));
    }
    let diagonals = idx.leaf_diagonals();
    let d_bar = 0.75 * diagonals.iter().sum::<f64>() / diagonals.len() as f64;
    let rho0 = opts.s * d_bar;
    if !(rho0 > 0.0) {
        return Err(Error::DegenerateExtent);
    }

    let others_within = |j: usize, r: f64| idx.count_in_radius(&ps.points[j], r) - 1;
    let m = (0..n)
        .into_par_iter()
        .map(|j| others_within(j, rho0))
        .max()
        .unwrap_or(0);

    // Grow each radius by SUPPORT_GROWTH while the support still holds at
    // most m other points; the first radius holding more is rejected.
    let grown: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .map(|j| -> Result<(f64, usize)> {
            if m + 1 > n - 1 {
                return Ok((rho0, n - 1));
            }
            let neighbors = idx.knn(&ps.points[j], m + 1, Some(j))?;
            let limit = neighbors[m].1;
            let mut rho = rho0;
            loop {
                let next = rho * SUPPORT_GROWTH;
                if next > limit {
                    return Ok((rho, others_within(j, next)));
                }
                rho = next;
                if rho >= max_support() {
                    return Err(Error::ModelNotNormalized { rho });
                }
            }
        })
        .collect::<Result<_>>()?;
    let m_overshoot = grown.iter().map(|g| g.1).max().unwrap_or(0);
    let mut rho: Vec<f64> = grown.into_iter().map(|g| g.0).collect();

    let rho_min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    if opts.noisy_mode {
        rho.iter_mut().for_each(|r| *r = rho_min);
    }
    let rho_max = rho.iter().copied().fold(0.0, f64::max);
    if rho_max >= max_support() {
        return Err(Error::ModelNotNormalized { rho: rho_max });
    }
    let m_covering = max_covering(&ps.points, &rho, idx);

    let m_bound = m.max(m_covering);
    let eta = opts
        .eta_override
        .unwrap_or_else(|| eta_threshold(m_bound, rho_min) + ETA_MARGIN);
    Ok(TuningParams {
        s: opts.s,
        d_bar,
        m,
        m_overshoot,
        m_covering,
        rho,
        rho_min,
        rho_max,
        eta,
        uniform_support: opts.noisy_mode,
        eta_overridden: opts.eta_override.is_some(),
    })
}

/// `max_i #{j ≠ i : |p_i - p_j| < ρ_j}`.
fn max_covering(points: &[Vec3], rho: &[f64], idx: &PointOctree) -> usize {
    let counts: Vec<AtomicU32> = (0..points.len()).map(|_| AtomicU32::new(0)).collect();
    (0..points.len()).into_par_iter().for_each(|j| {
        idx.for_each_in_radius(&points[j], rho[j], |i, _| {
            if i != j {
                counts[i].fetch_add(1, Ordering::Relaxed);
            }
        });
    });
    counts.into_iter().map(|c| c.into_inner() as usize).max().unwrap_or(0)
}

/// Value and gradient of an implicit function at a covered point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub gradient: Vec3,
}

/// A sum of compactly supported kernels `Σ_j a_j φ_j(x) - <b_j, ∇φ_j(x)>`,
/// defined only inside the union of the support balls.
///
/// Contributions are always accumulated in ascending center index so that
/// results do not depend on how queries are batched or scheduled.
#[derive(Clone, Debug)]
pub struct CsrbfField {
    centers: Vec<Vec3>,
    rho: Vec<f64>,
    a: Option<Vec<f64>>,
    b: Vec<Vec3>,
    rho_max: f64,
    index: PointOctree,
}

impl CsrbfField {
    pub fn new(centers: Vec<Vec3>, rho: Vec<f64>, a: Option<Vec<f64>>, b: Vec<Vec3>) -> Result<CsrbfField> {
        if centers.len() != rho.len() || centers.len() != b.len() || a.as_ref().is_some_and(|a| a.len() != b.len()) {
            return Err(Error::InvalidInput("field arrays differ in length".into()));
        }
        if rho.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidInput("support radii must be positive".into()));
        }
        let rho_max = rho.iter().copied().fold(0.0, f64::max);
        let index = PointOctree::build(&centers, crate::octree::DEFAULT_LEAF_CAPACITY)?;
        Ok(CsrbfField {
            centers,
            rho,
            a,
            b,
            rho_max,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Vec3] {
        &self.centers
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn b_coeffs(&self) -> &[Vec3] {
        &self.b
    }

    pub fn a_coeffs(&self) -> Option<&[f64]> {
        self.a.as_deref()
    }

    /// Centers whose support could reach any point within `slack` of `x`,
    /// in ascending index order.
    pub fn candidates(&self, x: &Vec3, slack: f64, out: &mut Vec<usize>) {
        self.index.radius_query_into(x, self.rho_max + slack, out);
    }

    /// Number of supports containing `x`.
    pub fn coverage(&self, x: &Vec3) -> usize {
        let mut n = 0;
        self.index.for_each_in_radius(x, self.rho_max, |j, d2| {
            if d2 < self.rho[j] * self.rho[j] {
                n += 1;
            }
        });
        n
    }

    /// Contribution of center `j` to the value at offset `d = x - c_j`, with
    /// `r2 = |d|² < ρ_j²`.
    #[inline]
    fn value_term(&self, j: usize, d: &Vec3, r2: f64) -> f64 {
        let rho = self.rho[j];
        let t = r2.sqrt() / rho;
        let u = 1.0 - t;
        let u2 = u * u;
        let c1 = 20.0 / (rho * rho) * u2 * u;
        let mut v = c1 * self.b[j].dot(d);
        if let Some(a) = &self.a {
            v += a[j] * (u2 * u2 * (4.0 * t + 1.0));
        }
        v
    }

    /// Field value using a candidate list from [`Self::candidates`].
    #[inline]
    pub fn value_with(&self, x: &Vec3, candidates: &[usize]) -> Option<f64> {
        let mut value = 0.0;
        let mut covered = false;
        for &j in candidates {
            let rho = self.rho[j];
            let d = x - self.centers[j];
            let r2 = d.norm_squared();
            if r2 >= rho * rho {
                continue;
            }
            covered = true;
            value += self.value_term(j, &d, r2);
        }
        covered.then_some(value)
    }

    /// Field value and gradient using a candidate list from [`Self::candidates`].
    pub fn sample_with(&self, x: &Vec3, candidates: &[usize]) -> Option<FieldSample> {
        let mut value = 0.0;
        let mut gradient = Vec3::zeros();
        let mut covered = false;
        for &j in candidates {
            let rho = self.rho[j];
            let d = x - self.centers[j];
            let r2 = d.norm_squared();
            if r2 >= rho * rho {
                continue;
            }
            covered = true;
            value += self.value_term(j, &d, r2);
            let r = r2.sqrt();
            let u = 1.0 - r / rho;
            let u2 = u * u;
            let c1 = 20.0 / (rho * rho) * u2 * u;
            let b = &self.b[j];
            // -Hφ b = c1 b - c2 (d·b) d
            gradient += c1 * b;
            if r > 0.0 {
                let c2 = 60.0 / (rho * rho * rho) * u2 / r;
                gradient -= (c2 * b.dot(&d)) * d;
            }
            if let Some(a) = &self.a {
                gradient -= (a[j] * c1) * d;
            }
        }
        covered.then_some(FieldSample { value, gradient })
    }

    /// Values at the lattice points `base + [0, n)³` (x fastest) of the grid
    /// with spacing `w` anchored at `origin`; `None` where uncovered.
    ///
    /// Each center scatters into the lattice points inside its ball, visiting
    /// `candidates` in order, so every value is bitwise identical to
    /// [`Self::value_with`] at the same point.
    pub fn lattice_values(
        &self,
        origin: &Vec3,
        w: f64,
        base: [i64; 3],
        n: usize,
        candidates: &[usize],
    ) -> Vec<Option<f64>> {
        let mut vals = vec![0.0; n * n * n];
        let mut covered = vec![false; n * n * n];
        let ni = n as i64;
        // Per-axis coordinates, identical to the components of `lattice_point`.
        let coords: [Vec<f64>; 3] =
            std::array::from_fn(|a| (0..ni).map(|k| origin[a] + (base[a] + k) as f64 * w).collect());
        let index_range = |a: usize, lo: f64, hi: f64| {
            let i0 = (((lo - origin[a]) / w).floor() as i64 - base[a]).max(0);
            let i1 = (((hi - origin[a]) / w).ceil() as i64 - base[a]).min(ni - 1);
            (i0, i1)
        };
        for &j in candidates {
            let c = self.centers[j];
            let rho = self.rho[j];
            let rho2 = rho * rho;
            let (z0, z1) = index_range(2, c.z - rho, c.z + rho);
            let (y0, y1) = index_range(1, c.y - rho, c.y + rho);
            for z in z0..=z1 {
                let dz = coords[2][z as usize] - c.z;
                for y in y0..=y1 {
                    let dy = coords[1][y as usize] - c.y;
                    let rest = rho2 - (dy * dy + dz * dz);
                    if rest <= 0.0 {
                        continue;
                    }
                    let chord = rest.sqrt();
                    let (x0, x1) = index_range(0, c.x - chord, c.x + chord);
                    for x in x0..=x1 {
                        let d = Vec3::new(coords[0][x as usize] - c.x, dy, dz);
                        let r2 = d.norm_squared();
                        if r2 >= rho2 {
                            continue;
                        }
                        let k = ((z * ni + y) * ni + x) as usize;
                        vals[k] += self.value_term(j, &d, r2);
                        covered[k] = true;
                    }
                }
            }
        }
        vals.into_iter().zip(covered).map(|(v, c)| c.then_some(v)).collect()
    }

    pub fn value(&self, x: &Vec3) -> Option<f64> {
        let mut c = Vec::new();
        self.candidates(x, 0.0, &mut c);
        self.value_with(x, &c)
    }

    pub fn sample(&self, x: &Vec3) -> Option<FieldSample> {
        let mut c = Vec::new();
        self.candidates(x, 0.0, &mut c);
        self.sample_with(x, &c)
    }
}

/// The closed-form quasi-interpolant.
#[derive(Clone, Debug)]
pub struct HrbfModel {
    pub normals: Vec<Vec3>,
    pub eta: f64,
    field: CsrbfField,
}

impl HrbfModel {
    pub fn field(&self) -> &CsrbfField {
        &self.field
    }

    pub fn centers(&self) -> &[Vec3] {
        self.field.centers()
    }

    pub fn rho(&self) -> &[f64] {
        self.field.rho()
    }

    pub fn b_coeffs(&self) -> &[Vec3] {
        self.field.b_coeffs()
    }

    pub fn len(&self) -> usize {
        self.field.len()
    }

    pub fn is_empty(&self) -> bool {
        self.field.is_empty()
    }

    /// The quasi-solution as a `4n` vector of `(a_j, b_j)` blocks.
    pub fn quasi_lambda(&self) -> Vec<f64> {
        self.b_coeffs().iter().flat_map(|b| [0.0, b.x, b.y, b.z]).collect()
    }
}

/// Quasi coefficient for one center.
pub fn quasi_coefficient(normal: &Vec3, rho: f64, eta: f64) -> Vec3 {
    normal * (rho * rho / (20.0 + eta * rho * rho))
}

pub fn build_model(ps: &HermitePointSet, tp: &TuningParams) -> Result<HrbfModel> {
    if tp.rho.len() != ps.len() {
        return Err(Error::InvalidInput(format!(
            "{} radii for {} points",
            tp.rho.len(),
            ps.len()
        )));
    }
    let b = ps
        .normals
        .iter()
        .zip(&tp.rho)
        .map(|(n, &r)| quasi_coefficient(n, r, tp.eta))
        .collect();
    Ok(HrbfModel {
        normals: ps.normals.clone(),
        eta: tp.eta,
        field: CsrbfField::new(ps.points.clone(), tp.rho.clone(), None, b)?,
    })
}

/// `f̃(x)` and `∇f̃(x)`, or `None` where no support covers `x`.
pub fn eval_implicit(model: &HrbfModel, x: &Vec3) -> Option<FieldSample> {
    model.field.sample(x)
}

/// Comparison of the quasi-solution against an exact solve.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub n: usize,
    pub eta: f64,
    pub m: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub a_bar: f64,
    /// `Ā / (1 + η)`, the estimate of `‖D⁻¹‖∞ ‖ΔA‖∞`.
    pub contraction: f64,
    /// Closed-form bound, `None` when `contraction ≥ 1`.
    pub bound_value: Option<f64>,
    pub measured_inf_error: f64,
    /// `‖D⁻¹‖∞ ‖ΔA‖∞` from the assembled matrix.
    pub exact_contraction: f64,
    /// Bound using the exact norms, `None` when `exact_contraction ≥ 1`.
    pub exact_bound: Option<f64>,
    pub holds: bool,
}

impl BoundReport {
    pub fn applicable(&self) -> bool {
        self.bound_value.is_some()
    }
}

pub fn verify_error_bound(model: &HrbfModel, tp: &TuningParams, exact: &ExactSolveResult) -> BoundReport {
    let quasi = model.quasi_lambda();
    let measured_inf_error = quasi
        .iter()
        .zip(&exact.lambda)
        .map(|(q, l)| (q - l).abs())
        .fold(0.0, f64::max);
    let m = tp.m_bound();
    let a_bar = a_bar(m, tp.rho_min);
    let contraction = a_bar / (1.0 + tp.eta);
    let bound_value = if contraction < 1.0 {
        lemma2_bound(a_bar, tp.eta, tp.rho_max)
    } else {
        None
    };
    let exact_contraction = exact.d_inv_inf * exact.delta_a_inf;
    let quasi_inf = quasi.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let exact_bound = (exact_contraction < 1.0).then(|| exact_contraction / (1.0 - exact_contraction) * quasi_inf);
    let holds = bound_value.is_some_and(|b| measured_inf_error <= b);
    BoundReport {
        n: model.len(),
        eta: tp.eta,
        m,
        rho_min: tp.rho_min,
        rho_max: tp.rho_max,
        a_bar,
        contraction,
        bound_value,
        measured_inf_error,
        exact_contraction,
        exact_bound,
        holds,
    }
}
