//! Greedy spherical covers for selecting a subset of the input as centers
//! on non-uniform point sets.
//!
//! Each iteration picks the least covered of a few random under-covered
//! points, grows a sphere around it while the points inside stay flat enough
//! under a density-weighted quadric error, and raises the degree of coverage
//! of the points inside. The loop ends once every point is covered at least
//! `g_min` times.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::kernel::phi;
use crate::octree::PointOctree;
use crate::{Error, HermitePointSet, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoverParams {
    pub g_min: f64,
    pub q_err: f64,
    /// Number of random under-covered candidates per iteration.
    pub varpi: usize,
    pub bisection_steps: usize,
    /// Neighbors used for the density weights.
    pub delta_neighbors: usize,
}

impl Default for CoverParams {
    fn default() -> Self {
        CoverParams {
            g_min: 1.5,
            q_err: 5e-4,
            varpi: 15,
            bisection_steps: 20,
            delta_neighbors: 15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SphericalCover {
    /// Index of each selected center in the input.
    pub indices: Vec<usize>,
    pub centers: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub radii: Vec<f64>,
    /// Degree of coverage per input point as tracked by the selection loop.
    pub doc: Vec<f64>,
    pub params: CoverParams,
    pub l_bar: f64,
}

impl SphericalCover {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Smallest tracked degree of coverage.
    pub fn min_doc(&self) -> f64 {
        self.doc.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// The selected centers with their original normals.
    pub fn to_point_set(&self) -> HermitePointSet {
        HermitePointSet::from_unit(self.centers.clone(), self.normals.clone())
    }

    /// Writes `x,y,z,nx,ny,nz,r` rows, one per sphere.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "x,y,z,nx,ny,nz,r")?;
            for ((c, n), r) in self.centers.iter().zip(&self.normals).zip(&self.radii) {
                writeln!(out, "{},{},{},{},{},{},{}", c.x, c.y, c.z, n.x, n.y, n.z, r)?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Mean squared distance from each point to its `k` nearest other points
/// (all other points when fewer are available; 0 for a single point).
pub fn density_weights(ps: &HermitePointSet, idx: &PointOctree, k: usize) -> Result<Vec<f64>> {
    let k = k.min(ps.len().saturating_sub(1));
    if k == 0 {
        return Ok(vec![0.0; ps.len()]);
    }
    (0..ps.len())
        .into_par_iter()
        .map(|i| {
            let nn = idx.knn(&ps.points[i], k, Some(i))?;
            Ok(nn.iter().map(|&(_, d)| d * d).sum::<f64>() / k as f64)
        })
        .collect()
}

/// `Σ δ_j φ_r(|p_j - c|) (n_j·(c - p_j))² / Σ δ_j φ_r(|p_j - c|)` over the
/// points strictly inside the sphere.
///
/// When every point inside has zero weight the unweighted kernel average is
/// used instead, so coincident samples do not divide by zero.
pub fn quadric_error(ps: &HermitePointSet, idx: &PointOctree, c: &Vec3, r: f64, delta: &[f64]) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("sphere radius must be positive, got {r}")));
    }
    let mut inside = Vec::new();
    idx.radius_query_into(c, r, &mut inside);
    if inside.is_empty() {
        return Err(Error::EmptySphere { radius: r });
    }
    let (mut num, mut den, mut num_u, mut den_u) = (0.0, 0.0, 0.0, 0.0);
    for &j in &inside {
        let p = ps.points[j];
        let k = phi((p - c).norm(), r);
        let e = ps.normals[j].dot(&(c - p));
        num += delta[j] * k * e * e;
        den += delta[j] * k;
        num_u += k * e * e;
        den_u += k;
    }
    Ok(if den > 0.0 { num / den } else { num_u / den_u })
}

/// Degree of coverage `Σ_k φ_{r_k}(|x - c_k|)`.
pub fn doc_at(cover: &SphericalCover, x: &Vec3) -> f64 {
    cover
        .centers
        .iter()
        .zip(&cover.radii)
        .map(|(c, &r)| phi((x - c).norm(), r))
        .sum()
}

/// Under-covered set with O(1) removal and index-based sampling.
struct Pending {
    items: Vec<usize>,
    slot: Vec<usize>,
}

impl Pending {
    fn all(n: usize) -> Self {
        Pending {
            items: (0..n).collect(),
            slot: (0..n).collect(),
        }
    }

    fn remove(&mut self, i: usize) {
        let s = self.slot[i];
        if s == usize::MAX {
            return;
        }
        let last = *self.items.last().unwrap();
        self.items.swap_remove(s);
        if last != i {
            self.slot[last] = s;
        }
        self.slot[i] = usize::MAX;
    }
}

/// Greedy minimal spherical cover of `ps`, deterministic for a given seed.
pub fn select_centers(
    ps: &HermitePointSet,
    idx: &PointOctree,
    params: &CoverParams,
    seed: u64,
) -> Result<SphericalCover> {
    let n = ps.len();
    if n == 0 {
        return Err(Error::EmptyPointSet);
    }
    if !(params.g_min > 0.0) || !(params.q_err >= 0.0) || params.varpi == 0 {
        return Err(Error::InvalidInput("cover parameters out of range".into()));
    }
    let l_bar = ps.bbox.diagonal();
    let delta = density_weights(ps, idx, params.delta_neighbors)?;
    let threshold = params.q_err * l_bar;
    let r_hi = l_bar / 4.0;
    let r_floor = 1e-9 * l_bar.max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut doc = vec![0.0f64; n];
    let mut pending = Pending::all(n);
    let mut cover = SphericalCover {
        indices: Vec::new(),
        centers: Vec::new(),
        normals: Vec::new(),
        radii: Vec::new(),
        doc: Vec::new(),
        params: *params,
        l_bar,
    };
    let mut inside = Vec::new();
    while !pending.items.is_empty() {
        let picks: Vec<usize> = if pending.items.len() <= params.varpi {
            pending.items.clone()
        } else {
            rand::seq::index::sample(&mut rng, pending.items.len(), params.varpi)
                .into_iter()
                .map(|s| pending.items[s])
                .collect()
        };
        let k = *picks
            .iter()
            .min_by(|&&a, &&b| doc[a].total_cmp(&doc[b]).then(a.cmp(&b)))
            .unwrap();
        let c = ps.points[k];
        let r_lo = if n > 1 {
            idx.knn(&c, 1, Some(k))?[0].1.max(r_floor)
        } else {
            r_hi.max(r_floor)
        };
        let fits = |r: f64| quadric_error(ps, idx, &c, r, &delta).map(|q| q <= threshold);
        let radius = if r_lo >= r_hi || fits(r_hi)? {
            r_hi.max(r_lo)
        } else {
            let (mut lo, mut hi) = (r_lo, r_hi);
            let mut best = r_lo;
            for _ in 0..params.bisection_steps {
                let mid = 0.5 * (lo + hi);
                if fits(mid)? {
                    best = best.max(mid);
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            best
        };
        idx.radius_query_into(&c, radius, &mut inside);
        for &j in &inside {
            if doc[j] < params.g_min {
                doc[j] += phi((ps.points[j] - c).norm(), radius);
                if doc[j] >= params.g_min {
                    pending.remove(j);
                }
            }
        }
        doc[k] = doc[k].max(params.g_min);
        pending.remove(k);
        cover.indices.push(k);
        cover.centers.push(c);
        cover.normals.push(ps.normals[k]);
        cover.radii.push(radius);
    }
    cover.doc = doc;
    Ok(cover)
}
