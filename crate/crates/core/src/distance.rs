//! Sampled one-sided surface distances between meshes or point sets, in the
//! style of Metro: area-uniform samples on the source, closest-point distance
//! to the target's triangles through a bounding-volume hierarchy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::mesh::QuadMesh;
use crate::{Aabb, Error, Result, Vec3};

/// Default number of samples per direction.
pub const DEFAULT_SAMPLES: usize = 100_000;
const LEAF_SIZE: usize = 4;

/// Closest point to `p` on triangle `abc`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

struct Node {
    bbox: Aabb,
    /// Leaf: triangle range; inner: children.
    start: usize,
    count: usize,
    left: usize,
    right: usize,
}

/// Median-split bounding-volume hierarchy over triangles.
pub struct TriangleBvh {
    triangles: Vec<[Vec3; 3]>,
    nodes: Vec<Node>,
}

impl TriangleBvh {
    pub fn new(triangles: Vec<[Vec3; 3]>) -> Result<TriangleBvh> {
        if triangles.is_empty() {
            return Err(Error::InvalidInput("empty target mesh".into()));
        }
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let centroids: Vec<Vec3> = triangles.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut nodes = Vec::new();
        Self::build(&triangles, &centroids, &mut order, 0, triangles.len(), &mut nodes);
        let triangles = order.iter().map(|&i| triangles[i]).collect();
        Ok(TriangleBvh { triangles, nodes })
    }

    fn build(
        tris: &[[Vec3; 3]],
        centroids: &[Vec3],
        order: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let mut bbox = Aabb::empty();
        for &i in &order[start..end] {
            for v in &tris[i] {
                bbox.grow(v);
            }
        }
        let id = nodes.len();
        nodes.push(Node {
            bbox,
            start,
            count: end - start,
            left: 0,
            right: 0,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let mut cb = Aabb::empty();
        for &i in &order[start..end] {
            cb.grow(&centroids[i]);
        }
        let axis = cb.extent().imax();
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        let left = Self::build(tris, centroids, order, start, mid, nodes);
        let right = Self::build(tris, centroids, order, mid, end, nodes);
        nodes[id].left = left;
        nodes[id].right = right;
        nodes[id].count = 0;
        id
    }

    /// Distance from `p` to the nearest triangle.
    pub fn distance(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.bbox.distance_squared(p) >= best {
                continue;
            }
            if node.count > 0 {
                for t in &self.triangles[node.start..node.start + node.count] {
                    let q = closest_point_on_triangle(p, &t[0], &t[1], &t[2]);
                    best = best.min((q - p).norm_squared());
                }
            } else {
                let (l, r) = (node.left, node.right);
                let (dl, dr) = (
                    self.nodes[l].bbox.distance_squared(p),
                    self.nodes[r].bbox.distance_squared(p),
                );
                // Nearer child popped first.
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best.sqrt()
    }
}

/// Distance by exhaustive search over all triangles.
pub fn brute_force_distance(triangles: &[[Vec3; 3]], p: &Vec3) -> f64 {
    triangles
        .iter()
        .map(|t| (closest_point_on_triangle(p, &t[0], &t[1], &t[2]) - p).norm_squared())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// `n` area-uniform random points on the mesh surface.
pub fn sample_surface(mesh: &QuadMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    let tris = mesh.triangle_list();
    let mut cumulative = Vec::with_capacity(tris.len());
    let mut total = 0.0;
    for [a, b, c] in &tris {
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::EmptySource);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let x = rng.random_range(0.0..total);
            let i = cumulative.partition_point(|&c| c <= x).min(tris.len() - 1);
            let [a, b, c] = tris[i];
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

/// Max and mean of sampled distances in one direction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DistanceHalf {
    pub max: f64,
    pub avg: f64,
    pub samples: usize,
}

/// Forward (reference to reconstruction) and backward (reconstruction to
/// reference) distances.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DistanceReport {
    pub forward: DistanceHalf,
    pub backward: DistanceHalf,
}

pub enum Source<'a> {
    Mesh(&'a QuadMesh, usize),
    Points(&'a [Vec3]),
}

/// Distance from samples of `source` to the surface of `target`.
pub fn surface_distance(source: Source<'_>, target: &QuadMesh, seed: u64) -> Result<DistanceHalf> {
    let samples = match source {
        Source::Mesh(mesh, n) => {
            if mesh.faces.is_empty() || n == 0 {
                return Err(Error::EmptySource);
            }
            sample_surface(mesh, n, seed)?
        }
        Source::Points(p) => {
            if p.is_empty() {
                return Err(Error::EmptySource);
            }
            p.to_vec()
        }
    };
    let bvh = TriangleBvh::new(target.triangle_list())?;
    let d: Vec<f64> = samples.par_iter().map(|p| bvh.distance(p)).collect();
    Ok(DistanceHalf {
        max: d.iter().copied().fold(0.0, f64::max),
        avg: d.iter().sum::<f64>() / d.len() as f64,
        samples: d.len(),
    })
}

/// Both one-sided distances between a reference and a reconstruction.
pub fn compare(reference: &QuadMesh, reconstruction: &QuadMesh, n_samples: usize, seed: u64) -> Result<DistanceReport> {
    Ok(DistanceReport {
        forward: surface_distance(Source::Mesh(reference, n_samples), reconstruction, seed)?,
        backward: surface_distance(Source::Mesh(reconstruction, n_samples), reference, seed.wrapping_add(1))?,
    })
}
