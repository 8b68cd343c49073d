//! Dual-contouring extraction of the zero level set of a [`CsrbfField`] over
//! fixed-width voxels, restricted to the region covered by the supports.
//!
//! The lattice is processed in cubic blocks of [`BLOCK`] voxels per axis. Each
//! block samples its corners by scattering the centers that reach it, finds
//! its active voxels, and places one vertex per active voxel. Quads are then
//! emitted in a sequential pass over the sorted active set, so the output does
//! not depend on scheduling.

use std::collections::{HashMap, HashSet};

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::mesh::{Face, QuadMesh, UnionFind};
use crate::quasi::CsrbfField;
use crate::{Error, Result, Vec3};

/// Voxels per block edge.
pub const BLOCK: i64 = 8;
/// Bisection stops once `|f| ≤ ROOT_TOL_FACTOR · w`.
pub const ROOT_TOL_FACTOR: f64 = 1e-4;
pub const ROOT_MAX_ITERATIONS: usize = 32;
/// QEF eigenvalues below this fraction of the total weight are truncated.
pub const QEF_TRUNCATION: f64 = 1e-3;
/// Default cap on the number of corner samples taken by one extraction.
pub const DEFAULT_MAX_CORNER_SAMPLES: usize = 2_000_000_000;

/// Integer lattice coordinates of a voxel (its minimum corner) or a corner.
pub type Key = [i64; 3];

/// Position of lattice point `key`.
#[inline]
pub fn lattice_point(origin: &Vec3, w: f64, key: Key) -> Vec3 {
    origin + Vec3::new(key[0] as f64, key[1] as f64, key[2] as f64) * w
}

/// Local corner `c` of a voxel has offset `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
#[inline]
fn corner_offset(c: usize) -> Key {
    [(c & 1) as i64, (c >> 1 & 1) as i64, (c >> 2 & 1) as i64]
}

fn add(a: Key, b: Key) -> Key {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn unit(axis: usize) -> Key {
    let mut k = [0; 3];
    k[axis] = 1;
    k
}

fn block_of(key: Key) -> Key {
    key.map(|k| k.div_euclid(BLOCK))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractOptions {
    pub width: f64,
    /// Lattice anchor; defaults to the minimum corner of the centers' bounding box.
    pub origin: Option<Vec3>,
    pub max_corner_samples: usize,
}

impl ExtractOptions {
    pub fn new(width: f64) -> Self {
        ExtractOptions {
            width,
            origin: None,
            max_corner_samples: DEFAULT_MAX_CORNER_SAMPLES,
        }
    }
}

/// A voxel whose eight corners are all defined and not all of one sign.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveVoxel {
    pub key: Key,
    pub corners: [f64; 8],
}

/// Active voxels sorted by (block, key).
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    pub width: f64,
    pub origin: Vec3,
    pub voxels: Vec<ActiveVoxel>,
    pub blocks: usize,
    pub corner_samples: usize,
    index: HashMap<Key, usize>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn get(&self, key: &Key) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn voxel_box(&self, key: Key) -> (Vec3, Vec3) {
        let lo = lattice_point(&self.origin, self.width, key);
        (lo, lo + Vec3::repeat(self.width))
    }

    fn from_voxels(width: f64, origin: Vec3, voxels: Vec<ActiveVoxel>, blocks: usize, corner_samples: usize) -> Self {
        let index = voxels.iter().enumerate().map(|(i, v)| (v.key, i)).collect();
        VoxelGrid {
            width,
            origin,
            voxels,
            blocks,
            corner_samples,
            index,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeIntersection {
    pub position: Vec3,
    pub normal: Vec3,
}

/// One dual vertex per active voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualVertex {
    pub position: Vec3,
    pub normal: Vec3,
}

fn is_positive(v: f64) -> bool {
    v > 0.0
}

fn voxel_is_active(corners: &[f64; 8]) -> bool {
    let p = is_positive(corners[0]);
    corners[1..].iter().any(|&c| is_positive(c) != p)
}

fn default_origin(field: &CsrbfField) -> Vec3 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    for c in field.centers() {
        lo = lo.inf(c);
    }
    lo
}

fn blocks_touched(field: &CsrbfField, origin: &Vec3, w: f64) -> Vec<Key> {
    let mut set = HashSet::new();
    for (c, &rho) in field.centers().iter().zip(field.rho()) {
        let lo = block_of([0, 1, 2].map(|a| ((c[a] - rho - origin[a]) / w).floor() as i64));
        let hi = block_of([0, 1, 2].map(|a| ((c[a] + rho - origin[a]) / w).floor() as i64));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    set.insert([x, y, z]);
                }
            }
        }
    }
    let mut blocks: Vec<Key> = set.into_iter().collect();
    blocks.sort_unstable();
    blocks
}

fn block_candidates(field: &CsrbfField, origin: &Vec3, w: f64, block: Key) -> Vec<usize> {
    let base = block.map(|b| b * BLOCK);
    let center = lattice_point(origin, w, base) + Vec3::repeat(0.5 * BLOCK as f64 * w);
    let half_diagonal = 0.5 * 3f64.sqrt() * BLOCK as f64 * w;
    let mut cands = Vec::new();
    field.candidates(&center, half_diagonal * (1.0 + 1e-9), &mut cands);
    cands
}

/// Samples the corners of every voxel overlapping a support ball and keeps
/// the active ones.
pub fn collect_active_voxels(field: &CsrbfField, opts: &ExtractOptions) -> Result<VoxelGrid> {
    let w = opts.width;
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::InvalidInput(format!("voxel width must be positive, got {w}")));
    }
    if field.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let origin = opts.origin.unwrap_or_else(|| default_origin(field));
    let per_axis = BLOCK as usize + 1;
    let per_block = per_axis.pow(3);
    // Coarse guard before enumerating blocks: the summed ball volumes in voxels
    // overcount overlaps, so only far-out requests are rejected here.
    let ball_voxels: f64 = field.rho().iter().map(|&r| (2.0 * r / w + 1.0).powi(3)).sum();
    let cap = opts.max_corner_samples as f64;
    let too_large = |estimated: f64| Error::ActiveSetTooLarge {
        estimated: estimated.min(usize::MAX as f64) as usize,
        cap: opts.max_corner_samples,
        suggested_width: w * (estimated / cap).cbrt() * 1.05,
    };
    if ball_voxels > 64.0 * cap {
        return Err(too_large(ball_voxels));
    }
    let blocks = blocks_touched(field, &origin, w);
    let corner_samples = blocks.len() * per_block;
    if corner_samples as f64 > cap {
        return Err(too_large(corner_samples as f64));
    }

    let per_block_voxels: Vec<Vec<ActiveVoxel>> = blocks
        .par_iter()
        .map(|&block| {
            let cands = block_candidates(field, &origin, w, block);
            let base = block.map(|b| b * BLOCK);
            let vals = field.lattice_values(&origin, w, base, per_axis, &cands);
            let at = |x: usize, y: usize, z: usize| vals[(z * per_axis + y) * per_axis + x];
            let mut out = Vec::new();
            let b = BLOCK as usize;
            for z in 0..b {
                for y in 0..b {
                    for x in 0..b {
                        let mut corners = [0.0; 8];
                        let mut defined = true;
                        for (c, slot) in corners.iter_mut().enumerate() {
                            match at(x + (c & 1), y + (c >> 1 & 1), z + (c >> 2 & 1)) {
                                Some(v) => *slot = v,
                                None => {
                                    defined = false;
                                    break;
                                }
                            }
                        }
                        if defined && voxel_is_active(&corners) {
                            out.push(ActiveVoxel {
                                key: add(base, [x as i64, y as i64, z as i64]),
                                corners,
                            });
                        }
                    }
                }
            }
            out
        })
        .collect();
    let n_blocks = blocks.len();
    let voxels = per_block_voxels.into_iter().flatten().collect();
    Ok(VoxelGrid::from_voxels(w, origin, voxels, n_blocks, corner_samples))
}

/// Bisection for the zero of `f` on the segment `[a, b]`, where `fa` and `fb`
/// have opposite signs. The normal is the normalized gradient at the root, or
/// the edge direction oriented toward increasing `f` when the gradient
/// vanishes or the root is uncovered.
pub fn edge_root(
    field: &CsrbfField,
    a: &Vec3,
    fa: f64,
    b: &Vec3,
    fb: f64,
    tol: f64,
    candidates: &[usize],
) -> EdgeIntersection {
    debug_assert!(is_positive(fa) != is_positive(fb));
    let (mut lo, mut hi) = (*a, *b);
    let lo_positive = is_positive(fa);
    let mut root = None;
    for _ in 0..ROOT_MAX_ITERATIONS {
        let mid = lo + (hi - lo) * 0.5;
        let Some(fm) = field.value_with(&mid, candidates) else {
            // Uncovered gap inside the segment: fall back to linear interpolation.
            root = Some(a + (b - a) * (fa / (fa - fb)));
            break;
        };
        if fm.abs() <= tol {
            root = Some(mid);
            break;
        }
        if is_positive(fm) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let position = root.unwrap_or_else(|| lo + (hi - lo) * 0.5);
    let fallback = {
        let dir = (b - a).normalize();
        if is_positive(fb) {
            dir
        } else {
            -dir
        }
    };
    let normal = match field.sample_with(&position, candidates) {
        Some(s) if s.gradient.norm() > 1e-300 && s.gradient.norm().is_finite() => s.gradient.normalize(),
        _ => fallback,
    };
    EdgeIntersection { position, normal }
}

/// Minimizer of `Σ ((v - q_j)·n_j)²` nearest the centroid of the `q_j`, with
/// eigenvalues below `QEF_TRUNCATION · count` dropped, clamped to `[lo, hi]`.
pub fn place_vertex(intersections: &[EdgeIntersection], lo: &Vec3, hi: &Vec3) -> Vec3 {
    assert!(
        !intersections.is_empty(),
        "place_vertex needs at least one intersection"
    );
    let k = intersections.len() as f64;
    let centroid = intersections.iter().map(|e| e.position).sum::<Vec3>() / k;
    let mut ata = Matrix3::zeros();
    let mut atb = Vec3::zeros();
    for e in intersections {
        let n = e.normal;
        ata += n * n.transpose();
        atb += n * n.dot(&(e.position - centroid));
    }
    let eig = SymmetricEigen::new(ata);
    let threshold = QEF_TRUNCATION * k;
    let mut offset = Vec3::zeros();
    for i in 0..3 {
        let lambda = eig.eigenvalues[i];
        if lambda > threshold {
            let u = eig.eigenvectors.column(i);
            offset += u * (u.dot(&atb) / lambda);
        }
    }
    let v = centroid + offset;
    v.sup(lo).inf(hi)
}

/// The 12 edges of a voxel as (local start corner, axis).
const VOXEL_EDGES: [(usize, usize); 12] = [
    (0, 0),
    (2, 0),
    (4, 0),
    (6, 0),
    (0, 1),
    (1, 1),
    (4, 1),
    (5, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (3, 2),
];

/// Places one vertex per active voxel. Voxels of a block share their
/// candidate list and edge roots.
pub fn compute_vertices(field: &CsrbfField, grid: &VoxelGrid) -> Vec<DualVertex> {
    let w = grid.width;
    let origin = grid.origin;
    let tol = ROOT_TOL_FACTOR * w;
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=grid.voxels.len() {
        if i == grid.voxels.len() || block_of(grid.voxels[i].key) != block_of(grid.voxels[start].key) {
            ranges.push(start..i);
            start = i;
        }
    }
    let chunks: Vec<Vec<DualVertex>> = ranges
        .into_par_iter()
        .map(|range| {
            let voxels = &grid.voxels[range];
            let cands = block_candidates(field, &origin, w, block_of(voxels[0].key));
            let mut cache: HashMap<(Key, usize), EdgeIntersection> = HashMap::new();
            let mut hits = Vec::with_capacity(12);
            let mut local = Vec::new();
            voxels
                .iter()
                .map(|v| {
                    hits.clear();
                    let (lo, hi) = grid.voxel_box(v.key);
                    // Centers whose support meets the voxel box cover every point on its edges.
                    local.clear();
                    local.extend(cands.iter().copied().filter(|&j| {
                        let c = field.centers()[j];
                        let r = field.rho()[j];
                        (c.sup(&lo).inf(&hi) - c).norm_squared() < r * r
                    }));
                    for &(c0, axis) in &VOXEL_EDGES {
                        let c1 = c0 | (1 << axis);
                        let (f0, f1) = (v.corners[c0], v.corners[c1]);
                        if is_positive(f0) == is_positive(f1) {
                            continue;
                        }
                        let k0 = add(v.key, corner_offset(c0));
                        let hit = *cache.entry((k0, axis)).or_insert_with(|| {
                            let a = lattice_point(&origin, w, k0);
                            let b = lattice_point(&origin, w, add(k0, unit(axis)));
                            edge_root(field, &a, f0, &b, f1, tol, &local)
                        });
                        hits.push(hit);
                    }
                    let position = place_vertex(&hits, &lo, &hi);
                    let sum: Vec3 = hits.iter().map(|h| h.normal).sum();
                    let normal = if sum.norm() > 0.0 {
                        sum.normalize()
                    } else {
                        hits[0].normal
                    };
                    DualVertex { position, normal }
                })
                .collect()
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

/// One quad per sign-change lattice edge whose four surrounding voxels are
/// all active, wound so its normal points toward increasing `f`.
pub fn emit_quads(grid: &VoxelGrid, vertices: &[DualVertex]) -> QuadMesh {
    assert_eq!(grid.voxels.len(), vertices.len());
    let mut faces = Vec::new();
    for (i, v) in grid.voxels.iter().enumerate() {
        for a in 0..3 {
            let (u, w) = ((a + 1) % 3, (a + 2) % 3);
            // Edge along `a` through the voxel's corner at +u, +w; the four voxels
            // around it are v, v+u, v+w, v+u+w.
            let c0 = (1 << u) | (1 << w);
            let c1 = c0 | (1 << a);
            let (f0, f1) = (v.corners[c0], v.corners[c1]);
            if is_positive(f0) == is_positive(f1) {
                continue;
            }
            let ku = add(v.key, unit(u));
            let kw = add(v.key, unit(w));
            let (Some(iu), Some(iuw), Some(iw)) = (grid.get(&ku), grid.get(&add(ku, unit(w))), grid.get(&kw)) else {
                continue;
            };
            // Counter-clockwise about +a.
            let quad = [i, iu, iuw, iw];
            faces.push(if is_positive(f1) {
                Face::Quad(quad)
            } else {
                Face::Quad([quad[0], quad[3], quad[2], quad[1]])
            });
        }
    }
    QuadMesh {
        vertices: vertices.iter().map(|v| v.position).collect(),
        vertex_normals: vertices.iter().map(|v| v.normal).collect(),
        faces,
    }
}

/// Drops connected components with fewer than `min_faces` faces, always
/// keeping the largest one, and then unreferenced vertices.
pub fn remove_small_fragments(mesh: &QuadMesh, min_faces: usize) -> QuadMesh {
    let (labels, count) = mesh.face_components();
    if count == 0 {
        return mesh.clone();
    }
    let mut sizes = vec![0usize; count];
    for &l in &labels {
        sizes[l] += 1;
    }
    let largest = (0..count).max_by_key(|&l| (sizes[l], std::cmp::Reverse(l))).unwrap();
    mesh.retain_faces(|f| {
        let l = labels[f];
        l == largest || sizes[l] >= min_faces
    })
}

/// Number of face components with at least `min_faces` faces, computed
/// through vertex adjacency independently of [`QuadMesh::face_components`].
pub fn count_components(mesh: &QuadMesh, min_faces: usize) -> usize {
    let mut uf = UnionFind::new(mesh.faces.len());
    let mut first_face = vec![usize::MAX; mesh.vertices.len()];
    for (fi, f) in mesh.faces.iter().enumerate() {
        for &v in f.indices() {
            if first_face[v] == usize::MAX {
                first_face[v] = fi;
            } else {
                uf.union(first_face[v], fi);
            }
        }
    }
    let mut sizes: HashMap<usize, usize> = HashMap::new();
    for fi in 0..mesh.faces.len() {
        *sizes.entry(uf.find(fi)).or_default() += 1;
    }
    sizes.values().filter(|&&s| s >= min_faces).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractStats {
    pub blocks: usize,
    pub corner_samples: usize,
    pub active_voxels: usize,
    pub faces: usize,
}

/// Full extraction: active voxels, dual vertices and quads. Unreferenced
/// vertices (voxels that contribute to no quad) are dropped.
pub fn extract(field: &CsrbfField, opts: &ExtractOptions) -> Result<(QuadMesh, ExtractStats)> {
    let grid = collect_active_voxels(field, opts)?;
    let vertices = compute_vertices(field, &grid);
    let mesh = emit_quads(&grid, &vertices).retain_faces(|_| true);
    let stats = ExtractStats {
        blocks: grid.blocks,
        corner_samples: grid.corner_samples,
        active_voxels: grid.len(),
        faces: mesh.faces.len(),
    };
    Ok((mesh, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::build_octree;
    use crate::quasi::{build_model, tune_parameters};
    use crate::synth::sphere_points;

    fn plane_field() -> CsrbfField {
        // A single center with b along +z: f = c1(r) b_z z, zero on z = 0.
        CsrbfField::new(vec![Vec3::zeros()], vec![1.0], None, vec![Vec3::z()]).unwrap()
    }

    fn grid_of(keys: &[(Key, [f64; 8])], w: f64) -> VoxelGrid {
        let voxels = keys
            .iter()
            .map(|&(key, corners)| ActiveVoxel { key, corners })
            .collect();
        VoxelGrid::from_voxels(w, Vec3::zeros(), voxels, 0, 0)
    }

    fn dummy_vertices(n: usize) -> Vec<DualVertex> {
        vec![
            DualVertex {
                position: Vec3::zeros(),
                normal: Vec3::z()
            };
            n
        ]
    }

    #[test]
    fn activity_rules() {
        assert!(!voxel_is_active(&[1.0; 8]));
        assert!(!voxel_is_active(&[-1.0; 8]));
        assert!(!voxel_is_active(&[0.0; 8]));
        let mut c = [1.0; 8];
        c[5] = -0.5;
        assert!(voxel_is_active(&c));
    }

    #[test]
    fn undefined_corners_exclude_voxels() {
        let field = plane_field();
        let grid = collect_active_voxels(
            &field,
            &ExtractOptions {
                origin: Some(Vec3::repeat(-1.05)),
                ..ExtractOptions::new(0.1)
            },
        )
        .unwrap();
        assert!(!grid.is_empty());
        for v in &grid.voxels {
            for c in 0..8 {
                let p = lattice_point(&grid.origin, grid.width, add(v.key, corner_offset(c)));
                assert!(p.norm() < 1.0);
                assert_eq!(field.value(&p), Some(v.corners[c]));
            }
            assert!(voxel_is_active(&v.corners));
        }
    }

    #[test]
    fn lattice_values_match_pointwise_bitwise() {
        let ps = sphere_points(400, 1.0, 3);
        let idx = build_octree(&ps, 16).unwrap();
        let tp = tune_parameters(&ps, &idx, 1.0, false).unwrap();
        let model = build_model(&ps, &tp).unwrap();
        let field = model.field();
        let origin = Vec3::new(-1.0, -1.0, -1.0);
        let w = 0.037;
        let base = [20, 24, 3];
        let n = 9;
        let mut cands = Vec::new();
        field.candidates(&lattice_point(&origin, w, base), 2.0, &mut cands);
        let vals = field.lattice_values(&origin, w, base, n, &cands);
        let mut defined = 0;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let p = lattice_point(&origin, w, [base[0] + x as i64, base[1] + y as i64, base[2] + z as i64]);
                    let v = vals[(z * n + y) * n + x];
                    assert_eq!(v.map(f64::to_bits), field.value(&p).map(f64::to_bits));
                    defined += v.is_some() as usize;
                }
            }
        }
        assert!(defined > 0);
    }

    #[test]
    fn isolated_voxel_gives_no_faces() {
        let mut c = [1.0; 8];
        c[0] = -1.0;
        let grid = grid_of(&[([0, 0, 0], c)], 1.0);
        assert!(emit_quads(&grid, &dummy_vertices(1)).faces.is_empty());
    }

    #[test]
    fn block_around_one_edge_gives_one_quad() {
        // Lattice edge from corner (1,1,0) to (1,1,1) is the only sign change
        // among the edges interior to the 2×2×2 block: f < 0 only at (1,1,0).
        let f = |k: Key| if k == [1, 1, 0] { -1.0 } else { 1.0 };
        let mut vox = Vec::new();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    let key = [x, y, z];
                    let corners = std::array::from_fn(|c| f(add(key, corner_offset(c))));
                    if voxel_is_active(&corners) {
                        vox.push((key, corners));
                    }
                }
            }
        }
        let grid = grid_of(&vox, 1.0);
        let mesh = emit_quads(&grid, &dummy_vertices(vox.len()));
        assert_eq!(mesh.faces.len(), 1);
        let quad = mesh.faces[0]
            .indices()
            .iter()
            .map(|&i| grid.voxels[i].key)
            .collect::<Vec<_>>();
        // f increases along +z, so the quad winds counter-clockwise about +z.
        assert_eq!(quad, vec![[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]);
    }

    #[test]
    fn orthogonal_planes_vertex_is_their_corner() {
        let p = Vec3::new(0.31, 0.52, 0.77);
        let mut hits = Vec::new();
        for axis in 0..3 {
            for k in 0..2 {
                let mut q = Vec3::new(0.1 + 0.8 * k as f64, 0.9 - 0.7 * k as f64, 0.2 + 0.3 * k as f64);
                q[axis] = p[axis];
                let mut n = Vec3::zeros();
                n[axis] = 1.0;
                hits.push(EdgeIntersection { position: q, normal: n });
            }
        }
        let v = place_vertex(&hits, &Vec3::zeros(), &Vec3::repeat(1.0));
        assert!((v - p).amax() < 1e-9, "{v:?}");
    }

    #[test]
    fn coplanar_intersections_give_centroid_projection() {
        let n = Vec3::new(1.0, 2.0, 2.0).normalize();
        let hits: Vec<_> = [
            Vec3::new(0.2, 0.1, 0.3),
            Vec3::new(0.4, 0.3, 0.2),
            Vec3::new(0.1, 0.5, 0.6),
        ]
        .iter()
        .map(|q| EdgeIntersection {
            position: *q - n * n.dot(q),
            normal: n,
        })
        .collect();
        let v = place_vertex(&hits, &Vec3::repeat(-1.0), &Vec3::repeat(1.0));
        let centroid = hits.iter().map(|h| h.position).sum::<Vec3>() / 3.0;
        assert!((v - centroid).norm() < 1e-12);
        let single = place_vertex(&hits[..1], &Vec3::repeat(-1.0), &Vec3::repeat(1.0));
        assert_eq!(single, hits[0].position);
    }

    #[test]
    fn vertex_is_clamped() {
        let hits = [
            EdgeIntersection {
                position: Vec3::new(0.5, 0.0, 0.0),
                normal: Vec3::x(),
            },
            EdgeIntersection {
                position: Vec3::new(0.0, 5.0, 0.0),
                normal: Vec3::y(),
            },
        ];
        let v = place_vertex(&hits, &Vec3::zeros(), &Vec3::repeat(1.0));
        assert_eq!(v, Vec3::new(0.5, 1.0, 0.0));
    }

    #[test]
    fn edge_root_on_linear_field() {
        // Along z near the center the plane field is ≈ 20 z.
        let field = plane_field();
        let mut cands = Vec::new();
        field.candidates(&Vec3::zeros(), 1.0, &mut cands);
        let a = Vec3::new(0.0, 0.0, -0.01);
        let b = Vec3::new(0.0, 0.0, 0.03);
        let (fa, fb) = (field.value(&a).unwrap(), field.value(&b).unwrap());
        let hit = edge_root(&field, &a, fa, &b, fb, 1e-9, &cands);
        assert!(field.value(&hit.position).unwrap().abs() <= 1e-9);
        assert!(hit.position.z.abs() < 1e-10);
        assert!((hit.normal - Vec3::z()).norm() < 1e-12);
        let back = edge_root(&field, &b, fb, &a, fa, 1e-9, &cands);
        assert!((back.normal - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn edge_root_symmetric_midpoint() {
        let field = plane_field();
        let cands = vec![0];
        let a = Vec3::new(0.1, 0.0, -0.05);
        let b = Vec3::new(0.1, 0.0, 0.05);
        let hit = edge_root(
            &field,
            &a,
            field.value(&a).unwrap(),
            &b,
            field.value(&b).unwrap(),
            1e-12,
            &cands,
        );
        assert_eq!(hit.position, Vec3::new(0.1, 0.0, 0.0));
    }

    #[test]
    fn sphere_mesh_is_closed_and_accurate() {
        let ps = sphere_points(3000, 1.0, 9);
        let idx = build_octree(&ps, 16).unwrap();
        let tp = tune_parameters(&ps, &idx, 1.0, false).unwrap();
        let model = build_model(&ps, &tp).unwrap();
        let w = 0.04;
        let (mesh, stats) = extract(model.field(), &ExtractOptions::new(w)).unwrap();
        mesh.validate().unwrap();
        assert!(mesh.is_watertight(), "boundary edges: {}", mesh.boundary_edge_count());
        let area = 4.0 * std::f64::consts::PI;
        let ratio = stats.active_voxels as f64 / (area / (w * w));
        assert!((1.0 / 3.0..3.0).contains(&ratio), "active ratio {ratio}");
        let max_err = mesh.vertices.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
        assert!(max_err < w, "max radial error {max_err}");
        for (v, n) in mesh.vertices.iter().zip(&mesh.vertex_normals) {
            assert!(n.dot(&v.normalize()) > 0.9);
        }
        // Face normals (Newell) point outward.
        for f in &mesh.faces {
            let idx = f.indices();
            let mut normal = Vec3::zeros();
            let mut centroid = Vec3::zeros();
            for k in 0..idx.len() {
                let (p, q) = (mesh.vertices[idx[k]], mesh.vertices[idx[(k + 1) % idx.len()]]);
                normal += p.cross(&q);
                centroid += p;
            }
            assert!(normal.dot(&centroid) > 0.0);
        }
    }

    #[test]
    fn extraction_is_independent_of_thread_count() {
        let ps = sphere_points(800, 1.0, 2);
        let idx = build_octree(&ps, 16).unwrap();
        let tp = tune_parameters(&ps, &idx, 1.0, false).unwrap();
        let model = build_model(&ps, &tp).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| extract(model.field(), &ExtractOptions::new(0.05)).unwrap().0)
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn memory_cap_suggests_width() {
        let field = plane_field();
        let err = collect_active_voxels(
            &field,
            &ExtractOptions {
                max_corner_samples: 1000,
                ..ExtractOptions::new(0.01)
            },
        )
        .unwrap_err();
        match err {
            Error::ActiveSetTooLarge { suggested_width, .. } => assert!(suggested_width > 0.01),
            e => panic!("unexpected {e}"),
        }
    }

    fn two_component_mesh() -> QuadMesh {
        let mut mesh = crate::synth::icosphere(1.0, 2);
        let base = mesh.vertices.len();
        for k in 0..4 {
            mesh.vertices.push(Vec3::new(3.0 + k as f64, 0.0, (k % 2) as f64));
            mesh.vertex_normals.push(Vec3::z());
        }
        mesh.faces.push(Face::Tri([base, base + 1, base + 2]));
        mesh.faces.push(Face::Tri([base + 1, base + 3, base + 2]));
        mesh
    }

    #[test]
    fn floaters_are_removed() {
        let mesh = two_component_mesh();
        assert_eq!(count_components(&mesh, 1), 2);
        let cleaned = remove_small_fragments(&mesh, 10);
        assert_eq!(cleaned.faces.len(), mesh.faces.len() - 2);
        assert_eq!(count_components(&cleaned, 1), count_components(&mesh, 10));
        assert!(cleaned.is_watertight());
        let kept = remove_small_fragments(&cleaned, 10);
        assert_eq!(kept, cleaned);
    }

    #[test]
    fn largest_component_always_kept() {
        let mesh = two_component_mesh();
        let cleaned = remove_small_fragments(&mesh, 1_000_000);
        assert_eq!(cleaned.faces.len(), mesh.faces.len() - 2);
    }
}
