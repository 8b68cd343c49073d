//! Synthetic oriented samples of analytic shapes, used by tests, benchmarks
//! and the CLI's self-contained experiments.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::mesh::{Face, QuadMesh};
use crate::{HermitePointSet, Vec3};

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// `n` uniform samples of the sphere of radius `radius` at the origin, with
/// outward normals.
pub fn sphere_points(n: usize, radius: f64, seed: u64) -> HermitePointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals: Vec<Vec3> = (0..n).map(|_| random_direction(&mut rng)).collect();
    let points = normals.iter().map(|d| d * radius).collect();
    HermitePointSet::from_unit(points, normals)
}

/// Sphere with `n_dense` samples on the `x < 0` half and `n_sparse` on the
/// `x ≥ 0` half.
pub fn two_density_sphere(n_dense: usize, n_sparse: usize, seed: u64) -> HermitePointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normals = Vec::with_capacity(n_dense + n_sparse);
    for (count, negative) in [(n_dense, true), (n_sparse, false)] {
        for _ in 0..count {
            let mut d = random_direction(&mut rng);
            if (d.x < 0.0) != negative {
                d.x = -d.x;
            }
            normals.push(d);
        }
    }
    HermitePointSet::from_unit(normals.clone(), normals)
}

/// `n` area-uniform samples of a torus around the z axis.
pub fn torus_points(n: usize, major: f64, minor: f64, seed: u64) -> HermitePointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    while points.len() < n {
        let u = rng.random_range(0.0..std::f64::consts::TAU);
        let v = rng.random_range(0.0..std::f64::consts::TAU);
        // Area element is proportional to (major + minor cos v).
        if rng.random_range(0.0..major + minor) > major + minor * v.cos() {
            continue;
        }
        let normal = Vec3::new(v.cos() * u.cos(), v.cos() * u.sin(), v.sin());
        let ring = Vec3::new(major * u.cos(), major * u.sin(), 0.0);
        points.push(ring + normal * minor);
        normals.push(normal);
    }
    HermitePointSet::from_unit(points, normals)
}

/// Regular `k × k` grid on the square `[-1,1]²` of the plane `z = 0` with
/// normals `+z`.
pub fn plane_grid(k: usize) -> HermitePointSet {
    let step = 2.0 / (k - 1) as f64;
    let points: Vec<Vec3> = (0..k * k)
        .map(|i| Vec3::new(-1.0 + (i % k) as f64 * step, -1.0 + (i / k) as f64 * step, 0.0))
        .collect();
    let n = points.len();
    HermitePointSet::from_unit(points, vec![Vec3::z(); n])
}

/// Subdivided icosahedron projected onto a sphere, as a triangle mesh.
pub fn icosphere(radius: f64, subdivisions: usize) -> QuadMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::from(*v).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    QuadMesh {
        vertex_normals: verts.clone(),
        vertices: verts.into_iter().map(|v| v * radius).collect(),
        faces: faces.into_iter().map(Face::Tri).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_have_unit_normals() {
        for ps in [
            sphere_points(100, 2.0, 1),
            torus_points(100, 0.7, 0.25, 2),
            two_density_sphere(50, 10, 3),
        ] {
            assert!(ps.normals.iter().all(|n| (n.norm() - 1.0).abs() < 1e-12));
        }
        let tp = torus_points(200, 0.7, 0.25, 4);
        for p in &tp.points {
            let ring = (p.x * p.x + p.y * p.y).sqrt() - 0.7;
            assert!(((ring * ring + p.z * p.z).sqrt() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn two_density_split() {
        let ps = two_density_sphere(300, 30, 5);
        assert_eq!(ps.points.iter().filter(|p| p.x < 0.0).count(), 300);
    }

    #[test]
    fn icosphere_closed() {
        let m = icosphere(1.0, 3);
        assert_eq!(m.faces.len(), 20 * 64);
        assert!(m.is_watertight());
        assert!((m.total_area() - 4.0 * std::f64::consts::PI).abs() < 0.1);
    }
}
