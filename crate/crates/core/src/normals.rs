//! Normal estimation by principal component analysis of small neighborhoods,
//! with signs taken from a reference orientation.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::octree::PointOctree;
use crate::{Error, HermitePointSet, Result, Vec3};

/// Neighbors per point used by default.
pub const DEFAULT_NEIGHBORS: usize = 6;
/// The two smallest eigenvalues closer than this fraction of the largest one
/// leave the normal direction ambiguous.
pub const AMBIGUITY_RATIO: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NormalReport {
    /// Neighborhoods whose smallest eigenvector is not unique.
    pub low_confidence: usize,
    /// Neighborhoods with all points coincident; the reference normal is kept.
    pub degenerate: usize,
}

enum Estimate {
    Normal(Vec3, bool),
    Degenerate,
}

fn estimate_one(points: &[Vec3], neighborhood: &[usize]) -> Estimate {
    let k = neighborhood.len() as f64;
    let mean = neighborhood.iter().map(|&j| points[j]).sum::<Vec3>() / k;
    let mut cov = Matrix3::zeros();
    for &j in neighborhood {
        let d = points[j] - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1, l2) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if !(l2 > 0.0) {
        return Estimate::Degenerate;
    }
    let normal = eig.eigenvectors.column(order[0]).normalize();
    Estimate::Normal(normal, l1 - l0 <= AMBIGUITY_RATIO * l2)
}

/// Normal of each point from itself and its `k` nearest neighbors, flipped to
/// agree with `reference`.
pub fn estimate_normals_pca(points: &[Vec3], k: usize, reference: &[Vec3]) -> Result<(HermitePointSet, NormalReport)> {
    if reference.len() != points.len() {
        return Err(Error::InvalidInput("reference normals must match the points".into()));
    }
    if points.len() < k + 1 {
        return Err(Error::TooFewPoints(points.len()));
    }
    let idx = PointOctree::build(points, crate::octree::DEFAULT_LEAF_CAPACITY)?;
    let estimates: Vec<(Vec3, bool, bool)> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut hood: Vec<usize> = idx.knn(&points[i], k, Some(i))?.into_iter().map(|(j, _)| j).collect();
            hood.push(i);
            Ok(match estimate_one(points, &hood) {
                Estimate::Normal(n, ambiguous) => {
                    let n = if n.dot(&reference[i]) < 0.0 { -n } else { n };
                    (n, ambiguous, false)
                }
                Estimate::Degenerate => (reference[i], false, true),
            })
        })
        .collect::<Result<_>>()?;
    let mut report = NormalReport::default();
    let mut normals = Vec::with_capacity(points.len());
    for (n, ambiguous, degenerate) in estimates {
        report.low_confidence += ambiguous as usize;
        report.degenerate += degenerate as usize;
        normals.push(n);
    }
    if report.degenerate > 0 {
        log::warn!(
            "{} coincident neighborhoods kept their reference normals",
            report.degenerate
        );
    }
    let (ps, _) = HermitePointSet::new(points.to_vec(), normals)?;
    Ok((ps, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{plane_grid, sphere_points};

    #[test]
    fn plane_normals_follow_reference() {
        let ps = plane_grid(10);
        let reference: Vec<Vec3> = ps.points.iter().map(|p| Vec3::new(p.x, 0.3, 1.0).normalize()).collect();
        let (out, report) = estimate_normals_pca(&ps.points, 6, &reference).unwrap();
        assert!(out.normals.iter().all(|n| (n - Vec3::z()).norm() < 1e-12));
        assert_eq!(report, NormalReport::default());
    }

    #[test]
    fn collinear_points_are_low_confidence() {
        let points: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let reference = vec![Vec3::y(); 10];
        let (out, report) = estimate_normals_pca(&points, 6, &reference).unwrap();
        assert_eq!(report.low_confidence, 10);
        for n in &out.normals {
            assert!(n.x.abs() < 1e-12 && n.dot(&Vec3::y()) >= 0.0);
        }
    }

    #[test]
    fn coincident_points_keep_reference() {
        let points = vec![Vec3::new(1.0, 2.0, 3.0); 8];
        let reference = vec![Vec3::x(); 8];
        let (out, report) = estimate_normals_pca(&points, 6, &reference).unwrap();
        assert_eq!(report.degenerate, 8);
        assert!(out.normals.iter().all(|n| *n == Vec3::x()));
    }

    #[test]
    fn sphere_normals_are_radial() {
        let ps = sphere_points(20_000, 1.0, 7);
        let (out, _) = estimate_normals_pca(&ps.points, 6, &ps.normals).unwrap();
        let cos5 = 5f64.to_radians().cos();
        let worst = out
            .normals
            .iter()
            .zip(&ps.points)
            .map(|(n, p)| n.dot(&p.normalize()))
            .fold(1.0, f64::min);
        assert!(worst >= cos5, "worst cosine {worst}");
    }

    #[test]
    fn scale_invariant() {
        let ps = sphere_points(500, 1.0, 2);
        let scaled: Vec<Vec3> = ps.points.iter().map(|p| p * 37.5).collect();
        let (a, _) = estimate_normals_pca(&ps.points, 6, &ps.normals).unwrap();
        let (b, _) = estimate_normals_pca(&scaled, 6, &ps.normals).unwrap();
        for (x, y) in a.normals.iter().zip(&b.normals) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn too_few_points() {
        let pts = vec![Vec3::zeros(); 4];
        assert!(matches!(
            estimate_normals_pca(&pts, 6, &pts),
            Err(Error::TooFewPoints(4))
        ));
    }
}
