use crate::{Error, Result, Vec3};

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut bb = Aabb::empty();
        for p in points {
            bb.grow(p);
        }
        bb
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let d = if p[a] < self.min[a] {
                self.min[a] - p[a]
            } else if p[a] > self.max[a] {
                p[a] - self.max[a]
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2
    }
}

/// Oriented point cloud: positions with unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitePointSet {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub bbox: Aabb,
}

impl HermitePointSet {
    /// Builds a point set, renormalizing every normal to unit length.
    ///
    /// Points whose normal has zero (or non-finite) length are dropped; the
    /// number of dropped points is returned alongside the set.
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<(Self, usize)> {
        if points.len() != normals.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        let mut kept_p = Vec::with_capacity(points.len());
        let mut kept_n = Vec::with_capacity(points.len());
        let mut dropped = 0;
        for (p, n) in points.into_iter().zip(normals) {
            let len = n.norm();
            if !(len > 0.0 && len.is_finite()) || !p.iter().all(|c| c.is_finite()) {
                dropped += 1;
                continue;
            }
            kept_p.push(p);
            kept_n.push(n / len);
        }
        if kept_p.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let bbox = Aabb::from_points(&kept_p);
        Ok((
            HermitePointSet {
                points: kept_p,
                normals: kept_n,
                bbox,
            },
            dropped,
        ))
    }

    /// Builds a point set from data whose normals are already unit length.
    pub fn from_unit(points: Vec<Vec3>, normals: Vec<Vec3>) -> Self {
        assert_eq!(points.len(), normals.len());
        let bbox = Aabb::from_points(&points);
        HermitePointSet { points, normals, bbox }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Subset in the order given by `indices`.
    pub fn select(&self, indices: &[usize]) -> HermitePointSet {
        HermitePointSet::from_unit(
            indices.iter().map(|&i| self.points[i]).collect(),
            indices.iter().map(|&i| self.normals[i]).collect(),
        )
    }
}

/// Uniform scale followed by translation: `x' = scale * x + translate`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub translate: Vec3,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            translate: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.translate
    }

    pub fn inverse(&self) -> Similarity {
        Similarity {
            scale: 1.0 / self.scale,
            translate: -self.translate / self.scale,
        }
    }

    /// Maps `x'` back to `x`; numerically tighter than applying [`Self::inverse`].
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        (p - self.translate) / self.scale
    }
}

/// Centers the cloud at the origin and scales it uniformly so that its
/// longest bounding-box axis spans exactly `[-1, 1]`.
pub fn normalize_to_unit_box(ps: &HermitePointSet) -> Result<(HermitePointSet, Similarity)> {
    if ps.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let extent = ps.bbox.extent().max();
    if !(extent > 0.0) {
        return Err(Error::DegenerateExtent);
    }
    let center = ps.bbox.center();
    let scale = 2.0 / extent;
    let tf = Similarity {
        scale,
        translate: -center * scale,
    };
    let points: Vec<Vec3> = ps.points.iter().map(|p| (p - center) * scale).collect();
    let mut out = HermitePointSet::from_unit(points, ps.normals.clone());
    // Pin the longest axis to exactly [-1, 1] despite rounding.
    let axis = ps.bbox.extent().imax();
    out.bbox.min[axis] = -1.0;
    out.bbox.max[axis] = 1.0;
    for p in &mut out.points {
        p[axis] = p[axis].clamp(-1.0, 1.0);
    }
    Ok((out, tf))
}
