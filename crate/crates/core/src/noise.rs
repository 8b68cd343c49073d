//! Synthetic noise: a fraction of the points is pushed along its normal by a
//! half-normal magnitude clamped to a cap proportional to the bbox diagonal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::{Error, HermitePointSet, Result};

/// Standard deviation as a fraction of the cap, so that 3σ meets the cap.
pub const SIGMA_OF_CAP: f64 = 1.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Percentage of displaced points, also scaling the magnitude cap.
    pub delta_percent: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseReport {
    /// Ascending indices of the displaced points.
    pub displaced: Vec<usize>,
    /// Signed displacement along the normal, parallel to `displaced`.
    pub magnitudes: Vec<f64>,
    pub diagonal: f64,
    pub sigma: f64,
    pub cap: f64,
}

/// Displaces `ceil(δ/100 · n)` randomly chosen points along their own normals
/// by `min(|N(0, σ²)|, cap)` with `cap = δ·d/1000` and `σ = cap/3`, where `d`
/// is the bbox diagonal. Normals are left unchanged.
pub fn inject_noise(ps: &HermitePointSet, spec: &NoiseSpec) -> Result<(HermitePointSet, NoiseReport)> {
    let delta = spec.delta_percent;
    if !(0.0..=100.0).contains(&delta) {
        return Err(Error::InvalidInput(format!(
            "noise percentage must lie in [0, 100], got {delta}"
        )));
    }
    let n = ps.len();
    let diagonal = ps.bbox.diagonal();
    let cap = delta * diagonal / 1000.0;
    let sigma = cap * SIGMA_OF_CAP;
    let count = ((delta / 100.0 * n as f64).ceil() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut displaced = rand::seq::index::sample(&mut rng, n, count).into_vec();
    displaced.sort_unstable();
    let mut out = ps.clone();
    let mut magnitudes = Vec::with_capacity(count);
    let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    for &i in &displaced {
        let d = match &normal {
            Some(g) => rng.sample::<f64, _>(g).abs().min(cap),
            None => 0.0,
        };
        out.points[i] += ps.normals[i] * d;
        magnitudes.push(d);
    }
    out.bbox = crate::Aabb::from_points(&out.points);
    Ok((
        out,
        NoiseReport {
            displaced,
            magnitudes,
            diagonal,
            sigma,
            cap,
        },
    ))
}
