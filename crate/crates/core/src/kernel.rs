//! Wendland's C2 compactly supported kernel `φ(t) = (1-t)^4 (4t+1)` on
//! `t = r/ρ ∈ [0, 1)`, with its exact gradient and Hessian in 3D.

use std::ops::BitOr;

use nalgebra::Matrix3;

use crate::Vec3;

/// Which derivatives to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Want(u8);

impl Want {
    pub const VALUE: Want = Want(1);
    pub const GRADIENT: Want = Want(2);
    pub const HESSIAN: Want = Want(4);
    pub const ALL: Want = Want(7);

    pub fn contains(self, other: Want) -> bool {
        self.0 & other.0 == other.0
    }
}

impl BitOr for Want {
    type Output = Want;
    fn bitor(self, rhs: Want) -> Want {
        Want(self.0 | rhs.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    pub gradient: Vec3,
    pub hessian: Matrix3<f64>,
    pub support: f64,
    pub inside_support: bool,
}

impl KernelEval {
    fn outside(support: f64) -> Self {
        KernelEval {
            value: 0.0,
            gradient: Vec3::zeros(),
            hessian: Matrix3::zeros(),
            support,
            inside_support: false,
        }
    }
}

/// Radial profile `φ(t)`; zero for `t ≥ 1`.
#[inline]
pub fn profile(t: f64) -> f64 {
    if !(t < 1.0) {
        return 0.0;
    }
    let u = 1.0 - t;
    let u2 = u * u;
    u2 * u2 * (4.0 * t + 1.0)
}

/// `φ_ρ(r)`, the kernel scaled to support `rho`.
#[inline]
pub fn phi(r: f64, rho: f64) -> f64 {
    profile(r / rho)
}

/// Evaluates the kernel centered at `center` with support `rho` at `x`.
pub fn eval(center: &Vec3, rho: f64, x: &Vec3, want: Want) -> KernelEval {
    debug_assert!(rho > 0.0);
    let d = x - center;
    let r2 = d.norm_squared();
    if r2 >= rho * rho {
        return KernelEval::outside(rho);
    }
    let r = r2.sqrt();
    let t = r / rho;
    let u = 1.0 - t;
    let u2 = u * u;
    let u3 = u2 * u;
    let mut out = KernelEval::outside(rho);
    out.inside_support = true;
    if want.contains(Want::VALUE) {
        out.value = u2 * u2 * (4.0 * t + 1.0);
    }
    let c1 = 20.0 / (rho * rho) * u3;
    if want.contains(Want::GRADIENT) {
        out.gradient = -c1 * d;
    }
    if want.contains(Want::HESSIAN) {
        let mut h = Matrix3::from_diagonal_element(-c1);
        // The outer-product term vanishes as r -> 0; its limit is exactly zero.
        if r > 0.0 {
            let c2 = 60.0 / (rho * rho * rho) * u2 / r;
            h += c2 * d * d.transpose();
        }
        out.hessian = h;
    }
    out
}

/// Closed-form magnitude bounds for the kernel derivatives as tabulated for
/// the error-bound analysis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivativeBounds {
    /// Bound on `|∂φ/∂x|`: `5/(4ρ)`.
    pub grad_bound: f64,
    /// Bound on `|∂²φ/∂x²|`: `20/ρ²`.
    pub second_diag_bound: f64,
    /// Bound on `|∂²φ/∂x∂y|`: `15/(2ρ²)`.
    pub second_mixed_bound: f64,
}

pub fn derivative_bounds(rho: f64) -> DerivativeBounds {
    DerivativeBounds {
        grad_bound: 5.0 / (4.0 * rho),
        second_diag_bound: 20.0 / (rho * rho),
        second_mixed_bound: 15.0 / (2.0 * rho * rho),
    }
}

/// Pointwise majorant of `|∂φ/∂x|` at distance `r`: `(20/ρ)(1 - r/ρ)^3 (r/ρ)`.
pub fn grad_majorant(r: f64, rho: f64) -> f64 {
    let t = r / rho;
    if t >= 1.0 {
        return 0.0;
    }
    20.0 / rho * (1.0 - t).powi(3) * t
}
