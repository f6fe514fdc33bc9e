//! Conduction-velocity tensor algebra: the head parameterization
//! `[a, e1, e2]` (cosine of the fiber angle and the two squared velocities),
//! assembly of the 2x2 tangent-basis tensor, projection to global
//! coordinates, and fiber extraction.

use crate::{Mat2, Mat3, Vec3};
use serde::{Deserialize, Serialize};

/// Squared-velocity floor: (0.01 cm/ms)^2.
pub const E_MIN: f64 = 1e-4;
/// Softplus scale; the nominal physiological cap (0.2 cm/ms)^2 sits near
/// raw ~ 10, far outside typical network output range.
pub const E_SCALE: f64 = (0.04 - E_MIN) / 10.0;

/// Tensor head at a point: `a` = cos of the fiber angle in the tangent basis,
/// `e1`/`e2` = squared longitudinal/transverse velocities (cm^2/ms^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorHead {
    pub a: f64,
    pub e1: f64,
    pub e2: f64,
}

/// 2x2 symmetric positive definite tensor in a tangent basis.
#[derive(Debug, Clone, Copy)]
pub struct LocalTensor2(pub Mat2);

/// Map raw network outputs to a valid head: `a = tanh(r0)`,
/// `e_i = E_MIN + softplus(r_i) * E_SCALE`. Smooth, strictly monotone per
/// coordinate, and the head invariants hold for every finite input.
pub fn head_squash(raw: [f64; 3]) -> TensorHead {
    TensorHead {
        a: raw[0].tanh(),
        e1: E_MIN + softplus(raw[1]) * E_SCALE,
        e2: E_MIN + softplus(raw[2]) * E_SCALE,
    }
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid (the softplus derivative).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl TensorHead {
    /// sin of the fiber angle under the convention sin = +sqrt(1 - a^2)
    /// (angles in [0, pi], covering all unoriented directions).
    pub fn sin_alpha(&self) -> f64 {
        (1.0 - self.a * self.a).max(0.0).sqrt()
    }
}

/// D_B = R diag(e1, e2) R^T in the tangent basis; eigenvalues are exactly
/// {e1, e2}.
pub fn assemble_local(head: &TensorHead) -> LocalTensor2 {
    let c = head.a;
    let s = head.sin_alpha();
    let (e1, e2) = (head.e1, head.e2);
    let d00 = c * c * e1 + s * s * e2;
    let d11 = s * s * e1 + c * c * e2;
    let d01 = c * s * (e1 - e2);
    LocalTensor2(Mat2::new(d00, d01, d01, d11))
}

/// Project a tangent-basis tensor to global coordinates:
/// D = P D_B P^T with P = [p1 p2]. Symmetric PSD with D n = 0 by structure.
pub fn project_global(local: &LocalTensor2, p1: Vec3, p2: Vec3) -> Mat3 {
    let p = nalgebra::Matrix3x2::from_columns(&[p1, p2]);
    p * local.0 * p.transpose()
}

/// Fiber direction along the e1 axis: l = cos(alpha) p1 + sin(alpha) p2.
pub fn fiber_vector(head: &TensorHead, p1: Vec3, p2: Vec3) -> Vec3 {
    p1 * head.a + p2 * head.sin_alpha()
}

/// Principal eigen-direction of the head's tensor: the e1 axis when
/// e1 >= e2, its tangent-plane perpendicular otherwise. Downstream fiber
/// reporting uses this so e1/e2 label swaps are harmless.
pub fn principal_fiber(head: &TensorHead, p1: Vec3, p2: Vec3) -> Vec3 {
    let c = head.a;
    let s = head.sin_alpha();
    if head.e1 >= head.e2 {
        p1 * c + p2 * s
    } else {
        p1 * (-s) + p2 * c
    }
}

/// Eigen-decomposition of a symmetric 2x2 matrix via the stable two-angle
/// closed form; returns (low, high, unit eigenvector of the high eigenvalue).
pub fn sym2_eigen(m: &Mat2) -> (f64, f64, [f64; 2]) {
    let p = m[(0, 0)];
    let q = m[(1, 1)];
    let r = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mid = 0.5 * (p + q);
    let radius = (0.25 * (p - q) * (p - q) + r * r).sqrt();
    let low = mid - radius;
    let high = mid + radius;
    // eigenvector for `high`: angle = atan2(2r, p - q) / 2
    let theta = 0.5 * (2.0 * r).atan2(p - q);
    (low, high, [theta.cos(), theta.sin()])
}

/// Matrix logarithm of a symmetric positive definite 2x2 matrix.
pub fn sym2_log(m: &Mat2) -> Mat2 {
    sym2_map(m, f64::ln)
}

/// Matrix exponential of a symmetric 2x2 matrix.
pub fn sym2_exp(m: &Mat2) -> Mat2 {
    sym2_map(m, f64::exp)
}

fn sym2_map(m: &Mat2, f: impl Fn(f64) -> f64) -> Mat2 {
    let (low, high, v) = sym2_eigen(m);
    let (c, s) = (v[0], v[1]);
    let fl = f(low);
    let fh = f(high);
    // f(M) = fh * vv^T + fl * (I - vv^T)
    Mat2::new(
        fh * c * c + fl * s * s,
        (fh - fl) * c * s,
        (fh - fl) * c * s,
        fh * s * s + fl * c * c,
    )
}
