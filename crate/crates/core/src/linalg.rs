//! Small dense helpers for the planar problems.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;

pub type Mat2 = Matrix2<f64>;
pub type Vec2 = Vector2<f64>;

/// Eigenvalues of a real 2x2 matrix, ordered by ascending modulus.
pub fn eigenvalues2(m: &Mat2) -> [Complex64; 2] {
    let half_tr = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let det = m.determinant();
    let disc = half_tr * half_tr - det;
    let mut out = if disc >= 0.0 {
        let sq = disc.sqrt();
        // avoid cancellation in the smaller root
        let big = if half_tr >= 0.0 { half_tr + sq } else { half_tr - sq };
        let small = if big != 0.0 { det / big } else { half_tr - sq };
        [Complex64::new(small, 0.0), Complex64::new(big, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [Complex64::new(half_tr, -im), Complex64::new(half_tr, im)]
    };
    if out[0].norm() > out[1].norm() {
        out.swap(0, 1);
    }
    out
}

/// Unit eigenvector of `m` for the real eigenvalue `lambda`.
pub fn eigenvector2(m: &Mat2, lambda: f64) -> Vec2 {
    let a = m - Mat2::identity() * lambda;
    // null vector of a: orthogonal to its dominant row
    let r0 = Vec2::new(a[(0, 0)], a[(0, 1)]);
    let r1 = Vec2::new(a[(1, 0)], a[(1, 1)]);
    let row = if r0.norm() >= r1.norm() { r0 } else { r1 };
    let v = if row.norm() == 0.0 {
        Vec2::new(1.0, 0.0)
    } else {
        Vec2::new(-row[1], row[0])
    };
    v.normalize()
}

/// Distance from `p` to the segment `[a, b]` and the clamped projection
/// parameter along it.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    ((a + ab * s - p).norm(), s)
}
