//! Strain invariants feeding the convex energy network.
//!
//! The input vector is x(F) = (I1, I2, J, -J) with
//!
//! * I1 = tr(C), I2 = 1/2 (I1^2 - tr(C^2)), C = F^T F,
//! * J = det F.
//!
//! Polyconvexity of the energy follows when a convex, componentwise
//! non-decreasing function is composed with this set, because I1 and I2 are
//! convex in F and the cofactor, and the pair (J, -J) makes any monotone
//! convex image convex in det F. Objectivity and isotropy hold because the
//! set depends on F only through the principal invariants of C.

use nalgebra::Matrix3;

/// Number of invariants, the input width of the energy network.
pub const N_INVARIANTS: usize = 4;

/// Invariant vector at the undeformed state F = I: (3, 3, 1, -1).
pub fn reference_invariants() -> [f64; N_INVARIANTS] {
    [3.0, 3.0, 1.0, -1.0]
}

/// Evaluate x(F) = (I1, I2, J, -J).
pub fn invariants(f: &Matrix3<f64>) -> [f64; N_INVARIANTS] {
    let c = f.transpose() * f;
    let i1 = c.trace();
    let i2 = 0.5 * (i1 * i1 - (c * c).trace());
    let j = f.determinant();
    [i1, i2, j, -j]
}

/// Derivatives dx_k/dF as four 3x3 tensors:
///
/// * dI1/dF = 2 F,
/// * dI2/dF = 2 (I1 F - F C),
/// * dJ/dF  = J F^{-T},
/// * d(-J)/dF = -J F^{-T}.
///
/// Requires det F > 0 for the inverse transpose.
pub fn invariant_derivatives(f: &Matrix3<f64>) -> [Matrix3<f64>; N_INVARIANTS] {
    let c = f.transpose() * f;
    let i1 = c.trace();
    let j = f.determinant();
    let f_inv_t = f
        .try_inverse()
        .expect("invariant derivatives need det F > 0")
        .transpose();
    let d_i1 = 2.0 * f;
    let d_i2 = 2.0 * (i1 * f - f * c);
    let d_j = j * f_inv_t;
    [d_i1, d_i2, d_j, -d_j]
}
