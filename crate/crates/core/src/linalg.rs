//! Small dense linear-algebra helpers shared by the basis machinery.

use nalgebra::{DMatrix, DVector};

/// Thin QR orthonormalization with a positive-diagonal convention on R, so
/// that an already orthonormal input with positive column orientation is
/// returned unchanged up to round-off.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    assert!(cols <= rows, "cannot orthonormalize {cols} columns in R^{rows}");
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Frobenius norm of `VᵀV − I`.
pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    (g - DMatrix::identity(v.ncols(), v.ncols())).norm()
}

/// Principal angles (radians, ascending) between the column spans of `a` and `b`.
///
/// Both inputs are orthonormalized first. Small angles are recovered from the
/// sines (projection residual) so they stay accurate near zero.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    assert_eq!(a.nrows(), b.nrows(), "principal angles need a shared ambient space");
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    let cross = qa.transpose() * &qb;
    let k = qa.ncols().min(qb.ncols());
    let mut cosines: Vec<f64> = cross
        .svd(false, false)
        .singular_values
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    cosines.sort_by(|x, y| y.total_cmp(x));
    cosines.truncate(k);

    let residual = &qb - &qa * (qa.transpose() * &qb);
    let mut sines: Vec<f64> = residual
        .svd(false, false)
        .singular_values
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    sines.sort_by(|x, y| x.total_cmp(y));
    sines.truncate(k);
    // Ascending sines pair with descending cosines.
    cosines
        .iter()
        .zip(sines.iter().chain(std::iter::repeat(&0.0)))
        .map(|(&c, &s)| s.atan2(c))
        .collect()
}

/// Largest principal angle between two subspaces.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    principal_angles(a, b).into_iter().fold(0.0, f64::max)
}

/// Thin SVD returning `(U, σ, Vᵀ)` with singular values sorted descending.
pub fn thin_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let mut u = svd.u.expect("requested U");
    let mut vt = svd.v_t.expect("requested Vᵀ");
    let mut s = svd.singular_values;
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    if order.iter().enumerate().any(|(i, &o)| i != o) {
        let u0 = u.clone();
        let vt0 = vt.clone();
        let s0 = s.clone();
        for (dst, &src) in order.iter().enumerate() {
            u.set_column(dst, &u0.column(src));
            vt.set_row(dst, &vt0.row(src));
            s[dst] = s0[src];
        }
    }
    (u, s, vt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormalize_keeps_orthonormal_input() {
        let v = DMatrix::<f64>::identity(5, 2);
        let q = orthonormalize(&v);
        assert!((q - v).norm() < 1e-14);
    }

    #[test]
    fn principal_angle_of_known_rotation() {
        let theta = 0.3_f64;
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 1, &[theta.cos(), theta.sin(), 0.0]);
        let angles = principal_angles(&a, &b);
        assert!((angles[0] - theta).abs() < 1e-14);
    }

    #[test]
    fn tiny_angles_are_resolved() {
        let theta = 1e-10_f64;
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[theta.cos(), theta.sin()]);
        assert!((subspace_distance(&a, &b) - theta).abs() < 1e-20);
    }

    #[test]
    fn thin_svd_is_sorted() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0]);
        let (u, s, vt) = thin_svd(&m);
        assert!(s[0] >= s[1]);
        let rebuilt = &u * DMatrix::from_diagonal(&s) * &vt;
        assert!((rebuilt - m).norm() < 1e-12);
    }
}
