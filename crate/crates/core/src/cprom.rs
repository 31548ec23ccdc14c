//! Coefficient-matrix interpolation on the tangent space of the Grassmannian.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::orthonormalize;
use crate::sampling::ParameterSample;

/// Thin SVD `m = P·diag(s)·Qᵀ` with `P` of the same shape as `m`.
fn thin(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let p = svd.u.expect("requested U");
    let qt = svd.v_t.expect("requested Vᵀ");
    (p, svd.singular_values.iter().copied().collect(), qt.transpose())
}

/// Tangent image of `span(x)` at `span(x_ref)`.
pub fn grassmann_log(x_ref: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x_ref.shape() != x.shape() {
        return Err(Error::shape(format!("log map between {:?} and {:?}", x_ref.shape(), x.shape())));
    }
    let x_ref = orthonormalize(x_ref);
    let x = orthonormalize(x);
    let cross = x_ref.transpose() * &x;
    let smallest = cross.clone().svd(false, false).singular_values.min();
    if smallest < 1e-10 {
        return Err(Error::Singular(format!(
            "reference and target subspaces are (nearly) orthogonal (smallest cosine {smallest:.2e}); pick a closer reference"
        )));
    }
    let inv = cross.try_inverse().ok_or_else(|| Error::Singular("X_refᵀX is not invertible".into()))?;
    let projected = &x - &x_ref * (x_ref.transpose() * &x);
    let m = projected * inv;
    let (p, s, q) = thin(&m);
    let atan = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(s.len(), s.iter().map(|v| v.atan())));
    Ok(p * atan * q.transpose())
}

/// Point on the Grassmannian reached from `span(x_ref)` along tangent `gamma`,
/// returned with orthonormal columns.
pub fn grassmann_exp(x_ref: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x_ref.shape() != gamma.shape() {
        return Err(Error::shape(format!("exp map with {:?} and {:?}", x_ref.shape(), gamma.shape())));
    }
    let x_ref = orthonormalize(x_ref);
    let (p, s, q) = thin(gamma);
    let cos = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(s.len(), s.iter().map(|v| v.cos())));
    let sin = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(s.len(), s.iter().map(|v| v.sin())));
    let x = (&x_ref * &q * cos + p * sin) * q.transpose();
    Ok(orthonormalize(&x))
}

/// Flips columns of `x` whose correlation with the matching column of
/// `reference` is negative.
pub fn align_signs(x: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for j in 0..x.ncols().min(reference.ncols()) {
        if x.column(j).dot(&reference.column(j)) < 0.0 {
            out.column_mut(j).neg_mut();
        }
    }
    out
}

/// Training data for coefficient interpolation: one `r̃ × r` matrix per sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpromModel {
    pub samples: Vec<ParameterSample>,
    pub coefficients: Vec<DMatrix<f64>>,
    pub v_global: DMatrix<f64>,
    /// Neighbours taking part in each interpolation.
    pub k_int: usize,
    /// Inverse-distance weighting exponent.
    pub power: f64,
}

impl CpromModel {
    pub fn new(samples: Vec<ParameterSample>, coefficients: Vec<DMatrix<f64>>, v_global: DMatrix<f64>) -> Result<Self> {
        if samples.len() != coefficients.len() {
            return Err(Error::shape(format!("{} samples for {} coefficient matrices", samples.len(), coefficients.len())));
        }
        if samples.len() < 2 {
            return Err(Error::invalid("coefficient interpolation needs at least two training samples"));
        }
        let shape = coefficients[0].shape();
        if shape.0 != v_global.ncols() || coefficients.iter().any(|x| x.shape() != shape) {
            return Err(Error::shape("coefficient matrices must all be r̃ × r with r̃ matching the global basis"));
        }
        Ok(Self { samples, coefficients, v_global, k_int: 4, power: 2.0 })
    }

    /// Indices and normalized distances of the `k_int` nearest samples.
    fn neighbours(&self, query: &[f64]) -> Vec<(usize, f64)> {
        let mut d: Vec<(usize, f64)> = self.samples.iter().enumerate().map(|(i, s)| (i, s.distance(query))).collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        d.truncate(self.k_int.max(1).min(d.len()));
        d
    }

    /// Interpolated coefficient matrix (orthonormal columns) at a normalized query.
    pub fn interpolate_coefficients(&self, query: &[f64]) -> Result<DMatrix<f64>> {
        let nb = self.neighbours(query);
        let (reference, d0) = nb[0];
        let x_ref = orthonormalize(&self.coefficients[reference]);
        if d0 < 1e-12 || nb.len() == 1 {
            return Ok(x_ref);
        }
        let weights: Vec<f64> = nb.iter().map(|&(_, d)| d.powf(-self.power)).collect();
        let total: f64 = weights.iter().sum();
        let mut gamma = DMatrix::zeros(x_ref.nrows(), x_ref.ncols());
        for (&(i, _), w) in nb.iter().zip(&weights) {
            if i == reference {
                continue;
            }
            let xi = align_signs(&orthonormalize(&self.coefficients[i]), &x_ref);
            gamma += grassmann_log(&x_ref, &xi)? * (w / total);
        }
        grassmann_exp(&x_ref, &gamma)
    }

    /// Local basis `V(p) = V_global · X(p)`, re-orthonormalized.
    pub fn interpolate_basis(&self, query: &[f64]) -> Result<DMatrix<f64>> {
        let x = self.interpolate_coefficients(query)?;
        Ok(orthonormalize(&(&self.v_global * x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{orthonormality_defect, subspace_distance};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orth(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        orthonormalize(&DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)))
    }

    fn sample(x: &[f64]) -> ParameterSample {
        ParameterSample { values: x.to_vec(), normalized: x.to_vec() }
    }

    #[test]
    fn log_at_base_point_is_zero() {
        let x = random_orth(7, 3, 1);
        assert!(grassmann_log(&x, &x).unwrap().norm() < 1e-12);
        let r = random_orth(3, 3, 2);
        assert!(grassmann_log(&x, &(&x * r)).unwrap().norm() < 1e-12);
    }

    #[test]
    fn exp_of_zero_returns_reference() {
        let x = random_orth(7, 3, 3);
        let y = grassmann_exp(&x, &DMatrix::zeros(7, 3)).unwrap();
        assert!(subspace_distance(&x, &y) < 1e-12);
    }

    #[test]
    fn orthogonal_target_is_singular() {
        let q = random_orth(6, 4, 4);
        let a = q.columns(0, 2).into_owned();
        let b = q.columns(2, 2).into_owned();
        assert!(matches!(grassmann_log(&a, &b), Err(Error::Singular(_))));
    }

    #[test]
    fn nodes_are_reproduced() {
        let vg = random_orth(12, 6, 5);
        let xs: Vec<_> = (0..4).map(|i| random_orth(6, 2, 10 + i)).collect();
        let samples: Vec<_> = (0..4).map(|i| sample(&[i as f64 * 0.5 - 0.75, 0.1])).collect();
        let model = CpromModel::new(samples.clone(), xs.clone(), vg.clone()).unwrap();
        for i in 0..4 {
            let v = model.interpolate_basis(&samples[i].normalized).unwrap();
            assert!(subspace_distance(&v, &(&vg * &xs[i])) <= 1e-8);
        }
    }

    #[test]
    fn two_point_query_at_first() {
        let vg = DMatrix::identity(5, 5);
        let a = random_orth(5, 2, 20);
        let b = random_orth(5, 2, 21);
        let model = CpromModel::new(vec![sample(&[0.0]), sample(&[1.0])], vec![a.clone(), b], vg).unwrap();
        assert!(subspace_distance(&model.interpolate_basis(&[0.0]).unwrap(), &a) <= 1e-8);
    }

    /// `span{cos(t)e1 + sin(t)e3, e2}`, a geodesic in Gr(2, 4).
    fn rotating(t: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 2, &[t.cos(), 0.0, 0.0, 1.0, t.sin(), 0.0, 0.0, 0.0])
    }

    #[test]
    fn rotating_subspace_midpoint() {
        let ts = [0.0, 0.4, 0.8];
        let samples: Vec<_> = ts.iter().map(|t| sample(&[*t])).collect();
        let xs: Vec<_> = ts.iter().map(|&t| rotating(t)).collect();
        let mut model = CpromModel::new(samples, xs, DMatrix::identity(4, 4)).unwrap();
        model.k_int = 2;
        let v = model.interpolate_basis(&[0.2]).unwrap();
        assert!(subspace_distance(&v, &rotating(0.2)) <= 1e-3);
        assert!(orthonormality_defect(&v) <= 1e-10);
    }

    #[test]
    fn constructor_checks() {
        let vg = DMatrix::identity(4, 4);
        assert!(CpromModel::new(vec![sample(&[0.0])], vec![rotating(0.0)], vg.clone()).is_err());
        assert!(CpromModel::new(vec![sample(&[0.0]), sample(&[1.0])], vec![rotating(0.0)], vg.clone()).is_err());
        assert!(CpromModel::new(
            vec![sample(&[0.0]), sample(&[1.0])],
            vec![rotating(0.0), rotating(0.1)],
            DMatrix::identity(5, 5)
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn log_exp_roundtrip(seed in any::<u64>(), eps in 0.01f64..0.5) {
            let x = random_orth(9, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let noise = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-1.0..1.0));
            let y = orthonormalize(&(&x + noise * eps));
            let back = grassmann_exp(&x, &grassmann_log(&x, &y).unwrap()).unwrap();
            prop_assert!(subspace_distance(&back, &y) <= 1e-8);
            prop_assert!(orthonormality_defect(&back) <= 1e-10);
        }

        #[test]
        fn interpolation_ignores_column_signs(seed in any::<u64>(), q in -1.0f64..1.0, flips in proptest::collection::vec(any::<bool>(), 8)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = random_orth(6, 2, seed);
            let xs: Vec<_> = (0..4).map(|_| {
                let n = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-0.2..0.2));
                orthonormalize(&(&base + n))
            }).collect();
            let samples: Vec<_> = (0..4).map(|i| sample(&[i as f64 * 0.6 - 0.9])).collect();
            let flipped: Vec<_> = xs.iter().enumerate().map(|(i, x)| {
                let mut y = x.clone();
                for j in 0..2 {
                    if flips[2 * i + j] { y.column_mut(j).neg_mut(); }
                }
                y
            }).collect();
            let vg = DMatrix::identity(6, 6);
            let a = CpromModel::new(samples.clone(), xs, vg.clone()).unwrap().interpolate_basis(&[q]).unwrap();
            let b = CpromModel::new(samples, flipped, vg).unwrap().interpolate_basis(&[q]).unwrap();
            prop_assert!(subspace_distance(&a, &b) <= 1e-8);
            prop_assert_eq!(a.ncols(), 2);
        }
    }
}
