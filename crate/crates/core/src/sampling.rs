//! Latin hypercube design over a box-shaped parameter domain, and the affine
//! map onto `[-1, 1]` used to condition the learned models.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDomain {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterDomain {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = Self { names, lower, upper };
        d.validate()?;
        Ok(d)
    }

    /// Default ranges of the frame benchmark.
    pub fn benchmark() -> Self {
        let names = crate::fom::PARAMETER_NAMES.map(String::from).to_vec();
        Self {
            names,
            lower: vec![0.25, 0.8e8, 1.5e6, 5.0, 185.0, 0.25],
            upper: vec![0.50, 1.2e8, 3.0e6, 15.0, 235.0, 0.75],
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.is_empty() {
            return Err(Error::config("parameter domain has no dimensions"));
        }
        if self.lower.len() != self.names.len() || self.upper.len() != self.names.len() {
            return Err(Error::config(format!(
                "{} names but {} lower / {} upper bounds",
                self.names.len(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            if self.names[..i].contains(name) {
                return Err(Error::config(format!("duplicate parameter name `{name}`")));
            }
            if !(self.lower[i] < self.upper[i]) {
                return Err(Error::config(format!(
                    "bounds of `{name}` are not increasing: [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    pub fn normalize(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_len(values)?;
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi) = (self.lower[i], self.upper[i]);
                if !(lo..=hi).contains(&v) {
                    return Err(Error::OutOfRange { name: self.names[i].clone(), value: v, lower: lo, upper: hi });
                }
                Ok(2.0 * (v - lo) / (hi - lo) - 1.0)
            })
            .collect()
    }

    pub fn denormalize(&self, normalized: &[f64]) -> Result<Vec<f64>> {
        self.check_len(normalized)?;
        normalized
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if !(-1.0..=1.0).contains(&x) {
                    return Err(Error::OutOfRange { name: self.names[i].clone(), value: x, lower: -1.0, upper: 1.0 });
                }
                let (lo, hi) = (self.lower[i], self.upper[i]);
                Ok(lo + 0.5 * (x + 1.0) * (hi - lo))
            })
            .collect()
    }

    pub fn sample(&self, values: Vec<f64>) -> Result<ParameterSample> {
        let normalized = self.normalize(&values)?;
        Ok(ParameterSample { values, normalized })
    }

    /// Centre of the domain.
    pub fn centroid(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.dim() {
            return Err(Error::shape(format!("expected {} parameter values, got {}", self.dim(), values.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSample {
    pub values: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl ParameterSample {
    /// Euclidean distance in normalized coordinates.
    pub fn distance(&self, other: &[f64]) -> f64 {
        self.normalized.iter().zip(other).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// `n` samples with exactly one per equiprobable stratum in every dimension,
/// placed uniformly inside their strata.
pub fn lhs_sample(domain: &ParameterDomain, n: usize, seed: u64) -> Result<Vec<ParameterSample>> {
    domain.validate()?;
    if n == 0 {
        return Err(Error::invalid("LHS needs at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = domain.dim();
    let mut unit = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(&mut rng);
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            unit[i][j] = (s as f64 + u) / n as f64;
        }
    }
    unit.into_iter()
        .map(|u| {
            let values: Vec<f64> = u
                .iter()
                .enumerate()
                .map(|(j, &t)| (domain.lower[j] + t * (domain.upper[j] - domain.lower[j])).min(domain.upper[j]))
                .collect();
            domain.sample(values)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_box(d: usize) -> ParameterDomain {
        ParameterDomain::new((0..d).map(|i| format!("x{i}")).collect(), vec![0.0; d], vec![1.0; d]).unwrap()
    }

    #[test]
    fn single_sample_lies_inside() {
        let dom = ParameterDomain::benchmark();
        let s = lhs_sample(&dom, 1, 3).unwrap();
        assert_eq!(s.len(), 1);
        for (j, v) in s[0].values.iter().enumerate() {
            assert!((dom.lower[j]..=dom.upper[j]).contains(v));
        }
    }

    #[test]
    fn ten_samples_fill_ten_intervals() {
        let s = lhs_sample(&unit_box(1), 10, 11).unwrap();
        let mut v: Vec<f64> = s.iter().map(|s| s.values[0]).collect();
        v.sort_by(f64::total_cmp);
        for (j, x) in v.iter().enumerate() {
            assert!(*x >= j as f64 / 10.0 && *x < (j + 1) as f64 / 10.0, "{x} not in stratum {j}");
        }
    }

    #[test]
    fn same_seed_same_design() {
        let dom = ParameterDomain::benchmark();
        assert_eq!(lhs_sample(&dom, 8, 7).unwrap(), lhs_sample(&dom, 8, 7).unwrap());
        assert_ne!(lhs_sample(&dom, 8, 7).unwrap(), lhs_sample(&dom, 8, 8).unwrap());
    }

    #[test]
    fn normalization_endpoints() {
        let dom = ParameterDomain::benchmark();
        assert!(dom.normalize(&dom.lower).unwrap().iter().all(|&x| x == -1.0));
        assert!(dom.normalize(&dom.centroid()).unwrap().iter().all(|&x| x.abs() < 1e-15));
        assert!(dom.normalize(&dom.upper).unwrap().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn out_of_bounds_is_an_error() {
        let dom = ParameterDomain::benchmark();
        let mut v = dom.centroid();
        v[3] = 16.0;
        match dom.normalize(&v) {
            Err(Error::OutOfRange { name, .. }) => assert_eq!(name, "f_but"),
            other => panic!("{other:?}"),
        }
        assert!(dom.denormalize(&[0.0, 0.0, 0.0, 1.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn invalid_domains_rejected() {
        assert!(ParameterDomain::new(vec!["a".into(), "a".into()], vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(ParameterDomain::new(vec!["a".into()], vec![1.0], vec![1.0]).is_err());
        assert!(ParameterDomain::new(vec!["a".into()], vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(lhs_sample(&unit_box(2), 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn every_stratum_holds_one_sample(n in 1usize..40, d in 1usize..6, seed in any::<u64>()) {
            let s = lhs_sample(&unit_box(d), n, seed).unwrap();
            for j in 0..d {
                let mut hit = vec![0; n];
                for smp in &s {
                    let k = ((smp.values[j] * n as f64).floor() as usize).min(n - 1);
                    hit[k] += 1;
                }
                prop_assert!(hit.iter().all(|&c| c == 1));
                prop_assert!(s.iter().all(|smp| (-1.0..=1.0).contains(&smp.normalized[j])));
            }
        }

        #[test]
        fn normalize_roundtrip(t in proptest::collection::vec(0.0f64..=1.0, 6)) {
            let dom = ParameterDomain::benchmark();
            let v: Vec<f64> = t.iter().enumerate().map(|(j, x)| dom.lower[j] + x * (dom.upper[j] - dom.lower[j])).collect();
            let back = dom.denormalize(&dom.normalize(&v).unwrap()).unwrap();
            for j in 0..6 {
                prop_assert!((back[j] - v[j]).abs() <= 1e-14 * v[j].abs().max(1.0));
            }
        }
    }
}
