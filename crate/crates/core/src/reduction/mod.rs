//! Snapshot assembly, POD bases and coefficient matrices.

pub mod rom;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use rom::{rom_simulate, rom_simulate_model, RomSolution, Strategy};

/// Column-stacked displacement histories, one `n × N_t` block per sample.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub matrix: DMatrix<f64>,
    pub n_t: usize,
    pub n_samples: usize,
}

impl SnapshotSet {
    pub fn n_dofs(&self) -> usize {
        self.matrix.nrows()
    }

    /// Block of sample `i` (`n × N_t`).
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        self.matrix.columns(i * self.n_t, self.n_t).into_owned()
    }
}

/// Stacks `N_t × n` displacement histories into `Ŝ = [Û(p₁), …, Û(p_Ns)]`.
pub fn assemble_snapshots(histories: &[&DMatrix<f64>]) -> Result<SnapshotSet> {
    let first = histories.first().ok_or_else(|| Error::invalid("no snapshots to assemble"))?;
    let (n_t, n) = first.shape();
    for (i, h) in histories.iter().enumerate() {
        if h.shape() != (n_t, n) {
            return Err(Error::shape(format!(
                "sample {i} has {} steps x {} dofs, expected {n_t} x {n}",
                h.nrows(),
                h.ncols()
            )));
        }
    }
    let mut matrix = DMatrix::zeros(n, n_t * histories.len());
    for (i, h) in histories.iter().enumerate() {
        matrix.columns_mut(i * n_t, n_t).copy_from(&h.transpose());
    }
    Ok(SnapshotSet { matrix, n_t, n_samples: histories.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Rank(usize),
    /// Smallest rank whose retained squared-singular-value fraction reaches the threshold.
    Energy(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionBasis {
    /// `n × r`, orthonormal columns ordered by decreasing singular value.
    pub modes: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub energy_fraction: f64,
}

impl ReductionBasis {
    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }
}

/// Left singular vectors and singular values (descending) of `s`.
fn left_svd(s: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let svd = s.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let modes = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    (modes, order.iter().map(|&i| sv[i]).collect())
}

pub fn pod_basis(s: &DMatrix<f64>, truncation: Truncation) -> Result<ReductionBasis> {
    if s.is_empty() {
        return Err(Error::invalid("empty snapshot matrix"));
    }
    let (u, sv) = left_svd(s);
    let total: f64 = sv.iter().map(|x| x * x).sum();
    let tol = sv[0] * s.nrows().max(s.ncols()) as f64 * f64::EPSILON;
    let numerical_rank = sv.iter().filter(|&&x| x > tol).count().max(1);
    let r = match truncation {
        Truncation::Rank(r) => {
            if r == 0 {
                return Err(Error::invalid("requested rank must be at least 1"));
            }
            if r > numerical_rank {
                tracing::warn!(requested = r, rank = numerical_rank, "POD rank clamped to numerical rank");
            }
            r.min(numerical_rank)
        }
        Truncation::Energy(e) => {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::invalid(format!("energy threshold {e} must lie in (0, 1]")));
            }
            let mut acc = 0.0;
            let mut r = sv.len();
            for (i, x) in sv.iter().enumerate() {
                acc += x * x;
                if total == 0.0 || acc / total >= e {
                    r = i + 1;
                    break;
                }
            }
            r.min(numerical_rank)
        }
    };
    let retained: f64 = sv[..r].iter().map(|x| x * x).sum();
    Ok(ReductionBasis {
        modes: u.columns(0, r).into_owned(),
        singular_values: sv[..r].to_vec(),
        energy_fraction: if total > 0.0 { retained / total } else { 1.0 },
    })
}

/// `X = V_globalᵀ · V_local`.
pub fn compute_coefficients(v_local: &DMatrix<f64>, v_global: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v_local.nrows() != v_global.nrows() {
        return Err(Error::shape(format!(
            "local basis has {} rows, global basis {}",
            v_local.nrows(),
            v_global.nrows()
        )));
    }
    if v_global.ncols() < v_local.ncols() {
        return Err(Error::shape(format!(
            "global rank {} is below local rank {}",
            v_global.ncols(),
            v_local.ncols()
        )));
    }
    Ok(v_global.transpose() * v_local)
}
