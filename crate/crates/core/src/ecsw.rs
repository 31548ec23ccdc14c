//! Energy-conserving sampling and weighting of frame elements.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::FrameModel;
use crate::reduction::rom::link_projection;

/// Per-element reduced force contributions stacked over training states.
#[derive(Debug, Clone)]
pub struct EcswSystem {
    /// `(n_states · r) × n_elements`.
    pub g: DMatrix<f64>,
    /// Row sums of `g`.
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcswWeights {
    /// One weight per element, zero outside the support.
    pub xi: Vec<f64>,
    pub selected: Vec<usize>,
    pub tau: f64,
    /// Achieved `‖Gξ − b‖ / ‖b‖`.
    pub residual: f64,
}

impl EcswWeights {
    pub fn n_selected(&self) -> usize {
        self.selected.len()
    }

    /// Unit weight on every element.
    pub fn full(n_elements: usize, tau: f64) -> Self {
        Self { xi: vec![1.0; n_elements], selected: (0..n_elements).collect(), tau, residual: 0.0 }
    }
}

fn check_inputs(model: &FrameModel, v: &DMatrix<f64>, link_forces: &[&DMatrix<f64>], stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if v.nrows() != model.n_dofs() {
        return Err(Error::shape(format!("basis has {} rows, model has {} dofs", v.nrows(), model.n_dofs())));
    }
    let nl = model.link_dofs.len();
    if let Some(f) = link_forces.iter().find(|f| f.ncols() != nl) {
        return Err(Error::shape(format!("link force history has {} columns, model has {nl} link dofs", f.ncols())));
    }
    Ok(())
}

/// Rows of `G` for the given states of one history.
fn g_rows(model: &FrameModel, bmat: &DMatrix<f64>, forces: &DMatrix<f64>, states: &[usize]) -> DMatrix<f64> {
    let r = bmat.ncols();
    let mut g = DMatrix::zeros(states.len() * r, model.n_elements);
    for (k, &t) in states.iter().enumerate() {
        for (j, l) in model.link_dofs.iter().enumerate() {
            let force = forces[(t, j)];
            for a in 0..r {
                g[(k * r + a, l.element)] += force * bmat[(j, a)];
            }
        }
    }
    g
}

/// Stacks `Vₑᵀ gₑ` for every `stride`-th state of each link-force history
/// (`N_t × n_link_dofs`).
pub fn build_ecsw_system(model: &FrameModel, v: &DMatrix<f64>, link_forces: &[&DMatrix<f64>], stride: usize) -> Result<EcswSystem> {
    check_inputs(model, v, link_forces, stride)?;
    let bmat = link_projection(model, v);
    let blocks: Vec<DMatrix<f64>> = link_forces
        .iter()
        .map(|f| g_rows(model, &bmat, f, &(0..f.nrows()).step_by(stride).collect::<Vec<_>>()))
        .collect();
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut g = DMatrix::zeros(rows, model.n_elements);
    let mut at = 0;
    for b in &blocks {
        g.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    let b = g.column_sum();
    Ok(EcswSystem { g, b })
}

/// Same system reduced to its `n_elements × n_elements` triangular factor.
/// Since `b = G·1` lies in the range of `G`, `‖Gξ − b‖ = ‖Rξ − R·1‖` for
/// every `ξ`, so weights and residuals carry over unchanged. Rows are
/// folded in blocks, which keeps memory bounded for large training sets.
pub fn build_compressed_ecsw_system(
    model: &FrameModel,
    v: &DMatrix<f64>,
    link_forces: &[&DMatrix<f64>],
    stride: usize,
) -> Result<EcswSystem> {
    check_inputs(model, v, link_forces, stride)?;
    let bmat = link_projection(model, v);
    let ne = model.n_elements;
    let per_block = (4096 / v.ncols()).max(1);
    let mut r = DMatrix::zeros(0, ne);
    for f in link_forces {
        let states: Vec<usize> = (0..f.nrows()).step_by(stride).collect();
        for chunk in states.chunks(per_block) {
            let blk = g_rows(model, &bmat, f, chunk);
            let mut stacked = DMatrix::zeros(r.nrows() + blk.nrows(), ne);
            stacked.rows_mut(0, r.nrows()).copy_from(&r);
            stacked.rows_mut(r.nrows(), blk.nrows()).copy_from(&blk);
            r = if stacked.nrows() > ne { stacked.qr().r() } else { stacked };
        }
    }
    let b = r.column_sum();
    Ok(EcswSystem { g: r, b })
}

/// Least squares restricted to the columns in `set`.
fn restricted_solve(g: &DMatrix<f64>, b: &DVector<f64>, set: &[usize]) -> DVector<f64> {
    let sub = g.select_columns(set);
    let svd = sub.svd(true, true);
    let eps = 1e-13 * svd.singular_values.max();
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(set.len()))
}

/// Lawson–Hanson active-set NNLS that stops as soon as
/// `‖Gξ − b‖ ≤ τ‖b‖`. With `tau = 0` it runs to the NNLS optimum.
pub fn nnls(g: &DMatrix<f64>, b: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
    if g.nrows() != b.len() {
        return Err(Error::shape(format!("G has {} rows, b has {}", g.nrows(), b.len())));
    }
    // Same residual norms on the triangular factor when b lies in range(G);
    // in general the out-of-range part is a constant offset.
    let (g, b, offset) = if g.nrows() > g.ncols() {
        let qr = g.clone().qr();
        let q = qr.q();
        let qb = q.transpose() * b;
        let off = (b.norm_squared() - qb.norm_squared()).max(0.0);
        (qr.r(), qb, off)
    } else {
        (g.clone(), b.clone(), 0.0)
    };
    let n = g.ncols();
    let target = tau * (b.norm_squared() + offset).sqrt();
    let mut xi = DVector::zeros(n);
    let mut passive: Vec<usize> = Vec::new();
    let scale = g.abs().max().max(f64::MIN_POSITIVE) * b.abs().max().max(f64::MIN_POSITIVE);
    for _ in 0..3 * n + 10 {
        let res = &b - &g * &xi;
        if (res.norm_squared() + offset).sqrt() <= target {
            break;
        }
        let w = g.transpose() * &res;
        let pick = (0..n)
            .filter(|e| !passive.contains(e))
            .max_by(|&a, &c| w[a].total_cmp(&w[c]))
            .filter(|&e| w[e] > 1e-12 * scale);
        let Some(e) = pick else { break };
        passive.push(e);
        loop {
            let s = restricted_solve(&g, &b, &passive);
            if s.iter().all(|&v| v > 0.0) {
                for (k, &p) in passive.iter().enumerate() {
                    xi[p] = s[k];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (k, &p) in passive.iter().enumerate() {
                if s[k] <= 0.0 {
                    alpha = alpha.min(xi[p] / (xi[p] - s[k]));
                }
            }
            for (k, &p) in passive.iter().enumerate() {
                xi[p] += alpha * (s[k] - xi[p]);
            }
            passive.retain(|&p| xi[p] > 1e-14 * xi.amax().max(1.0));
            for p in 0..n {
                if !passive.contains(&p) {
                    xi[p] = 0.0;
                }
            }
            if passive.is_empty() {
                break;
            }
        }
        debug_assert!(xi.iter().all(|&v| v >= 0.0));
    }
    Ok(xi)
}

/// Sparse element weights meeting `‖Gξ − b‖ ≤ τ‖b‖`; falls back to the full
/// unit weighting when the active set stalls short of the tolerance.
pub fn sparse_nnls(system: &EcswSystem, tau: f64) -> Result<EcswWeights> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::OutOfRange { name: "tau".into(), value: tau, lower: 0.0, upper: 1.0 });
    }
    let n = system.g.ncols();
    let bn = system.b.norm();
    if bn == 0.0 {
        return Ok(EcswWeights { xi: vec![0.0; n], selected: Vec::new(), tau, residual: 0.0 });
    }
    let xi = nnls(&system.g, &system.b, tau)?;
    let residual = (&system.g * &xi - &system.b).norm() / bn;
    if residual > tau {
        tracing::warn!(residual, tau, "ECSW tolerance not met, using every element");
        return Ok(EcswWeights::full(n, tau));
    }
    let selected = (0..n).filter(|&e| xi[e] > 0.0).collect();
    Ok(EcswWeights { xi: xi.iter().copied().collect(), selected, tau, residual })
}
