//! Galerkin-projected time integration on a fixed basis.

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::boucwen::{BoucWenState, LinkFailure};
use crate::fom::integrator::{self, update_link, Evaluation, LinkedSystem};
use crate::fom::{generate_excitation, ExcitationSpec, FrameConfig, FrameModel, ModelParameters, NewmarkSettings};

#[derive(Debug, Clone)]
pub struct RomSolution {
    pub times: Vec<f64>,
    /// `N_t × r` reduced coordinates.
    pub q: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub u_dot: DMatrix<f64>,
    pub u_ddot: DMatrix<f64>,
    pub provenance: String,
    pub newton_iterations: usize,
    /// Time spent evaluating the reduced internal force and tangent.
    pub assembly_time: Duration,
    pub wall_time: Duration,
}

/// Projected system `Vᵀ M V q̈ + Vᵀ C V q̇ + Vᵀ g(V q) = Vᵀ ι a_g`.
///
/// Link `j` sees `du_j = b_jᵀ q` with `b_j = V[upper] − V[lower]`, so the
/// projected force is `Σ ξ_e R_j b_j` over the evaluated links.
pub(crate) struct Galerkin<'a> {
    model: &'a FrameModel,
    /// Row `j` is `b_jᵀ`.
    b: DMatrix<f64>,
    mass: DMatrix<f64>,
    damping: Option<DMatrix<f64>>,
    load: DVector<f64>,
    /// `(link index, weight)` pairs that take part in assembly.
    active: Vec<(usize, f64)>,
}

impl<'a> Galerkin<'a> {
    pub fn new(model: &'a FrameModel, v: &DMatrix<f64>, weights: Option<&[f64]>) -> Result<Self> {
        let n = model.n_dofs();
        if v.nrows() != n || v.ncols() == 0 {
            return Err(Error::shape(format!("basis is {}x{}, model has {n} dofs", v.nrows(), v.ncols())));
        }
        if let Some(w) = weights {
            if w.len() != model.n_elements {
                return Err(Error::shape(format!("{} weights for {} elements", w.len(), model.n_elements)));
            }
            if w.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::invalid("element weights must be non-negative"));
            }
        }
        let b = link_projection(model, v);
        let active = model
            .link_dofs
            .iter()
            .enumerate()
            .filter_map(|(j, l)| {
                let xi = weights.map_or(1.0, |w| w[l.element]);
                (xi > 0.0).then_some((j, xi))
            })
            .collect();
        let mass = v.transpose() * DMatrix::from_diagonal(&model.masses) * v;
        let damping = model.damping.as_ref().map(|c| v.transpose() * c * v);
        let load = v.transpose() * &model.influence;
        Ok(Self { model, b, mass, damping, load, active })
    }
}

/// Rows `b_jᵀ = V[upper, :] − V[lower, :]` for every link DOF.
pub(crate) fn link_projection(model: &FrameModel, v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(model.link_dofs.len(), v.ncols());
    for (j, l) in model.link_dofs.iter().enumerate() {
        let mut row = v.row(l.upper).into_owned();
        if let Some(lo) = l.lower {
            row -= v.row(lo);
        }
        b.set_row(j, &row);
    }
    b
}

impl LinkedSystem for Galerkin<'_> {
    fn dim(&self) -> usize {
        self.b.ncols()
    }

    fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    fn damping(&self) -> Option<&DMatrix<f64>> {
        self.damping.as_ref()
    }

    fn load_direction(&self) -> &DVector<f64> {
        &self.load
    }

    fn n_link_dofs(&self) -> usize {
        self.model.link_dofs.len()
    }

    fn internal_force(
        &self,
        q: &DVector<f64>,
        q_prev: &DVector<f64>,
        committed: &[BoucWenState],
        dt: f64,
        out: Evaluation<'_>,
    ) -> std::result::Result<(), (usize, LinkFailure)> {
        let Evaluation { g, mut tangent, links, forces } = out;
        g.fill(0.0);
        if let Some(k) = tangent.as_deref_mut() {
            k.fill(0.0);
        }
        let r = self.dim();
        for &(j, xi) in &self.active {
            let bj = self.b.row(j);
            let du = bj.dot(&q.transpose());
            let du_prev = bj.dot(&q_prev.transpose());
            let (state, force, stiff) =
                update_link(&self.model.link_dofs[j], du, du_prev, &committed[j], dt).map_err(|e| (j, e))?;
            links[j] = state;
            forces[j] = force;
            let wf = xi * force;
            for a in 0..r {
                g[a] += wf * bj[a];
            }
            if let Some(k) = tangent.as_deref_mut() {
                let ws = xi * stiff;
                for c in 0..r {
                    let s = ws * bj[c];
                    for a in 0..r {
                        k[(a, c)] += s * bj[a];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reduced integration of an instantiated model over a given ground series.
/// `weights`, when given, are per-element hyper-reduction weights.
pub fn rom_simulate_model(
    model: &FrameModel,
    v: &DMatrix<f64>,
    weights: Option<&[f64]>,
    settings: NewmarkSettings,
    ground: &[f64],
    dt: f64,
    initial: Option<(DVector<f64>, DVector<f64>)>,
    provenance: &str,
) -> Result<RomSolution> {
    if ground.is_empty() {
        return Err(Error::invalid("empty ground-acceleration series"));
    }
    let sys = Galerkin::new(model, v, weights)?;
    let r = v.ncols();
    let (q0, qd0) = match initial {
        Some((u0, v0)) => {
            if u0.len() != model.n_dofs() || v0.len() != model.n_dofs() {
                return Err(Error::shape(format!("initial conditions must have length {}", model.n_dofs())));
            }
            (v.transpose() * u0, v.transpose() * v0)
        }
        None => (DVector::zeros(r), DVector::zeros(r)),
    };
    let traj = integrator::integrate(&sys, settings, q0, qd0, ground, dt)?;
    let vt = v.transpose();
    Ok(RomSolution {
        times: (0..ground.len()).map(|i| i as f64 * dt).collect(),
        u: &traj.x * &vt,
        u_dot: &traj.v * &vt,
        u_ddot: &traj.a * &vt,
        q: traj.x,
        provenance: provenance.to_string(),
        newton_iterations: traj.newton_iterations,
        assembly_time: traj.assembly_time,
        wall_time: traj.wall_time,
    })
}

/// Reduced counterpart of [`crate::fom::simulate_fom`] on basis `v`.
pub fn rom_simulate(
    config: &FrameConfig,
    params: &ModelParameters,
    spec: &ExcitationSpec,
    v: &DMatrix<f64>,
    weights: Option<&[f64]>,
    provenance: &str,
) -> Result<RomSolution> {
    let model = FrameModel::new(config, params)?;
    let spec = params.excitation(spec);
    let ground = generate_excitation(&spec)?;
    rom_simulate_model(&model, v, weights, NewmarkSettings::default(), &ground, spec.dt, None, provenance)
}

/// Where a basis came from, recorded alongside ROM outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Local,
    Global,
    Macprom,
    Cprom,
    Vprom,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Local, Strategy::Global, Strategy::Macprom, Strategy::Cprom, Strategy::Vprom];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Local => "local",
            Strategy::Global => "global",
            Strategy::Macprom => "macprom",
            Strategy::Cprom => "cprom",
            Strategy::Vprom => "vprom",
        }
    }

    /// Name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Local => "Local",
            Strategy::Global => "Global",
            Strategy::Macprom => "MACpROM",
            Strategy::Cprom => "CpROM",
            Strategy::Vprom => "VpROM",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let lower = if lower == "mac" { "macprom".to_string() } else { lower };
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == lower)
            .ok_or_else(|| Error::config(format!("unknown strategy `{s}` (expected local, global, macprom, cprom or vprom)")))
    }
}
