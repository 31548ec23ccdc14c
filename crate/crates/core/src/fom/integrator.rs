//! Implicit Newmark (average acceleration) with Newton–Raphson equilibrium
//! iterations, shared by the full-order and the projected systems.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::boucwen::{backward_euler, BoucWenState, LinkFailure};
use super::frame::LinkDof;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewmarkSettings {
    pub beta: f64,
    pub gamma: f64,
    /// Converged when ‖r‖ ≤ rel_tol · max(‖F‖, ‖g‖, ‖M·a‖).
    pub rel_tol: f64,
    pub max_iter: usize,
    pub max_halvings: u32,
}

impl Default for NewmarkSettings {
    fn default() -> Self {
        Self { beta: 0.25, gamma: 0.5, rel_tol: 1e-8, max_iter: 30, max_halvings: 4 }
    }
}

/// Kinematic state plus committed link states.
#[derive(Debug, Clone)]
pub(crate) struct StepState {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub a: DVector<f64>,
    pub links: Vec<BoucWenState>,
    pub forces: Vec<f64>,
}

/// Scratch buffers for one residual/tangent evaluation.
pub(crate) struct Evaluation<'a> {
    pub g: &'a mut DVector<f64>,
    pub tangent: Option<&'a mut DMatrix<f64>>,
    pub links: &'a mut [BoucWenState],
    pub forces: &'a mut [f64],
}

/// A second-order system `M·ẍ + C·ẋ + g(x, ẋ) = f·a_g(t)` whose nonlinear force
/// comes from Bouc-Wen link DOFs.
pub(crate) trait LinkedSystem {
    fn dim(&self) -> usize;
    fn mass(&self) -> &DMatrix<f64>;
    fn damping(&self) -> Option<&DMatrix<f64>>;
    fn load_direction(&self) -> &DVector<f64>;
    fn n_link_dofs(&self) -> usize;

    /// Internal force at end-of-step coordinates `x`, with `x_prev` the
    /// committed coordinates at the start of the step.
    fn internal_force(
        &self,
        x: &DVector<f64>,
        x_prev: &DVector<f64>,
        committed: &[BoucWenState],
        dt: f64,
        out: Evaluation<'_>,
    ) -> std::result::Result<(), (usize, LinkFailure)>;
}

/// Updates one link over a step and returns `(state, R, dR/d(du))`, the
/// stiffness including the path through `z`.
///
/// The rate law is homogeneous of degree one in the velocity, so the step is
/// driven by the mean relative velocity `(du − du_prev)/dt`. This keeps the
/// elastic branch (`z = A·du`) exact and consistent with the Newmark update.
#[inline]
pub(crate) fn update_link(
    link: &LinkDof,
    du: f64,
    du_prev: f64,
    prev: &BoucWenState,
    dt: f64,
) -> std::result::Result<(BoucWenState, f64, f64), LinkFailure> {
    let up = backward_euler(prev, (du - du_prev) / dt, dt, &link.params)?;
    let p = &link.params;
    let force = p.alpha * p.k * du + (1.0 - p.alpha) * p.k * up.state.z;
    let stiffness = p.alpha * p.k + (1.0 - p.alpha) * p.k * up.dz_dv / dt;
    Ok((up.state, force, stiffness))
}

/// Integrated trajectory in the system's own coordinates.
#[derive(Debug, Clone)]
pub(crate) struct Trajectory {
    pub x: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub link_z: DMatrix<f64>,
    pub link_eps: DMatrix<f64>,
    pub link_force: DMatrix<f64>,
    pub final_links: Vec<BoucWenState>,
    pub newton_iterations: usize,
    pub assembly_time: Duration,
    pub wall_time: Duration,
}

enum StepError {
    Diverged,
    Degraded { link_dof: usize, eta: f64 },
}

struct Integrator<'a, S: LinkedSystem> {
    sys: &'a S,
    settings: NewmarkSettings,
    iterations: usize,
    assembly: Duration,
}

impl<S: LinkedSystem> Integrator<'_, S> {
    fn evaluate(
        &mut self,
        x: &DVector<f64>,
        x_prev: &DVector<f64>,
        committed: &[BoucWenState],
        dt: f64,
        g: &mut DVector<f64>,
        tangent: Option<&mut DMatrix<f64>>,
        links: &mut [BoucWenState],
        forces: &mut [f64],
    ) -> std::result::Result<(), StepError> {
        let t0 = Instant::now();
        let res = self.sys.internal_force(x, x_prev, committed, dt, Evaluation { g, tangent, links, forces });
        self.assembly += t0.elapsed();
        res.map_err(|(j, failure)| match failure {
            LinkFailure::Degraded(eta) => StepError::Degraded { link_dof: j, eta },
            LinkFailure::Stalled => StepError::Diverged,
        })
    }

    /// One Newmark step of size `dt` ending at ground acceleration `ag_next`.
    fn step(&mut self, s: &StepState, dt: f64, ag_next: f64) -> std::result::Result<StepState, StepError> {
        let NewmarkSettings { beta, gamma, rel_tol, max_iter, .. } = self.settings;
        let sys = self.sys;
        let m = sys.mass();
        let n = sys.dim();
        let c0 = 1.0 / (beta * dt * dt);
        let c1 = gamma / (beta * dt);
        let f = sys.load_direction() * ag_next;
        let f_norm = f.norm();

        let base = &s.x + &s.v * dt;
        let mut x = &base + &s.a * (0.5 * dt * dt);
        let mut g = DVector::zeros(n);
        let mut kg = DMatrix::zeros(n, n);
        let mut links = s.links.clone();
        let mut forces = s.forces.clone();
        let mut initial: Option<nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = None;
        let mut modified = false;
        let mut last_norm = f64::INFINITY;
        let mut growth = 0;

        for iter in 0..max_iter {
            let a = (&x - &base) * c0 - &s.a * (0.5 / beta - 1.0);
            let v = &s.v + (&s.a * (1.0 - gamma) + &a * gamma) * dt;
            let need_tangent = !modified;
            self.evaluate(&x, &s.x, &s.links, dt, &mut g, need_tangent.then_some(&mut kg), &mut links, &mut forces)?;
            self.iterations += 1;

            let ma = m * &a;
            let mut r = &ma + &g - &f;
            if let Some(c) = sys.damping() {
                r += c * &v;
            }
            let r_norm = r.norm();
            let scale = f_norm.max(g.norm()).max(ma.norm());
            if !r_norm.is_finite() {
                return Err(StepError::Diverged);
            }
            if r_norm <= rel_tol * scale || r_norm == 0.0 {
                return Ok(StepState { x, v, a, links, forces });
            }

            if r_norm >= last_norm {
                growth += 1;
            } else {
                growth = 0;
            }
            last_norm = r_norm;

            // Consistent tangent stalled: fall back to the step's initial tangent.
            if growth >= 3 && initial.is_some() {
                modified = true;
            }
            let delta = if modified {
                initial.as_ref().and_then(|lu| lu.solve(&r))
            } else {
                let mut k = kg.clone();
                k += m * c0;
                if let Some(c) = sys.damping() {
                    k += c * c1;
                }
                let lu = k.lu();
                let d = lu.solve(&r);
                if iter == 0 {
                    initial = Some(lu);
                }
                d
            };
            let Some(delta) = delta else {
                return Err(StepError::Diverged);
            };
            x -= delta;
        }
        Err(StepError::Diverged)
    }

    fn advance(
        &mut self,
        s: &StepState,
        dt: f64,
        ag0: f64,
        ag1: f64,
        level: u32,
        step_index: usize,
        t0: f64,
    ) -> Result<StepState> {
        match self.step(s, dt, ag1) {
            Ok(next) => Ok(next),
            Err(StepError::Degraded { link_dof, eta }) => {
                Err(Error::Degradation { step: step_index, link_dof, eta })
            }
            Err(StepError::Diverged) if level < self.settings.max_halvings => {
                let mid = 0.5 * (ag0 + ag1);
                let half = 0.5 * dt;
                let s1 = self.advance(s, half, ag0, mid, level + 1, step_index, t0)?;
                self.advance(&s1, half, mid, ag1, level + 1, step_index, t0 + half)
            }
            Err(StepError::Diverged) => {
                Err(Error::NonConvergence { step: step_index, time: t0 + dt, levels: level })
            }
        }
    }
}

/// Integrates from rest-consistent initial conditions `(x0, v0)` over the
/// sampled ground acceleration `ground`, storing every sample point.
pub(crate) fn integrate<S: LinkedSystem>(
    sys: &S,
    settings: NewmarkSettings,
    x0: DVector<f64>,
    v0: DVector<f64>,
    ground: &[f64],
    dt: f64,
) -> Result<Trajectory> {
    let start = Instant::now();
    let n = sys.dim();
    let nl = sys.n_link_dofs();
    let nt = ground.len();
    let mut integ = Integrator { sys, settings, iterations: 0, assembly: Duration::ZERO };

    // Initial acceleration from equilibrium with z = 0.
    let committed = vec![BoucWenState::default(); nl];
    let mut g = DVector::zeros(n);
    let mut links = committed.clone();
    let mut forces = vec![0.0; nl];
    integ
        .evaluate(&x0, &x0, &committed, dt, &mut g, None, &mut links, &mut forces)
        .map_err(|_| Error::invalid("initial state is not admissible"))?;
    let mut rhs = sys.load_direction() * ground[0] - &g;
    if let Some(c) = sys.damping() {
        rhs -= c * &v0;
    }
    let a0 = sys
        .mass()
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::invalid("mass matrix is singular"))?;
    let mut state = StepState { x: x0, v: v0, a: a0, links: committed, forces };

    let mut traj = Trajectory {
        x: DMatrix::zeros(nt, n),
        v: DMatrix::zeros(nt, n),
        a: DMatrix::zeros(nt, n),
        link_z: DMatrix::zeros(nt, nl),
        link_eps: DMatrix::zeros(nt, nl),
        link_force: DMatrix::zeros(nt, nl),
        final_links: Vec::new(),
        newton_iterations: 0,
        assembly_time: Duration::ZERO,
        wall_time: Duration::ZERO,
    };
    let record = |traj: &mut Trajectory, i: usize, s: &StepState| {
        traj.x.set_row(i, &s.x.transpose());
        traj.v.set_row(i, &s.v.transpose());
        traj.a.set_row(i, &s.a.transpose());
        for (j, (l, f)) in s.links.iter().zip(&s.forces).enumerate() {
            traj.link_z[(i, j)] = l.z;
            traj.link_eps[(i, j)] = l.eps_energy;
            traj.link_force[(i, j)] = *f;
        }
    };
    record(&mut traj, 0, &state);
    for i in 1..nt {
        state = integ.advance(&state, dt, ground[i - 1], ground[i], 0, i, (i - 1) as f64 * dt)?;
        record(&mut traj, i, &state);
    }
    traj.final_links = state.links;
    traj.newton_iterations = integ.iterations;
    traj.assembly_time = integ.assembly;
    traj.wall_time = start.elapsed();
    Ok(traj)
}
