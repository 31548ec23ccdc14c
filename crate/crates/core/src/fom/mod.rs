//! Full-order parametric benchmark: a shear frame with Bouc-Wen links under
//! filtered white-noise base excitation.

pub mod boucwen;
pub mod excitation;
pub mod frame;
pub(crate) mod integrator;

use std::time::Duration;

use nalgebra::{DMatrix, DVector};

pub use boucwen::{boucwen_rate, restoring_force, BoucWenParams, BoucWenState, Rates};
pub use excitation::{generate_excitation, Biquad, ExcitationSpec};
pub use frame::{rayleigh_coefficients, FrameConfig, FrameModel, LinkDof, LinkSpec, ModelParameters, PARAMETER_NAMES};
pub use integrator::NewmarkSettings;

use crate::error::{Error, Result};
use boucwen::LinkFailure;
use integrator::{update_link, Evaluation, LinkedSystem, Trajectory};

#[derive(Debug, Clone)]
pub struct FomSolution {
    pub times: Vec<f64>,
    /// `N_t × n` displacement history.
    pub u: DMatrix<f64>,
    pub u_dot: DMatrix<f64>,
    pub u_ddot: DMatrix<f64>,
    /// `N_t × n_link_dofs` hysteretic displacement history.
    pub link_z: DMatrix<f64>,
    pub link_eps: DMatrix<f64>,
    pub link_force: DMatrix<f64>,
    pub final_links: Vec<BoucWenState>,
    pub newton_iterations: usize,
    pub wall_time: Duration,
}

impl FomSolution {
    pub fn n_steps(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_dofs(&self) -> usize {
        self.u.ncols()
    }

    fn from_trajectory(times: Vec<f64>, t: Trajectory) -> Self {
        Self {
            times,
            u: t.x,
            u_dot: t.v,
            u_ddot: t.a,
            link_z: t.link_z,
            link_eps: t.link_eps,
            link_force: t.link_force,
            final_links: t.final_links,
            newton_iterations: t.newton_iterations,
            wall_time: t.wall_time,
        }
    }
}

/// Full-order system: dense assembly over every link DOF.
pub(crate) struct FullOrder<'a> {
    pub model: &'a FrameModel,
    mass: DMatrix<f64>,
}

impl<'a> FullOrder<'a> {
    pub fn new(model: &'a FrameModel) -> Self {
        Self { model, mass: model.mass_matrix() }
    }
}

impl LinkedSystem for FullOrder<'_> {
    fn dim(&self) -> usize {
        self.model.n_dofs()
    }

    fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    fn damping(&self) -> Option<&DMatrix<f64>> {
        self.model.damping.as_ref()
    }

    fn load_direction(&self) -> &DVector<f64> {
        &self.model.influence
    }

    fn n_link_dofs(&self) -> usize {
        self.model.link_dofs.len()
    }

    fn internal_force(
        &self,
        x: &DVector<f64>,
        x_prev: &DVector<f64>,
        committed: &[BoucWenState],
        dt: f64,
        out: Evaluation<'_>,
    ) -> std::result::Result<(), (usize, LinkFailure)> {
        let Evaluation { g, mut tangent, links, forces } = out;
        g.fill(0.0);
        if let Some(k) = tangent.as_deref_mut() {
            k.fill(0.0);
        }
        for (j, link) in self.model.link_dofs.iter().enumerate() {
            let (du, du_prev) = match link.lower {
                Some(lo) => (x[link.upper] - x[lo], x_prev[link.upper] - x_prev[lo]),
                None => (x[link.upper], x_prev[link.upper]),
            };
            let (state, force, stiff) = update_link(link, du, du_prev, &committed[j], dt).map_err(|e| (j, e))?;
            links[j] = state;
            forces[j] = force;
            g[link.upper] += force;
            if let Some(lo) = link.lower {
                g[lo] -= force;
            }
            if let Some(k) = tangent.as_deref_mut() {
                k[(link.upper, link.upper)] += stiff;
                if let Some(lo) = link.lower {
                    k[(lo, lo)] += stiff;
                    k[(lo, link.upper)] -= stiff;
                    k[(link.upper, lo)] -= stiff;
                }
            }
        }
        Ok(())
    }
}

/// Integrates an instantiated frame over a given ground-acceleration series,
/// optionally from non-zero initial displacement and velocity.
pub fn simulate_model(
    model: &FrameModel,
    settings: NewmarkSettings,
    ground: &[f64],
    dt: f64,
    initial: Option<(DVector<f64>, DVector<f64>)>,
) -> Result<FomSolution> {
    if ground.is_empty() {
        return Err(Error::invalid("empty ground-acceleration series"));
    }
    let n = model.n_dofs();
    let (x0, v0) = initial.unwrap_or_else(|| (DVector::zeros(n), DVector::zeros(n)));
    if x0.len() != n || v0.len() != n {
        return Err(Error::shape(format!("initial conditions must have length {n}")));
    }
    let sys = FullOrder::new(model);
    let traj = integrator::integrate(&sys, settings, x0, v0, ground, dt)?;
    let times = (0..ground.len()).map(|i| i as f64 * dt).collect();
    Ok(FomSolution::from_trajectory(times, traj))
}

/// Integrates `M·ü + g(u, u̇, p) = ι·a_g(t, p)` from rest.
pub fn simulate_fom(config: &FrameConfig, params: &ModelParameters, spec: &ExcitationSpec) -> Result<FomSolution> {
    simulate_fom_with(config, params, spec, NewmarkSettings::default())
}

pub fn simulate_fom_with(
    config: &FrameConfig,
    params: &ModelParameters,
    spec: &ExcitationSpec,
    settings: NewmarkSettings,
) -> Result<FomSolution> {
    let model = FrameModel::new(config, params)?;
    let spec = params.excitation(spec);
    let ground = generate_excitation(&spec)?;
    simulate_model(&model, settings, &ground, spec.dt, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn small(alpha: f64) -> (FrameConfig, ModelParameters, ExcitationSpec) {
        let mut cfg = FrameConfig::shear_frame(4, 2, 1.0e5, 0.6, &[1.0, 1.3]);
        cfg.boucwen = BoucWenParams { alpha, beta: 60.0, gamma: 20.0, ..BoucWenParams::default() };
        cfg.load_scale = 0.3;
        let spec = ExcitationSpec { amp: 2.0e6, f_but: 10.0, noise_seed: 3, dt: 0.002, duration: 1.0 };
        let p = ModelParameters::nominal(&cfg, &spec);
        (cfg, p, spec)
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn zero_excitation_stays_at_rest() {
        let (cfg, mut p, spec) = small(0.3);
        p.amp = 0.0;
        let sol = simulate_fom(&cfg, &p, &spec).unwrap();
        assert_eq!(sol.n_steps(), 501);
        assert!(sol.u.iter().chain(sol.link_z.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn rerun_is_bit_identical() {
        let (cfg, p, spec) = small(0.3);
        let a = simulate_fom(&cfg, &p, &spec).unwrap();
        let b = simulate_fom(&cfg, &p, &spec).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.link_z, b.link_z);
    }

    #[test]
    fn response_is_hysteretic() {
        let (cfg, p, spec) = small(0.3);
        let sol = simulate_fom(&cfg, &p, &spec).unwrap();
        let ceiling = cfg.boucwen.monotone_ceiling().unwrap();
        let zmax = sol.link_z.amax();
        assert!(zmax > 0.3 * ceiling, "links barely yield: {zmax}");
        assert!(zmax <= ceiling + 1e-6);
    }

    #[test]
    fn linear_limit_matches_discrete_modal_solution() {
        let (cfg, p, _) = small(1.0);
        let model = FrameModel::new(&cfg, &p).unwrap();
        let n = model.n_dofs();
        let dt = 0.002;
        let steps = 800;
        let v0 = DVector::from_fn(n, |i, _| ((i as f64) * 0.7).sin() + 0.2);
        let sol = simulate_model(&model, NewmarkSettings::default(), &vec![0.0; steps + 1], dt, Some((DVector::zeros(n), v0.clone())))
            .unwrap();

        // Mass-normalised modes from M^-1/2 K M^-1/2.
        let minv_sqrt = model.masses.map(|m| 1.0 / m.sqrt());
        let k = model.initial_stiffness();
        let kt = DMatrix::from_fn(n, n, |i, j| minv_sqrt[i] * k[(i, j)] * minv_sqrt[j]);
        let eig = SymmetricEigen::new(kt);
        let mut expected = DMatrix::zeros(steps + 1, n);
        for m in 0..n {
            let omega = eig.eigenvalues[m].sqrt();
            let phi = eig.eigenvectors.column(m).component_mul(&minv_sqrt);
            let q0 = phi.dot(&model.masses.component_mul(&v0));
            let theta = 2.0 * (omega * dt / 2.0).atan();
            for step in 0..=steps {
                let amp = q0 / omega * (step as f64 * theta).sin();
                for i in 0..n {
                    expected[(step, i)] += amp * phi[i];
                }
            }
        }
        let err = rel(&sol.u, &expected);
        assert!(err <= 1e-6, "modal mismatch {err:e}");
    }

    #[test]
    fn undamped_linear_energy_is_conserved() {
        let (cfg, p, _) = small(1.0);
        let model = FrameModel::new(&cfg, &p).unwrap();
        let n = model.n_dofs();
        let v0 = DVector::from_element(n, 0.1);
        let sol = simulate_model(&model, NewmarkSettings::default(), &vec![0.0; 2001], 0.002, Some((DVector::zeros(n), v0)))
            .unwrap();
        let k = model.initial_stiffness();
        let energy = |i: usize| {
            let u = sol.u.row(i).transpose();
            let v = sol.u_dot.row(i).transpose();
            0.5 * v.dot(&model.masses.component_mul(&v)) + 0.5 * u.dot(&(&k * &u))
        };
        let e0 = energy(0);
        let drift = (0..sol.n_steps()).map(|i| (energy(i) - e0).abs() / e0).fold(0.0, f64::max);
        assert!(drift <= 5e-3, "energy drift {drift}");
    }

    #[test]
    fn linear_response_superposes() {
        let (cfg, p, spec) = small(1.0);
        let one = simulate_fom(&cfg, &p, &spec).unwrap();
        let two = simulate_fom(&cfg, &ModelParameters { amp: 2.0 * p.amp, ..p }, &spec).unwrap();
        assert!(rel(&two.u, &(&one.u * 2.0)) < 1e-7);
    }

    #[test]
    fn timestep_refinement_converges() {
        let (cfg, p, spec) = small(0.25);
        let model = FrameModel::new(&cfg, &p).unwrap();
        let ground = generate_excitation(&p.excitation(&spec)).unwrap();
        let fine: Vec<f64> = ground
            .windows(2)
            .flat_map(|w| (0..4).map(move |k| w[0] + (w[1] - w[0]) * k as f64 / 4.0))
            .chain(std::iter::once(*ground.last().unwrap()))
            .collect();
        let coarse = simulate_model(&model, NewmarkSettings::default(), &ground, spec.dt, None).unwrap();
        let refined = simulate_model(&model, NewmarkSettings::default(), &fine, spec.dt / 4.0, None).unwrap();
        let sub = DMatrix::from_fn(coarse.n_steps(), coarse.n_dofs(), |i, j| refined.u[(4 * i, j)]);
        let err = rel(&coarse.u, &sub);
        assert!(err <= 0.01, "dt self-convergence {err}");
    }

    #[test]
    fn runaway_degradation_surfaces_as_error() {
        let (cfg, mut p, spec) = small(0.25);
        p.delta_eta = 0.0;
        let eps = simulate_fom(&cfg, &p, &spec).unwrap().link_eps.max();
        assert!(eps > 0.0);
        p.delta_eta = -2.0 / eps;
        let err = simulate_fom(&cfg, &p, &spec).err().expect("degradation must abort the run");
        assert!(matches!(err, Error::Degradation { .. }), "{err}");
    }

    #[test]
    fn mismatched_initial_state_is_rejected() {
        let (cfg, p, _) = small(0.3);
        let model = FrameModel::new(&cfg, &p).unwrap();
        let bad = Some((DVector::zeros(3), DVector::zeros(3)));
        assert!(matches!(simulate_model(&model, NewmarkSettings::default(), &[0.0, 0.0], 0.01, bad), Err(Error::Shape(_))));
    }
}
