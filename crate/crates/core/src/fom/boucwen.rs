//! Bouc-Wen hysteretic link with energy-driven strength deterioration and
//! stiffness degradation.
//!
//! Rate law for the hysteretic displacement `z` under relative link velocity `v`:
//!
//! ```text
//! ż = [A·v − ν(β·|v|·z·|z|^(w−1) − γ·v·|z|^w)] / η
//! ε̇ = z·v,   ν = 1 + δν·ε,   η = 1 + δη·ε
//! ```
//!
//! and the link force is `R = α·k·du + (1 − α)·k·z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoucWenParams {
    /// Post-yield to elastic stiffness ratio.
    pub alpha: f64,
    /// Stiffness coefficient [N/m].
    pub k: f64,
    pub a: f64,
    pub beta: f64,
    pub gamma: f64,
    pub w: f64,
    pub delta_nu: f64,
    pub delta_eta: f64,
}

impl Default for BoucWenParams {
    fn default() -> Self {
        Self {
            alpha: 0.35,
            k: 1.0e8,
            a: 1.0,
            beta: 15.0,
            gamma: 5.0,
            w: 1.0,
            delta_nu: 0.0,
            delta_eta: 0.5,
        }
    }
}

impl BoucWenParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha = {} must lie in [0, 1]", self.alpha)));
        }
        if !(self.k > 0.0) {
            return Err(Error::config(format!("k = {} must be positive", self.k)));
        }
        if !(self.w >= 1.0) {
            return Err(Error::config(format!("w = {} must be at least 1", self.w)));
        }
        if self.alpha < 1.0 && !(self.beta + self.gamma > 0.0) {
            return Err(Error::config("beta + gamma must be positive when hysteresis is active"));
        }
        Ok(())
    }

    pub fn with_stiffness(self, k: f64) -> Self {
        Self { k, ..self }
    }

    /// Ceiling of `|z|` under monotone loading with no degradation.
    ///
    /// Follows from setting `ż = 0` with `sign(z) = sign(v)` in the rate law,
    /// so it is finite only when `β > γ`.
    pub fn monotone_ceiling(&self) -> Option<f64> {
        let d = self.beta - self.gamma;
        (d > 0.0).then(|| (self.a / d).powf(1.0 / self.w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoucWenState {
    pub z: f64,
    /// Absorbed hysteretic energy ε(t) = ∫ z·du̇ dt.
    pub eps_energy: f64,
    pub nu: f64,
    pub eta_deg: f64,
}

impl Default for BoucWenState {
    fn default() -> Self {
        Self { z: 0.0, eps_energy: 0.0, nu: 1.0, eta_deg: 1.0 }
    }
}

impl BoucWenState {
    pub fn new(z: f64, eps_energy: f64, params: &BoucWenParams) -> Self {
        Self {
            z,
            eps_energy,
            nu: 1.0 + params.delta_nu * eps_energy,
            eta_deg: 1.0 + params.delta_eta * eps_energy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub z_dot: f64,
    pub eps_dot: f64,
}

/// `|z|^p` with the convention `0^0 = 1`.
fn abs_pow(z: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if p == 1.0 {
        z.abs()
    } else {
        z.abs().powf(p)
    }
}

fn hysteresis_term(z: f64, v: f64, p: &BoucWenParams) -> f64 {
    p.beta * v.abs() * z * abs_pow(z, p.w - 1.0) - p.gamma * v * abs_pow(z, p.w)
}

pub fn boucwen_rate(state: &BoucWenState, du_dot: f64, params: &BoucWenParams) -> Result<Rates> {
    if !(state.eta_deg > 0.0) {
        return Err(Error::invalid(format!("degradation factor eta = {} is not positive", state.eta_deg)));
    }
    let z_dot = (params.a * du_dot - state.nu * hysteresis_term(state.z, du_dot, params)) / state.eta_deg;
    Ok(Rates { z_dot, eps_dot: state.z * du_dot })
}

pub fn restoring_force(du: f64, state: &BoucWenState, params: &BoucWenParams) -> f64 {
    params.alpha * params.k * du + (1.0 - params.alpha) * params.k * state.z
}

/// Result of one implicit update of a link.
#[derive(Debug, Clone, Copy)]
pub struct LinkUpdate {
    pub state: BoucWenState,
    /// Sensitivity of the updated `z` to the end-of-step relative velocity.
    pub dz_dv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkFailure {
    /// η dropped to zero or below.
    Degraded(f64),
    /// The scalar implicit solve did not converge.
    Stalled,
}

/// Backward-Euler step of the coupled (z, ε) system over `dt` with end-of-step
/// relative velocity `v`.
///
/// Solves `h(z) = z − z_n − dt·f(z, v, ε(z)) = 0` with `ε(z) = ε_n + dt·z·v`
/// by scalar Newton iteration, and returns `dz/dv` from implicit
/// differentiation of `h`.
pub fn backward_euler(
    prev: &BoucWenState,
    v: f64,
    dt: f64,
    p: &BoucWenParams,
) -> std::result::Result<LinkUpdate, LinkFailure> {
    let w = p.w;
    let eval = |z: f64| {
        let eps = prev.eps_energy + dt * z * v;
        let nu = 1.0 + p.delta_nu * eps;
        let eta = 1.0 + p.delta_eta * eps;
        let phi = hysteresis_term(z, v, p);
        let f = (p.a * v - nu * phi) / eta;
        // ∂φ/∂z and ∂φ/∂v
        let zw1 = abs_pow(z, w - 1.0);
        let dphi_dz = w * zw1 * (p.beta * v.abs() - p.gamma * v * z.signum());
        let dphi_dv = p.beta * v.signum() * z * zw1 - p.gamma * abs_pow(z, w);
        let deps_dz = dt * v;
        let deps_dv = dt * z;
        let df_dz = (-p.delta_nu * deps_dz * phi - nu * dphi_dz) / eta - f * p.delta_eta * deps_dz / eta;
        let df_dv = (p.a - p.delta_nu * deps_dv * phi - nu * dphi_dv) / eta - f * p.delta_eta * deps_dv / eta;
        (f, eps, nu, eta, df_dz, df_dv)
    };

    let scale = prev.z.abs().max(dt * v.abs() * p.a.abs()).max(1e-300);
    let mut z = prev.z;
    for _ in 0..60 {
        let (f, _, _, eta, df_dz, _) = eval(z);
        if !(eta > 0.0) {
            return Err(LinkFailure::Degraded(eta));
        }
        let h = z - prev.z - dt * f;
        let dh_dz = 1.0 - dt * df_dz;
        let step = h / dh_dz;
        if !step.is_finite() {
            return Err(LinkFailure::Stalled);
        }
        z -= step;
        if step.abs() <= 1e-14 * scale {
            let (_, eps, nu, eta, df_dz, df_dv) = eval(z);
            if !(eta > 0.0) {
                return Err(LinkFailure::Degraded(eta));
            }
            let dh_dz = 1.0 - dt * df_dz;
            let dz_dv = dt * df_dv / dh_dz;
            return Ok(LinkUpdate { state: BoucWenState { z, eps_energy: eps, nu, eta_deg: eta }, dz_dv });
        }
    }
    Err(LinkFailure::Stalled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain() -> BoucWenParams {
        BoucWenParams { delta_nu: 0.0, delta_eta: 0.0, ..BoucWenParams::default() }
    }

    #[test]
    fn rate_at_zero_z_is_elastic() {
        let p = plain();
        let r = boucwen_rate(&BoucWenState::default(), 0.7, &p).unwrap();
        assert_eq!(r.z_dot, p.a * 0.7);
        assert_eq!(r.eps_dot, 0.0);
    }

    #[test]
    fn no_motion_no_evolution() {
        let p = BoucWenParams::default();
        let s = BoucWenState::new(0.04, 0.3, &p);
        let r = boucwen_rate(&s, 0.0, &p).unwrap();
        assert_eq!(r.z_dot, 0.0);
        assert_eq!(r.eps_dot, 0.0);
    }

    #[test]
    fn rate_rejects_nonpositive_eta() {
        let s = BoucWenState { eta_deg: 0.0, ..BoucWenState::default() };
        assert!(boucwen_rate(&s, 1.0, &plain()).is_err());
    }

    #[test]
    fn restoring_force_cases() {
        let s0 = BoucWenState::default();
        let linear = BoucWenParams { alpha: 1.0, k: 3.0, ..plain() };
        let s = BoucWenState { z: 0.9, ..s0 };
        assert_eq!(restoring_force(0.25, &s, &linear), 0.75);
        assert_eq!(restoring_force(0.0, &s0, &plain()), 0.0);
        let p = BoucWenParams { alpha: 0.5, k: 2.0, ..plain() };
        let s = BoucWenState { z: 0.3, ..s0 };
        assert!((restoring_force(1.0, &s, &p) - 1.3).abs() < 1e-15);
    }

    #[test]
    fn state_constructor_links_factors_to_energy() {
        let p = BoucWenParams { delta_nu: 0.2, delta_eta: 0.5, ..plain() };
        let s = BoucWenState::new(0.0, 2.0, &p);
        assert_eq!(s.nu, 1.4);
        assert_eq!(s.eta_deg, 2.0);
    }

    #[test]
    fn backward_euler_sensitivity_matches_finite_difference() {
        let p = BoucWenParams { w: 1.7, delta_nu: 0.3, delta_eta: 0.6, ..BoucWenParams::default() };
        let prev = BoucWenState::new(0.03, 0.2, &p);
        let (v, dt, h) = (0.8, 0.01, 1e-7);
        let up = backward_euler(&prev, v, dt, &p).unwrap();
        let zp = backward_euler(&prev, v + h, dt, &p).unwrap().state.z;
        let zm = backward_euler(&prev, v - h, dt, &p).unwrap().state.z;
        let fd = (zp - zm) / (2.0 * h);
        assert!((up.dz_dv - fd).abs() <= 1e-6 * fd.abs().max(1e-12), "{} vs {fd}", up.dz_dv);
    }

    #[test]
    fn backward_euler_satisfies_its_residual() {
        let p = BoucWenParams::default();
        let prev = BoucWenState::new(-0.02, 0.1, &p);
        let (v, dt) = (-0.5, 0.005);
        let up = backward_euler(&prev, v, dt, &p).unwrap();
        let rate = boucwen_rate(&up.state, v, &p).unwrap();
        assert!((up.state.z - prev.z - dt * rate.z_dot).abs() < 1e-14);
        assert!((up.state.eps_energy - prev.eps_energy - dt * up.state.z * v).abs() < 1e-15);
        assert!((up.state.eta_deg - (1.0 + p.delta_eta * up.state.eps_energy)).abs() < 1e-15);
    }

    #[test]
    fn runaway_degradation_is_reported() {
        let p = BoucWenParams { delta_eta: -50.0, ..BoucWenParams::default() };
        let prev = BoucWenState::new(0.05, 0.019, &p);
        assert!(matches!(backward_euler(&prev, 1.0, 0.01, &p), Err(LinkFailure::Degraded(_))));
    }

    #[test]
    fn monotone_loading_follows_exponential_envelope() {
        let p = BoucWenParams { beta: 60.0, gamma: 20.0, ..plain() };
        let ceiling = p.monotone_ceiling().unwrap();
        let (v, dt) = (0.01, 1e-3);
        let mut s = BoucWenState::default();
        let mut worst: f64 = 0.0;
        for n in 1..=20_000 {
            s = backward_euler(&s, v, dt, &p).unwrap().state;
            let u = v * dt * n as f64;
            let exact = ceiling * (1.0 - (-(p.beta - p.gamma) * u).exp());
            worst = worst.max((s.z - exact).abs());
            assert!(s.z <= ceiling + 1e-6);
        }
        assert!(worst < 1e-3 * ceiling, "{worst}");
        assert!((s.z - ceiling).abs() < 1e-3 * ceiling);
    }

    proptest::proptest! {
        #[test]
        fn hysteretic_displacement_stays_below_ceiling(vs in proptest::collection::vec(-2.0f64..2.0, 1..200)) {
            let p = BoucWenParams { beta: 60.0, gamma: 20.0, ..plain() };
            let ceiling = p.monotone_ceiling().unwrap();
            let mut s = BoucWenState::default();
            for v in vs {
                s = backward_euler(&s, v, 0.002, &p).unwrap().state;
                proptest::prop_assert!(s.z.abs() <= ceiling + 1e-9);
            }
        }
    }
}
