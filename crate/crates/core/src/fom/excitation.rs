//! Synthetic base excitation: seeded white noise through a second-order
//! Butterworth low-pass, scaled by an amplitude factor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub amp: f64,
    /// Low-pass cutoff [Hz].
    pub f_but: f64,
    pub noise_seed: u64,
    pub dt: f64,
    pub duration: f64,
}

impl ExcitationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.duration >= self.dt) {
            return Err(Error::config(format!("duration {} shorter than dt {}", self.duration, self.dt)));
        }
        let nyquist = 0.5 / self.dt;
        if !(self.f_but > 0.0 && self.f_but < nyquist) {
            return Err(Error::config(format!(
                "cutoff {} Hz must lie in (0, {nyquist}) Hz (Nyquist)",
                self.f_but
            )));
        }
        Ok(())
    }

    /// Number of stored time points, including `t = 0`.
    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_steps()).map(|i| i as f64 * self.dt).collect()
    }
}

/// Direct-form-I biquad with zero initial state.
#[derive(Debug, Clone)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Biquad {
    /// Second-order Butterworth low-pass via the bilinear transform with
    /// frequency prewarping.
    pub fn butterworth_lowpass(cutoff: f64, sample_rate: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff / sample_rate).tan();
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
        let b0 = k * k * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - sqrt2 * k + k * k) * norm],
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    pub fn process(&mut self, input: f64) -> f64 {
        let out = self.b[0] * input + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [input, self.x[0]];
        self.y = [out, self.y[0]];
        out
    }

    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }
}

/// Ground-acceleration series of length [`ExcitationSpec::n_steps`].
pub fn generate_excitation(spec: &ExcitationSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let mut filter = Biquad::butterworth_lowpass(spec.f_but, 1.0 / spec.dt);
    Ok((0..spec.n_steps())
        .map(|_| {
            let white: f64 = StandardNormal.sample(&mut rng);
            spec.amp * filter.process(white)
        })
        .collect())
}
