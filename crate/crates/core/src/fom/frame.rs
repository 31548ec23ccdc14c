//! Shear-frame idealization: lumped story masses joined by Bouc-Wen links.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::boucwen::BoucWenParams;
use super::excitation::ExcitationSpec;
use crate::error::{Error, Result};

/// One inter-story link. Story `None` is the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub lower: Option<usize>,
    pub upper: usize,
    /// Stiffness multiplier per story DOF (length `dofs_per_story`).
    pub stiffness_factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub n_stories: usize,
    #[serde(default = "one")]
    pub dofs_per_story: usize,
    pub story_masses: Vec<f64>,
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub rayleigh_damping: Option<[f64; 2]>,
    /// Ground-acceleration influence vector, one unit direction per story.
    pub excitation_influence: Vec<f64>,
    #[serde(default)]
    pub boucwen: BoucWenParams,
    /// Young's modulus [GPa] at which link stiffness equals `boucwen.k`.
    #[serde(default = "default_modulus")]
    pub reference_modulus: f64,
    /// Force per unit of filtered excitation on each story [N].
    #[serde(default = "unit")]
    pub load_scale: f64,
}

const LOAD: f64 = 0.1;
const STORY_MASS: f64 = 500.0;

/// Link law shared by the presets: yield ceiling `A/(β−γ)` of 0.025 m.
fn preset_links() -> BoucWenParams {
    BoucWenParams { beta: 60.0, gamma: 20.0, ..BoucWenParams::default() }
}

fn unit() -> f64 {
    1.0
}

fn one() -> usize {
    1
}

fn default_modulus() -> f64 {
    210.0
}

impl FrameConfig {
    /// Chain of `n_stories` equal masses, each story linked to the one below
    /// (the first to the ground). Ground motion acts at angle `theta` from the
    /// first DOF axis; `direction_factors[d]` scales link stiffness along DOF `d`.
    pub fn shear_frame(
        n_stories: usize,
        dofs_per_story: usize,
        story_mass: f64,
        theta: f64,
        direction_factors: &[f64],
    ) -> Self {
        assert_eq!(direction_factors.len(), dofs_per_story, "one stiffness factor per story DOF");
        let links = (0..n_stories)
            .map(|s| LinkSpec {
                lower: s.checked_sub(1),
                upper: s,
                stiffness_factors: direction_factors.to_vec(),
            })
            .collect();
        let mut direction = vec![0.0; dofs_per_story];
        match dofs_per_story {
            1 => direction[0] = 1.0,
            _ => {
                direction[0] = theta.cos();
                direction[1] = theta.sin();
            }
        }
        Self {
            n_stories,
            dofs_per_story,
            story_masses: vec![story_mass; n_stories],
            links,
            rayleigh_damping: None,
            excitation_influence: direction.iter().copied().cycle().take(n_stories * dofs_per_story).collect(),
            boucwen: BoucWenParams::default(),
            reference_modulus: default_modulus(),
            load_scale: 1.0,
        }
    }

    /// Desk-scale benchmark frame.
    pub fn desk() -> Self {
        Self::preset(48)
    }

    /// Larger frame sized for the full-scale study (n = 256 > r̃ = 200).
    pub fn paper() -> Self {
        Self::preset(128)
    }

    /// Preset frame with `n_stories` stories.
    pub fn preset(n_stories: usize) -> Self {
        let base = Self::shear_frame(n_stories, 2, STORY_MASS, std::f64::consts::FRAC_PI_4, &[1.0, 1.3]);
        // 5 % damping at the fundamental mode and at 100 rad/s.
        let w1 = 2.0 * (preset_links().k / STORY_MASS).sqrt() * (std::f64::consts::PI / (4 * n_stories + 2) as f64).sin();
        Self {
            load_scale: LOAD,
            boucwen: preset_links(),
            rayleigh_damping: Some(rayleigh_coefficients(0.05, w1, 100.0)),
            ..base
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_stories * self.dofs_per_story
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stories == 0 || self.dofs_per_story == 0 {
            return Err(Error::config("n_stories and dofs_per_story must be at least 1"));
        }
        if self.story_masses.len() != self.n_stories {
            return Err(Error::config(format!(
                "story_masses has {} entries for {} stories",
                self.story_masses.len(),
                self.n_stories
            )));
        }
        if let Some(m) = self.story_masses.iter().find(|m| !(**m > 0.0)) {
            return Err(Error::config(format!("story mass {m} must be positive")));
        }
        if self.excitation_influence.len() != self.n_dofs() {
            return Err(Error::config(format!(
                "excitation_influence has {} entries, expected {}",
                self.excitation_influence.len(),
                self.n_dofs()
            )));
        }
        for (s, dir) in self.excitation_influence.chunks(self.dofs_per_story).enumerate() {
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!("influence direction of story {s} has norm {norm}, expected 1")));
            }
        }
        for (e, link) in self.links.iter().enumerate() {
            let in_range = |s: usize| s < self.n_stories;
            if !in_range(link.upper) || link.lower.is_some_and(|l| !in_range(l)) || link.lower == Some(link.upper) {
                return Err(Error::config(format!("link {e} couples invalid stories {:?} -> {}", link.lower, link.upper)));
            }
            if link.stiffness_factors.len() != self.dofs_per_story {
                return Err(Error::config(format!(
                    "link {e} has {} stiffness factors, expected {}",
                    link.stiffness_factors.len(),
                    self.dofs_per_story
                )));
            }
        }
        if let Some([a0, a1]) = self.rayleigh_damping {
            if a0 < 0.0 || a1 < 0.0 {
                return Err(Error::config("Rayleigh coefficients must be non-negative"));
            }
        }
        if !(self.load_scale > 0.0) {
            return Err(Error::config("load_scale must be positive"));
        }
        if !(self.reference_modulus > 0.0) {
            return Err(Error::config("reference_modulus must be positive"));
        }
        self.boucwen.validate()
    }
}

/// Mass and stiffness coefficients `[a0, a1]` giving damping ratio `zeta`
/// at the two circular frequencies `w1` and `w2`.
pub fn rayleigh_coefficients(zeta: f64, w1: f64, w2: f64) -> [f64; 2] {
    [2.0 * zeta * w1 * w2 / (w1 + w2), 2.0 * zeta / (w1 + w2)]
}

/// Parameter names understood by [`ModelParameters::from_named`].
pub const PARAMETER_NAMES: [&str; 6] = ["alpha", "k", "amp", "f_but", "E", "delta_eta"];

/// The six parametric traits of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub alpha: f64,
    pub k: f64,
    pub amp: f64,
    pub f_but: f64,
    /// Young's modulus [GPa]; scales every link stiffness proportionally.
    pub modulus: f64,
    pub delta_eta: f64,
}

impl ModelParameters {
    /// Nominal values: link traits from `config`, excitation traits from `spec`.
    pub fn nominal(config: &FrameConfig, spec: &ExcitationSpec) -> Self {
        Self {
            alpha: config.boucwen.alpha,
            k: config.boucwen.k,
            amp: spec.amp,
            f_but: spec.f_but,
            modulus: config.reference_modulus,
            delta_eta: config.boucwen.delta_eta,
        }
    }

    /// Overrides nominal values with named entries; unknown names are rejected.
    pub fn from_named(names: &[String], values: &[f64], nominal: Self) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::shape(format!("{} names for {} values", names.len(), values.len())));
        }
        let mut p = nominal;
        for (name, &v) in names.iter().zip(values) {
            match name.as_str() {
                "alpha" => p.alpha = v,
                "k" => p.k = v,
                "amp" => p.amp = v,
                "f_but" => p.f_but = v,
                "E" => p.modulus = v,
                "delta_eta" => p.delta_eta = v,
                other => {
                    return Err(Error::config(format!(
                        "unknown parameter `{other}`; expected one of {PARAMETER_NAMES:?}"
                    )))
                }
            }
        }
        Ok(p)
    }

    pub fn excitation(&self, template: &ExcitationSpec) -> ExcitationSpec {
        ExcitationSpec { amp: self.amp, f_but: self.f_but, ..*template }
    }
}

/// A single scalar Bouc-Wen element acting along one DOF pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDof {
    /// Global DOF below the link, `None` for ground.
    pub lower: Option<usize>,
    pub upper: usize,
    /// Owning link (the element unit used by hyper-reduction).
    pub element: usize,
    pub params: BoucWenParams,
}

/// Frame instantiated at one parameter realisation.
#[derive(Debug, Clone)]
pub struct FrameModel {
    pub masses: DVector<f64>,
    pub damping: Option<DMatrix<f64>>,
    pub influence: DVector<f64>,
    pub link_dofs: Vec<LinkDof>,
    pub n_elements: usize,
}

impl FrameModel {
    pub fn new(config: &FrameConfig, params: &ModelParameters) -> Result<Self> {
        config.validate()?;
        let base = BoucWenParams {
            alpha: params.alpha,
            k: params.k,
            delta_eta: params.delta_eta,
            ..config.boucwen
        };
        base.validate()?;
        if !(params.modulus > 0.0) {
            return Err(Error::config(format!("modulus {} must be positive", params.modulus)));
        }
        let dps = config.dofs_per_story;
        let scale = params.modulus / config.reference_modulus;
        let mut link_dofs = Vec::with_capacity(config.links.len() * dps);
        for (e, link) in config.links.iter().enumerate() {
            for d in 0..dps {
                link_dofs.push(LinkDof {
                    lower: link.lower.map(|s| s * dps + d),
                    upper: link.upper * dps + d,
                    element: e,
                    params: base.with_stiffness(base.k * scale * link.stiffness_factors[d]),
                });
            }
        }
        let masses = DVector::from_iterator(
            config.n_dofs(),
            config.story_masses.iter().flat_map(|&m| std::iter::repeat(m).take(dps)),
        );
        let mut model = Self {
            masses,
            damping: None,
            influence: DVector::from_column_slice(&config.excitation_influence) * config.load_scale,
            link_dofs,
            n_elements: config.links.len(),
        };
        if let Some([a0, a1]) = config.rayleigh_damping {
            let mut c = model.initial_stiffness() * a1;
            for i in 0..model.n_dofs() {
                c[(i, i)] += a0 * model.masses[i];
            }
            model.damping = Some(c);
        }
        Ok(model)
    }

    pub fn n_dofs(&self) -> usize {
        self.masses.len()
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.masses)
    }

    /// Elastic stiffness at z = 0, where dz/du = A.
    pub fn initial_stiffness(&self) -> DMatrix<f64> {
        let n = self.n_dofs();
        let mut k = DMatrix::zeros(n, n);
        for l in &self.link_dofs {
            let p = &l.params;
            let kl = p.k * (p.alpha + (1.0 - p.alpha) * p.a);
            k[(l.upper, l.upper)] += kl;
            if let Some(lo) = l.lower {
                k[(lo, lo)] += kl;
                k[(lo, l.upper)] -= kl;
                k[(l.upper, lo)] -= kl;
            }
        }
        k
    }

    /// DOF indices touched by an element.
    pub fn element_dofs(&self, element: usize) -> Vec<usize> {
        let mut dofs: Vec<usize> = self
            .link_dofs
            .iter()
            .filter(|l| l.element == element)
            .flat_map(|l| l.lower.into_iter().chain(std::iter::once(l.upper)))
            .collect();
        dofs.sort_unstable();
        dofs.dedup();
        dofs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shear_frame_layout() {
        let c = FrameConfig::shear_frame(3, 2, 10.0, std::f64::consts::FRAC_PI_4, &[1.0, 2.0]);
        c.validate().unwrap();
        assert_eq!(c.n_dofs(), 6);
        let m = FrameModel::new(&c, &ModelParameters::nominal(&c, &spec())).unwrap();
        assert_eq!(m.link_dofs.len(), 6);
        assert_eq!(m.link_dofs[0].lower, None);
        assert_eq!(m.link_dofs[3].lower, Some(1));
        assert_eq!(m.link_dofs[3].upper, 3);
        assert_eq!(m.link_dofs[3].params.k, 2.0 * c.boucwen.k);
        assert_eq!(m.element_dofs(1), vec![0, 1, 2, 3]);
    }

    fn spec() -> ExcitationSpec {
        ExcitationSpec { amp: 1.0, f_but: 5.0, noise_seed: 0, dt: 0.01, duration: 1.0 }
    }

    #[test]
    fn modulus_scales_stiffness() {
        let c = FrameConfig::shear_frame(2, 1, 1.0, 0.0, &[1.0]);
        let mut p = ModelParameters::nominal(&c, &spec());
        p.modulus = 2.0 * c.reference_modulus;
        let m = FrameModel::new(&c, &p).unwrap();
        assert_eq!(m.link_dofs[0].params.k, 2.0 * c.boucwen.k);
    }

    #[test]
    fn rejects_bad_influence_and_masses() {
        let mut c = FrameConfig::shear_frame(2, 1, 1.0, 0.0, &[1.0]);
        c.excitation_influence[1] = 0.5;
        assert!(c.validate().is_err());
        let mut c = FrameConfig::shear_frame(2, 1, 1.0, 0.0, &[1.0]);
        c.story_masses[0] = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn named_parameters_override_nominal() {
        let c = FrameConfig::desk();
        let nominal = ModelParameters::nominal(&c, &spec());
        let names: Vec<String> = vec!["alpha".into(), "E".into()];
        let p = ModelParameters::from_named(&names, &[0.3, 200.0], nominal).unwrap();
        assert_eq!(p.alpha, 0.3);
        assert_eq!(p.modulus, 200.0);
        assert_eq!(p.k, nominal.k);
        let bad: Vec<String> = vec!["zeta".into()];
        assert!(ModelParameters::from_named(&bad, &[1.0], nominal).is_err());
    }
}
