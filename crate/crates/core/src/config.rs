//! Run configuration: one TOML document describing the benchmark, the design
//! of experiments and every model setting.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cvae::TrainConfig;
use crate::error::{Error, Result};
use crate::fom::{ExcitationSpec, FrameConfig};
use crate::sampling::ParameterDomain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoeConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub seed_train: u64,
    pub seed_valid: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionConfig {
    /// Modes per local basis (`r`).
    pub rank: usize,
    /// Modes of the global basis (`r̃`).
    pub global_rank: usize,
    /// Leading fraction of the record left out of error measures.
    pub settle_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacConfig {
    pub mac_tolerance: f64,
    pub max_clusters: usize,
    /// Neighbours in the cluster vote.
    pub k_neighbours: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpromConfig {
    pub k_int: usize,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcswConfig {
    pub tau: f64,
    /// Every `stride`-th training state enters the fit.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqConfig {
    pub n_draws: usize,
    pub seed: u64,
    /// Envelopes are computed for at most this many samples per split.
    pub max_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Parameter pair of the error map.
    pub map_axes: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub doe: DoeConfig,
    pub domain: ParameterDomain,
    pub excitation: ExcitationSpec,
    pub reduction: ReductionConfig,
    pub macprom: MacConfig,
    pub cprom: CpromConfig,
    pub cvae: TrainConfig,
    pub ecsw: EcswConfig,
    pub uq: UqConfig,
    pub report: ReportConfig,
    pub frame: FrameConfig,
}

impl RunConfig {
    /// 20 + 50 samples on the 48-story frame, `r = 8`, `r̃ = 64`.
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            doe: DoeConfig { n_train: 20, n_valid: 50, seed_train: 11, seed_valid: 22 },
            domain: ParameterDomain::benchmark(),
            excitation: ExcitationSpec { amp: 2.0e6, f_but: 10.0, noise_seed: 7, dt: 0.001, duration: 4.0 },
            reduction: ReductionConfig { rank: 8, global_rank: 64, settle_fraction: 0.01 },
            macprom: MacConfig { mac_tolerance: 0.05, max_clusters: 4, k_neighbours: 3 },
            cprom: CpromConfig { k_int: 4, power: 2.0 },
            cvae: TrainConfig { seed: 5, ..TrainConfig::default() },
            ecsw: EcswConfig { tau: 0.01, stride: 5 },
            uq: UqConfig { n_draws: 40, seed: 3, max_samples: 3 },
            report: ReportConfig { map_axes: ["alpha".into(), "amp".into()] },
            frame: FrameConfig::desk(),
        }
    }

    /// 50 + 500 samples on the 128-story frame, `r = 16`, `r̃ = 200`.
    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            preset: "paper".into(),
            doe: DoeConfig { n_train: 50, n_valid: 500, ..desk.doe },
            reduction: ReductionConfig { rank: 16, global_rank: 200, ..desk.reduction },
            macprom: MacConfig { max_clusters: 8, ..desk.macprom },
            frame: FrameConfig::paper(),
            ..desk
        }
    }

    /// Six stories, half a second of motion; runs in seconds.
    pub fn tiny() -> Self {
        let desk = Self::desk();
        Self {
            preset: "tiny".into(),
            doe: DoeConfig { n_train: 6, n_valid: 3, ..desk.doe },
            excitation: ExcitationSpec { duration: 0.5, ..desk.excitation },
            reduction: ReductionConfig { rank: 3, global_rank: 8, ..desk.reduction },
            macprom: MacConfig { max_clusters: 2, ..desk.macprom },
            cvae: TrainConfig { epochs: 150, ..desk.cvae },
            uq: UqConfig { n_draws: 6, max_samples: 1, ..desk.uq },
            frame: FrameConfig::preset(6),
            ..desk
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::config(format!("unknown preset `{other}` (expected desk, paper or tiny)"))),
        }
    }

    /// Re-derives every seed from one master value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.doe.seed_train = seed;
        self.doe.seed_valid = seed.wrapping_add(1);
        self.cvae.seed = seed.wrapping_add(2);
        self.uq.seed = seed.wrapping_add(3);
        self.excitation.noise_seed = seed.wrapping_add(4);
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::config(format!("malformed configuration: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hash of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        self.excitation.validate()?;
        self.domain.validate()?;
        self.cvae.validate()?;
        if self.doe.n_train < 2 || self.doe.n_valid == 0 {
            return Err(Error::config("doe needs at least 2 training and 1 validation sample"));
        }
        let r = &self.reduction;
        if r.rank == 0 || r.global_rank < r.rank || r.global_rank > self.frame.n_dofs() {
            return Err(Error::config(format!(
                "need 1 <= rank ({}) <= global_rank ({}) <= n_dofs ({})",
                r.rank,
                r.global_rank,
                self.frame.n_dofs()
            )));
        }
        if !(0.0..1.0).contains(&r.settle_fraction) {
            return Err(Error::config("settle_fraction must lie in [0, 1)"));
        }
        if !(self.macprom.mac_tolerance > 0.0 && self.macprom.mac_tolerance < 1.0) || self.macprom.max_clusters == 0 {
            return Err(Error::config("macprom needs mac_tolerance in (0, 1) and max_clusters >= 1"));
        }
        if self.macprom.k_neighbours == 0 || self.macprom.k_neighbours % 2 == 0 {
            return Err(Error::config("macprom.k_neighbours must be odd"));
        }
        if self.cprom.k_int == 0 || !(self.cprom.power > 0.0) {
            return Err(Error::config("cprom needs k_int >= 1 and a positive power"));
        }
        if !(self.ecsw.tau > 0.0 && self.ecsw.tau <= 1.0) || self.ecsw.stride == 0 {
            return Err(Error::config("ecsw needs tau in (0, 1] and stride >= 1"));
        }
        if self.uq.n_draws == 0 {
            return Err(Error::config("uq.n_draws must be at least 1"));
        }
        for axis in &self.report.map_axes {
            if !self.domain.names.contains(axis) {
                return Err(Error::config(format!("report axis `{axis}` is not a domain parameter")));
            }
        }
        // Every domain name must be a model parameter.
        crate::fom::ModelParameters::from_named(
            &self.domain.names,
            &self.domain.lower,
            crate::fom::ModelParameters::nominal(&self.frame, &self.excitation),
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for c in [RunConfig::desk(), RunConfig::paper(), RunConfig::tiny()] {
            c.validate().unwrap();
            let back = RunConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
        assert_eq!(RunConfig::desk().doe.n_train, 20);
        assert_eq!(RunConfig::paper().reduction.global_rank, 200);
        assert!(RunConfig::preset("laptop").is_err());
    }

    #[test]
    fn missing_key_is_named() {
        let text = RunConfig::desk().to_toml().replacen("lower = ", "lowr = ", 1);
        let msg = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(msg.contains("lower"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = RunConfig::desk();
        c.reduction.global_rank = 500;
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk();
        c.macprom.k_neighbours = 2;
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk();
        c.report.map_axes[0] = "zeta".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn seed_changes_the_hash() {
        let a = RunConfig::desk();
        let b = RunConfig::desk().with_seed(99);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(b.doe.seed_valid, 100);
    }
}
