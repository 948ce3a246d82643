//! TOML configuration: one file with `[model]`, `[controller]` and `[sim]`
//! sections, each optional and each field individually defaultable. An
//! empty file yields the shipped defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlError, ControllerConfig};
use crate::model::{ModelError, RobotModel};
use crate::sim::{SimConfig, SimErrorKind};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub model: RobotModel,
    pub controller: ControllerConfig,
    pub sim: SimConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Serialize(#[from] toml::ser::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Controller(#[from] ControlError),
    #[error(transparent)]
    Sim(#[from] SimErrorKind),
    #[error("unknown override key {key:?}; see `doc::OVERRIDE_KEYS`")]
    UnknownKey { key: String },
}

/// Keys accepted by [`ConfigFile::apply_override`], i.e. the parameters a
/// sweep can vary.
pub const OVERRIDE_KEYS: &[&str] = &[
    "controller.f_peak_y",
    "controller.f_peak_z",
    "controller.p_ref_y",
    "controller.p_ref_z",
    "controller.stance_duration",
    "controller.blend_time",
    "controller.lambda",
    "model.spring.stiffness",
    "model.spring.rest_angle",
    "sim.n_hops",
    "sim.t_max",
];

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ConfigFile = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.controller.validate()?;
        self.sim.validate()?;
        Ok(())
    }

    /// Sets one scalar parameter by dotted key. `sim.n_hops` rounds to the
    /// nearest integer; everything else is taken verbatim. Validation runs
    /// afterwards so an override cannot smuggle in an invalid value.
    pub fn apply_override(&mut self, key: &str, value: f64) -> Result<(), ConfigError> {
        match key {
            "controller.f_peak_y" => self.controller.f_peak[0] = value,
            "controller.f_peak_z" => self.controller.f_peak[1] = value,
            "controller.p_ref_y" => self.controller.p_ref_hip[0] = value,
            "controller.p_ref_z" => self.controller.p_ref_hip[1] = value,
            "controller.stance_duration" => self.controller.stance_duration = value,
            "controller.blend_time" => self.controller.blend_time = value,
            "controller.lambda" => self.controller.lambda = value,
            "model.spring.stiffness" => self.model.spring.stiffness = value,
            "model.spring.rest_angle" => self.model.spring.rest_angle = value,
            "sim.n_hops" => self.sim.n_hops = value.round().max(0.0) as u32,
            "sim.t_max" => self.sim.t_max = value,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_owned(),
                })
            }
        }
        self.validate()
    }
}
