//! Layered run configuration: profile defaults < JSON file < command-line flags.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::denoiser::DenoiseConfig;
use crate::error::{Error, Result};
use crate::field::TrainingConfig;
use crate::noise::NoiseSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Full-scale hyperparameters.
    #[default]
    Standard,
    /// Tuned for desk-size clouds.
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "desk" => Ok(Self::Desk),
            other => Err(Error::config("profile", format!("unknown profile '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub denoise: DenoiseConfig,
    pub training: TrainingConfig,
    pub noise: NoiseSpec,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Standard => Self::default(),
            Profile::Desk => Self {
                denoise: DenoiseConfig::desk(),
                ..Self::default()
            },
        }
    }

    /// Profile defaults overridden by the keys present in `json`.
    pub fn layered_str(profile: Profile, json: &str) -> Result<Self> {
        let mut base = serde_json::to_value(Self::for_profile(profile))?;
        let overlay: Value = serde_json::from_str(json)?;
        if !overlay.is_object() {
            return Err(Error::config("config", "top level must be a JSON object"));
        }
        merge(&mut base, overlay);
        serde_json::from_value(base).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn layered(profile: Profile, file: Option<&Path>) -> Result<Self> {
        match file {
            None => Ok(Self::for_profile(profile)),
            Some(path) => Self::layered_str(profile, &std::fs::read_to_string(path)?),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.denoise.validate()?;
        self.training.validate()?;
        self.noise.validate()
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
