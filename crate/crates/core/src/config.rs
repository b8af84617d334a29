//! Run configuration for the command line, read from a single JSON file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelError};
use crate::field::RegularizationWeights;
use crate::model::TrackingConfig;
use crate::sampling::CylindricalSamplingSpec;
use crate::strain::LvAxes;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tracking: TrackingConfig,
    pub regularization: RegularizationWeights,
    pub sampling: CylindricalSamplingSpec,
    pub axes: LvAxes,
    pub seed: u64,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tracking: TrackingConfig::default(),
            regularization: RegularizationWeights::default(),
            sampling: CylindricalSamplingSpec::default(),
            axes: LvAxes::default(),
            seed: 7,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.tracking.validate()?;
        self.regularization.validate()?;
        self.sampling.validate()?;
        self.axes.validate()?;
        Ok(())
    }
}
