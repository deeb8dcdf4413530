//! Run configuration: one JSON document covering data generation, training
//! and evaluation.

use serde::{Deserialize, Serialize};

use crate::learner::TrainConfig;
use crate::volume::{generate_synthetic, SyntheticSpec, Volume};
use crate::{Error, Result};

/// Where the volumes come from and how they are split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of volume files. When absent, volumes are synthesized.
    pub dir: Option<String>,
    /// Volumes written by `gen`.
    pub count: usize,
    /// The first `train` volumes train, the next `val` validate.
    pub train: usize,
    pub val: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            count: 50,
            train: 40,
            val: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. It replaces the seeds of `synthetic` and `train`.
    pub seed: u64,
    pub synthetic: SyntheticSpec,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parse and validate a JSON document. Unknown keys are rejected.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            let field = unknown_field(&e.to_string()).unwrap_or_else(|| "config".to_string());
            Error::config(field, e.to_string())
        })?;
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Push the master seed into every stochastic component.
    pub fn resolved(mut self) -> Self {
        self.synthetic.seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.train.validate()?;
        if self.data.train == 0 {
            return Err(Error::config("data.train", "must be positive"));
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Seed of the `index`-th synthetic volume of a dataset.
pub fn volume_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// `count` synthetic volumes with per-volume seeds derived from `spec.seed`.
pub fn generate_dataset(spec: &SyntheticSpec, count: usize) -> Result<Vec<Volume>> {
    (0..count)
        .map(|i| {
            generate_synthetic(&SyntheticSpec {
                seed: volume_seed(spec.seed, i),
                ..spec.clone()
            })
        })
        .collect()
}
