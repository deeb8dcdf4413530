use serde::{Deserialize, Serialize};

use crate::approximator::{Mode, NetConfig, Optimizer};
use crate::replay::DEFAULT_CAPACITY;
use crate::{Error, Result};

/// How training episodes explore.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Exploration {
    /// Dropout on the flat trunk output while sampling actions, with the keep
    /// probability annealed linearly from `start` to `end` over the epochs.
    Dropout { start: f64, end: f64 },
    /// With probability epsilon (annealed linearly) take a uniformly random
    /// action; otherwise sample the policy, or act greedily on Q.
    EpsilonGreedy { start: f64, end: f64 },
    /// Sample the policy as is (greedy for Q).
    None,
}

impl Exploration {
    /// Schedule value at `epoch` (0-based) of `epochs`.
    pub fn value(&self, epoch: usize, epochs: usize) -> f64 {
        let (start, end) = match *self {
            Exploration::Dropout { start, end } | Exploration::EpsilonGreedy { start, end } => (start, end),
            Exploration::None => return 0.0,
        };
        let frac = if epochs <= 1 {
            0.0
        } else {
            (epoch.min(epochs - 1)) as f64 / (epochs - 1) as f64
        };
        start + (end - start) * frac
    }
}

/// Held-out evaluation run after every epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub starts: usize,
    pub steps: usize,
    /// Number of trailing positions averaged into the estimate.
    pub last: usize,
    /// How many training volumes to localize for the train-error column.
    pub train_volumes: usize,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            starts: 5,
            steps: 300,
            last: 10,
            train_volumes: 5,
            workers: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::config("eval.starts", "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::config("eval.steps", "must be positive"));
        }
        if self.last == 0 {
            return Err(Error::config("eval.last", "must be positive"));
        }
        if self.workers == 0 {
            return Err(Error::config("eval.workers", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Discount factor, `0 <= gamma < 1`.
    pub gamma: f64,
    /// Learning rate shared by actor and critic.
    pub alpha: f64,
    /// Step length in voxels.
    pub eta: i64,
    pub episodes_per_epoch: usize,
    /// Environment steps per episode. Partial mode runs `steps / 3`
    /// step-sequences (rounded up).
    pub steps_per_episode: usize,
    pub epochs: usize,
    pub replay_capacity: usize,
    pub minibatch: usize,
    /// Multiplier on the per-epoch gradient steps, which default to one pass
    /// of `ceil(new transitions / minibatch)` per memory.
    pub update_passes: usize,
    pub exploration: Exploration,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Network shape. Its `mode` is overridden by [`TrainConfig::mode`] and
    /// its `window` is the observation window `m`.
    pub net: NetConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_mode(Mode::Partial)
    }
}

impl TrainConfig {
    /// Defaults for a mode: dropout exploration for the actor-critic modes,
    /// epsilon-greedy 1.0 -> 0.1 for Q-learning.
    pub fn for_mode(mode: Mode) -> Self {
        TrainConfig {
            mode,
            gamma: 0.9,
            alpha: 1e-4,
            eta: 2,
            episodes_per_epoch: 300,
            steps_per_episode: 300,
            epochs: 50,
            replay_capacity: DEFAULT_CAPACITY,
            minibatch: 64,
            update_passes: 1,
            exploration: match mode {
                Mode::QLearning => Exploration::EpsilonGreedy { start: 1.0, end: 0.1 },
                _ => Exploration::Dropout { start: 0.1, end: 0.7 },
            },
            optimizer: Optimizer::adam(),
            seed: 0,
            net: NetConfig::desk(mode),
            eval: EvalConfig::default(),
        }
    }

    pub fn window(&self) -> usize {
        self.net.window
    }

    /// The network configuration with the mode applied.
    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            mode: self.mode,
            ..self.net.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1)"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config("alpha", "must be finite and non-negative"));
        }
        if self.eta < 1 {
            return Err(Error::config("eta", "must be at least 1"));
        }
        for (field, v) in [
            ("episodes_per_epoch", self.episodes_per_epoch),
            ("steps_per_episode", self.steps_per_episode),
            ("replay_capacity", self.replay_capacity),
            ("minibatch", self.minibatch),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        match self.exploration {
            Exploration::Dropout { start, end } => {
                for (f, v) in [("exploration.start", start), ("exploration.end", end)] {
                    if !(v > 0.0 && v <= 1.0) {
                        return Err(Error::config(f, "keep probability must lie in (0, 1]"));
                    }
                }
            }
            Exploration::EpsilonGreedy { start, end } => {
                for (f, v) in [("exploration.start", start), ("exploration.end", end)] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::config(f, "epsilon must lie in [0, 1]"));
                    }
                }
            }
            Exploration::None => {}
        }
        self.net_config().validate()?;
        self.eval.validate()
    }
}
