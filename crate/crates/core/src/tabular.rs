//! Lookup-table stand-in for the network, keyed by position.
//!
//! Each axis owns a table of policy logits and a table of state values. The
//! update is the same mean minibatch actor-critic step the network takes,
//! with the gradient applied to the visited entries only.

use rand::RngCore;

use crate::approximator::{softmax, LossStats};
use crate::learner::{td_quantities, PartialLearner, PartialPolicy, TrainConfig};
use crate::localizer::Walker;
use crate::mdp::{Action, Axis, Sign, Transition};
use crate::volume::{Position, Volume};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TabularModel {
    dims: [usize; 3],
    /// Per axis, two logits per voxel.
    logits: [Vec<f64>; 3],
    values: [Vec<f64>; 3],
    /// When set, updates leave the policy tables alone.
    pub frozen_policy: bool,
}

impl TabularModel {
    /// Uniform policies and zero values.
    pub fn new(dims: [usize; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::config("dims", "must be positive"));
        }
        let n: usize = dims.iter().product();
        Ok(TabularModel {
            dims,
            logits: std::array::from_fn(|_| vec![0.0; 2 * n]),
            values: std::array::from_fn(|_| vec![0.0; n]),
            frozen_policy: false,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn slot(&self, q: Position) -> Result<usize> {
        if (0..3).any(|i| q[i] < 0 || q[i] as usize >= self.dims[i]) {
            return Err(Error::Contract(format!("position {q:?} outside table {:?}", self.dims)));
        }
        let [x, y, z] = q.map(|c| c as usize);
        Ok(x + self.dims[0] * (y + self.dims[1] * z))
    }

    pub fn logits(&self, axis: Axis, q: Position) -> Result<[f64; 2]> {
        let s = self.slot(q)?;
        let l = &self.logits[axis.index()];
        Ok([l[2 * s], l[2 * s + 1]])
    }

    pub fn set_logits(&mut self, axis: Axis, q: Position, logits: [f64; 2]) -> Result<()> {
        let s = self.slot(q)?;
        self.logits[axis.index()][2 * s..2 * s + 2].copy_from_slice(&logits);
        Ok(())
    }

    pub fn probabilities(&self, axis: Axis, q: Position) -> Result<[f64; 2]> {
        let p = softmax(&self.logits(axis, q)?);
        Ok([p[0], p[1]])
    }

    pub fn value(&self, axis: Axis, q: Position) -> Result<f64> {
        Ok(self.values[axis.index()][self.slot(q)?])
    }

    /// The more probable partial action (`+` on ties).
    pub fn greedy(&self, axis: Axis, q: Position) -> Result<Sign> {
        let l = self.logits(axis, q)?;
        Ok(if l[0] >= l[1] { Sign::Plus } else { Sign::Minus })
    }

    /// Advantage `eps` of one transition under the current values.
    pub fn advantage(&self, t: &Transition, gamma: f64) -> Result<f64> {
        let axis = t.axis();
        let (_, eps) = td_quantities(
            f64::from(t.reward),
            self.value(axis, t.to)?,
            self.value(axis, t.from)?,
            gamma,
        );
        Ok(eps)
    }
}

impl PartialPolicy for TabularModel {
    fn partial_distribution(
        &self,
        _volume: &Volume,
        q: Position,
        axis: Axis,
        _keep_prob: f64,
        _rng: &mut dyn RngCore,
    ) -> Result<[f64; 2]> {
        self.probabilities(axis, q)
    }
}

impl PartialLearner for TabularModel {
    fn update_axis(
        &mut self,
        axis: Axis,
        batch: &[Transition],
        _volumes: &[Volume],
        cfg: &TrainConfig,
    ) -> Result<LossStats> {
        if batch.is_empty() {
            return Err(Error::Contract("update on an empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut stats = LossStats::default();
        let mut logit_grads = Vec::with_capacity(batch.len());
        let mut value_grads = Vec::with_capacity(batch.len());
        // Gradients are computed from the pre-update tables, then applied.
        for t in batch {
            if t.axis() != axis {
                return Err(Error::Contract(format!("{} transition in the {} batch", t.action, axis.name())));
            }
            let from = self.slot(t.from)?;
            let (_, eps) = td_quantities(
                f64::from(t.reward),
                self.value(axis, t.to)?,
                self.values[axis.index()][from],
                cfg.gamma,
            );
            let probs = self.probabilities(axis, t.from)?;
            let a = t.action.partial_index();
            if t.behavior.is_nan() || t.behavior <= 0.0 {
                return Err(Error::Contract(format!("behavior probability {} is not positive", t.behavior)));
            }
            // Truncated importance weight on the actor term only.
            let coef = eps * (probs[a] / t.behavior).min(1.0);
            stats.actor += -coef * probs[a].max(f64::MIN_POSITIVE).ln() * scale;
            stats.critic += eps * eps * scale;
            stats.advantage += eps * scale;
            // d/dlogit_k of -coef * log pi(a) = -coef * (1[k = a] - pi_k)
            let g = [0, 1].map(|k| -coef * (f64::from(u8::from(k == a)) - probs[k]) * scale);
            logit_grads.push((from, g));
            value_grads.push((from, -2.0 * eps * scale));
        }
        let ax = axis.index();
        if !self.frozen_policy {
            for (s, g) in logit_grads {
                self.logits[ax][2 * s] -= cfg.alpha * g[0];
                self.logits[ax][2 * s + 1] -= cfg.alpha * g[1];
            }
        }
        for (s, g) in value_grads {
            self.values[ax][s] -= cfg.alpha * g;
        }
        if !stats.critic.is_finite() {
            return Err(Error::Numerical("tabular loss became non-finite".into()));
        }
        Ok(stats)
    }
}

impl Walker for TabularModel {
    fn partial(&self) -> bool {
        true
    }

    fn greedy_action(&self, _volume: &Volume, q: Position, step: usize) -> Result<Action> {
        let axis = Axis::ALL[step % 3];
        Ok(Action::new(axis, self.greedy(axis, q)?))
    }
}
