//! Episode collection, TD(0) quantities and the three training procedures.
//!
//! In `partial` mode every episode repeats the step-sequence
//! `(a_x, a_y, a_z)`: each partial action is sampled from its own head at the
//! current position, applied, rewarded and pushed into its axis memory before
//! the next axis acts. Updates for an axis touch only that axis' policy and
//! value heads plus the shared trunk.
//!
//! `actor-critic` and `q-learning` are the single-policy baselines over the
//! six-way action space.

mod config;
mod episode;
mod train;

use rand::RngCore;

pub use config::{EvalConfig, Exploration, TrainConfig};
pub use episode::{
    collect_partial_episode, collect_single_episode, sample_start, write_trace_csv, EpisodeTrace,
    TraceStep,
};
pub use train::{
    train, train_epoch, train_epoch_partial, write_curves_csv, CurveRow, EpochStats, Memories,
    NetworkAgent, TrainOutcome,
};

use crate::approximator::LossStats;
use crate::mdp::{Axis, Transition};
use crate::volume::{Position, Volume};
use crate::Result;

/// TD target `tau = r + gamma * V(s')` and TD error `eps = tau - V(s)`.
pub fn td_quantities(reward: f64, v_next: f64, v_curr: f64, gamma: f64) -> (f64, f64) {
    let tau = reward + gamma * v_next;
    (tau, tau - v_curr)
}

/// A stochastic policy over each partial action space.
pub trait PartialPolicy {
    /// Probabilities of `(i+, i-)` at `q`. `keep_prob < 1` requests
    /// exploratory dropout where the model supports it.
    fn partial_distribution(
        &self,
        volume: &Volume,
        q: Position,
        axis: Axis,
        keep_prob: f64,
        rng: &mut dyn RngCore,
    ) -> Result<[f64; 2]>;
}

/// A partial policy that can learn from replayed transitions of one axis.
pub trait PartialLearner: PartialPolicy {
    /// One gradient step on a minibatch drawn from the `axis` memory.
    fn update_axis(
        &mut self,
        axis: Axis,
        batch: &[Transition],
        volumes: &[Volume],
        cfg: &TrainConfig,
    ) -> Result<LossStats>;
}
