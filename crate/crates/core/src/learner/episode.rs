use std::io::Write;

use rand::{Rng, RngCore};

use super::{Exploration, PartialPolicy, TrainConfig};
use crate::approximator::{Head, Mode, Network};
use crate::mdp::{reward, transition, Action, Axis, Sign, Transition};
use crate::volume::{extract_state, Position, Volume};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceStep {
    /// Position after the move.
    pub position: Position,
    pub action: Action,
    pub reward: i8,
}

/// One walk through a volume.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub volume: usize,
    pub start: Position,
    pub steps: Vec<TraceStep>,
    pub cumulative_reward: i64,
}

impl EpisodeTrace {
    pub fn new(volume: usize, start: Position) -> Self {
        EpisodeTrace {
            volume,
            start,
            steps: Vec::new(),
            cumulative_reward: 0,
        }
    }

    pub fn push(&mut self, step: TraceStep) {
        self.cumulative_reward += i64::from(step.reward);
        self.steps.push(step);
    }

    /// Start followed by every visited position.
    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        std::iter::once(self.start).chain(self.steps.iter().map(|s| s.position))
    }
}

/// Trace CSV: `t,x,y,z,action,reward`. Row `t = 0` is the start position
/// with an empty action and zero reward.
pub fn write_trace_csv<W: Write>(trace: &EpisodeTrace, mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,x,y,z,action,reward")?;
    let [x, y, z] = trace.start;
    writeln!(w, "0,{x},{y},{z},,0")?;
    for (t, s) in trace.steps.iter().enumerate() {
        let [x, y, z] = s.position;
        writeln!(w, "{},{x},{y},{z},{},{}", t + 1, s.action, s.reward)?;
    }
    Ok(())
}

/// Uniform start position at least `m / 2` voxels from every face (or
/// anywhere along axes too short for that margin).
pub fn sample_start<R: Rng + ?Sized>(dims: [usize; 3], window: usize, rng: &mut R) -> Position {
    let margin = (window / 2) as i64;
    [0, 1, 2].map(|i| {
        let hi = dims[i] as i64 - 1;
        if hi - margin >= margin {
            rng.random_range(margin..=hi - margin)
        } else {
            rng.random_range(0..=hi)
        }
    })
}

fn target_of(volume: &Volume) -> Result<[f64; 3]> {
    volume
        .primary_landmark()
        .map(|(_, p)| p)
        .ok_or_else(|| Error::config("landmarks", "training volume has no landmark"))
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Dropout keep probability and epsilon for one schedule value.
fn exploration_knobs(cfg: &TrainConfig, explore: f64) -> (f64, f64) {
    match cfg.exploration {
        Exploration::Dropout { .. } => (explore, 0.0),
        Exploration::EpsilonGreedy { .. } => (1.0, explore),
        Exploration::None => (1.0, 0.0),
    }
}

/// Run `ceil(steps / 3)` step-sequences of x, y, z partial actions.
/// Every transition is handed to `sink` as soon as it happens.
pub fn collect_partial_episode<P: PartialPolicy + ?Sized>(
    volume: &Volume,
    volume_id: usize,
    policy: &P,
    cfg: &TrainConfig,
    explore: f64,
    rng: &mut dyn RngCore,
    sink: &mut dyn FnMut(Transition) -> Result<()>,
) -> Result<EpisodeTrace> {
    let target = target_of(volume)?;
    let (keep, epsilon) = exploration_knobs(cfg, explore);
    let mut q = sample_start(volume.dims(), cfg.window(), rng);
    let mut trace = EpisodeTrace::new(volume_id, q);
    for _ in 0..cfg.steps_per_episode.div_ceil(3) {
        for axis in Axis::ALL {
            let probs = policy.partial_distribution(volume, q, axis, keep, rng)?;
            let pick = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                rng.random_range(0..2)
            } else {
                sample_index(&probs, rng)
            };
            let behavior = (1.0 - epsilon) * probs[pick] + epsilon / 2.0;
            let action = Action::new(axis, if pick == 0 { Sign::Plus } else { Sign::Minus });
            let next = transition(q, action, cfg.eta, volume.dims());
            let r = reward(q, next, target);
            sink(Transition {
                volume: volume_id,
                from: q,
                action,
                to: next,
                reward: r,
                behavior,
            })?;
            trace.push(TraceStep {
                position: next,
                action,
                reward: r,
            });
            q = next;
        }
    }
    Ok(trace)
}

/// Run `steps` six-way actions from a single-policy network (softmax policy
/// in actor-critic mode, Q values in Q-learning mode).
pub fn collect_single_episode(
    volume: &Volume,
    volume_id: usize,
    net: &Network<f32>,
    cfg: &TrainConfig,
    explore: f64,
    rng: &mut dyn RngCore,
    sink: &mut dyn FnMut(Transition) -> Result<()>,
) -> Result<EpisodeTrace> {
    let head = match net.mode() {
        Mode::ActorCritic => Head::Policy,
        Mode::QLearning => Head::Q,
        Mode::Partial => {
            return Err(Error::config("mode", "partial networks use collect_partial_episode"))
        }
    };
    let target = target_of(volume)?;
    let (keep, epsilon) = exploration_knobs(cfg, explore);
    let mut q = sample_start(volume.dims(), cfg.window(), rng);
    let mut trace = EpisodeTrace::new(volume_id, q);
    for _ in 0..cfg.steps_per_episode {
        let explore_now = epsilon > 0.0 && rng.random::<f64>() < epsilon;
        let (pick, behavior) = if explore_now && head == Head::Q {
            (rng.random_range(0..6), 1.0)
        } else {
            let state = extract_state(volume, q, cfg.window());
            let out = net
                .evaluate(state.as_slice(), &[head], Some((keep, &mut *rng)))?
                .remove(0);
            let pick = if explore_now {
                rng.random_range(0..6)
            } else if head == Head::Q {
                argmax(&out)
            } else {
                sample_index(&out, rng)
            };
            // Q-learning ignores behavior probabilities.
            let behavior = if head == Head::Q { 1.0 } else { (1.0 - epsilon) * out[pick] + epsilon / 6.0 };
            (pick, behavior)
        };
        let action = Action::ALL[pick];
        let next = transition(q, action, cfg.eta, volume.dims());
        let r = reward(q, next, target);
        sink(Transition {
            volume: volume_id,
            from: q,
            action,
            to: next,
            reward: r,
            behavior,
        })?;
        trace.push(TraceStep {
            position: next,
            action,
            reward: r,
        });
        q = next;
    }
    Ok(trace)
}
