use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::episode::{collect_partial_episode, collect_single_episode};
use super::{td_quantities, PartialLearner, PartialPolicy, TrainConfig};
use crate::approximator::{
    Head, LossSample, LossStats, Mode, Network, OptimizerState, Selector,
};
use crate::localizer::{cases_from_volumes, evaluate, EvalSettings};
use crate::mdp::{Axis, Transition};
use crate::replay::ReplayMemory;
use crate::volume::{extract_state, Position, State, Volume};
use crate::{Error, Result};

/// A network together with its optimizer state.
#[derive(Clone, Debug)]
pub struct NetworkAgent {
    pub net: Network<f32>,
    opt: OptimizerState<f32>,
}

impl NetworkAgent {
    pub fn new(net: Network<f32>, cfg: &TrainConfig) -> Self {
        let opt = OptimizerState::new(cfg.optimizer, &net);
        NetworkAgent { net, opt }
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn into_network(self) -> Network<f32> {
        self.net
    }

    /// One gradient step of the single-policy baselines on `batch`.
    pub fn update_single(
        &mut self,
        batch: &[Transition],
        volumes: &[Volume],
        cfg: &TrainConfig,
    ) -> Result<LossStats> {
        let (selector, next_head) = match self.net.mode() {
            Mode::ActorCritic => (Selector::Single, Head::Value),
            Mode::QLearning => (Selector::Q, Head::Q),
            Mode::Partial => return Err(Error::config("mode", "partial networks update per axis")),
        };
        let states = states_of(batch, volumes, cfg.window())?;
        let mut samples = Vec::with_capacity(batch.len());
        for (t, (s, s_next)) in batch.iter().zip(&states) {
            let out = self.net.evaluate::<ChaCha8Rng>(s_next.as_slice(), &[next_head], None)?;
            let v_next = if next_head == Head::Q {
                out[0].iter().copied().fold(f64::NEG_INFINITY, f64::max)
            } else {
                out[0][0]
            };
            let (tau, _) = td_quantities(f64::from(t.reward), v_next, 0.0, cfg.gamma);
            samples.push(LossSample {
                input: s.as_slice(),
                action: t.action.index(),
                td_target: tau,
                td_error: None,
                behavior: (selector == Selector::Single).then_some(t.behavior),
            });
        }
        self.step(&samples, selector, cfg.alpha)
    }

    fn step(&mut self, samples: &[LossSample<'_, f32>], selector: Selector, alpha: f64) -> Result<LossStats> {
        let (grads, stats) = self.net.loss_and_gradients(samples, selector)?;
        self.opt.step(&mut self.net, &grads, alpha);
        if !self.net.is_finite() {
            return Err(Error::Numerical("parameters became non-finite".into()));
        }
        Ok(stats)
    }
}

fn states_of(batch: &[Transition], volumes: &[Volume], window: usize) -> Result<Vec<(State, State)>> {
    batch
        .iter()
        .map(|t| {
            let v = volumes.get(t.volume).ok_or_else(|| {
                Error::Contract(format!("transition refers to volume {} of {}", t.volume, volumes.len()))
            })?;
            Ok((extract_state(v, t.from, window), extract_state(v, t.to, window)))
        })
        .collect()
}

impl PartialPolicy for Network<f32> {
    fn partial_distribution(
        &self,
        volume: &Volume,
        q: Position,
        axis: Axis,
        keep_prob: f64,
        rng: &mut dyn RngCore,
    ) -> Result<[f64; 2]> {
        let state = extract_state(volume, q, self.config().window);
        let out = self.evaluate(state.as_slice(), &[Head::PartialPolicy(axis)], Some((keep_prob, rng)))?;
        Ok([out[0][0], out[0][1]])
    }
}

impl PartialPolicy for NetworkAgent {
    fn partial_distribution(
        &self,
        volume: &Volume,
        q: Position,
        axis: Axis,
        keep_prob: f64,
        rng: &mut dyn RngCore,
    ) -> Result<[f64; 2]> {
        self.net.partial_distribution(volume, q, axis, keep_prob, rng)
    }
}

impl PartialLearner for NetworkAgent {
    fn update_axis(
        &mut self,
        axis: Axis,
        batch: &[Transition],
        volumes: &[Volume],
        cfg: &TrainConfig,
    ) -> Result<LossStats> {
        if let Some(t) = batch.iter().find(|t| t.axis() != axis) {
            return Err(Error::Contract(format!(
                "{} transition in the {} batch",
                t.action,
                axis.name()
            )));
        }
        let states = states_of(batch, volumes, cfg.window())?;
        let mut samples = Vec::with_capacity(batch.len());
        for (t, (s, s_next)) in batch.iter().zip(&states) {
            let out =
                self.net
                    .evaluate::<ChaCha8Rng>(s_next.as_slice(), &[Head::PartialValue(axis)], None)?;
            let (tau, _) = td_quantities(f64::from(t.reward), out[0][0], 0.0, cfg.gamma);
            samples.push(LossSample {
                input: s.as_slice(),
                action: t.action.partial_index(),
                td_target: tau,
                td_error: None,
                behavior: Some(t.behavior),
            });
        }
        self.step(&samples, Selector::Axis(axis), cfg.alpha)
    }
}

/// Replay memories for a training run: one per axis in partial mode.
#[derive(Clone, Debug)]
pub enum Memories {
    Partial([ReplayMemory; 3]),
    Single(ReplayMemory),
}

impl Memories {
    pub fn for_config(cfg: &TrainConfig) -> Result<Self> {
        Ok(match cfg.mode {
            Mode::Partial => Memories::Partial(ReplayMemory::per_axis(cfg.replay_capacity)?),
            _ => Memories::Single(ReplayMemory::new(cfg.replay_capacity, None)?),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub episodes: usize,
    pub transitions: usize,
    /// Mean cumulative reward per episode.
    pub mean_reward: f64,
    pub updates: usize,
    /// Mean losses over the epoch's gradient steps.
    pub actor_loss: f64,
    pub critic_loss: f64,
}

impl EpochStats {
    fn absorb(&mut self, s: LossStats) {
        self.updates += 1;
        self.actor_loss += s.actor;
        self.critic_loss += s.critic;
    }

    fn finish(&mut self, total_reward: i64) {
        self.mean_reward = total_reward as f64 / self.episodes.max(1) as f64;
        if self.updates > 0 {
            self.actor_loss /= self.updates as f64;
            self.critic_loss /= self.updates as f64;
        }
    }
}

fn annotate(e: Error, epoch: usize, batch: usize, axis: Option<Axis>) -> Error {
    match e {
        Error::Numerical(msg) => {
            let axis = axis.map(|a| format!(", axis {}", a.name())).unwrap_or_default();
            Error::Numerical(format!("epoch {epoch}, batch {batch}{axis}: {msg}"))
        }
        other => other,
    }
}

/// One partial-policy epoch: collect episodes, then interleave x, y, z
/// minibatch updates. Each memory gets `ceil(new / minibatch) * passes`
/// steps.
pub fn train_epoch_partial<L: PartialLearner + ?Sized>(
    learner: &mut L,
    memories: &mut [ReplayMemory; 3],
    volumes: &[Volume],
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut dyn RngCore,
) -> Result<EpochStats> {
    if volumes.is_empty() {
        return Err(Error::config("data.train", "no training volumes"));
    }
    let explore = cfg.exploration.value(epoch, cfg.epochs);
    let mut stats = EpochStats {
        epoch,
        ..EpochStats::default()
    };
    let mut pushed = [0usize; 3];
    let mut total_reward = 0i64;
    for _ in 0..cfg.episodes_per_epoch {
        let vid = rng.random_range(0..volumes.len());
        let trace = collect_partial_episode(
            &volumes[vid],
            vid,
            &*learner,
            cfg,
            explore,
            rng,
            &mut |t: Transition| {
                let i = t.axis().index();
                pushed[i] += 1;
                memories[i].push(t)
            },
        )?;
        total_reward += trace.cumulative_reward;
        stats.episodes += 1;
        stats.transitions += trace.steps.len();
    }
    let steps = pushed.map(|p| p.div_ceil(cfg.minibatch) * cfg.update_passes);
    let rounds = steps.iter().copied().max().unwrap_or(0);
    for b in 0..rounds {
        for axis in Axis::ALL {
            if b >= steps[axis.index()] {
                continue;
            }
            let batch = memories[axis.index()].sample(cfg.minibatch, rng)?;
            let s = learner
                .update_axis(axis, &batch, volumes, cfg)
                .map_err(|e| annotate(e, epoch, b, Some(axis)))?;
            stats.absorb(s);
        }
    }
    stats.finish(total_reward);
    Ok(stats)
}

/// One epoch in any mode.
pub fn train_epoch(
    agent: &mut NetworkAgent,
    memories: &mut Memories,
    volumes: &[Volume],
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut dyn RngCore,
) -> Result<EpochStats> {
    let memory = match memories {
        Memories::Partial(m) => return train_epoch_partial(agent, m, volumes, cfg, epoch, rng),
        Memories::Single(m) => m,
    };
    if volumes.is_empty() {
        return Err(Error::config("data.train", "no training volumes"));
    }
    let explore = cfg.exploration.value(epoch, cfg.epochs);
    let mut stats = EpochStats {
        epoch,
        ..EpochStats::default()
    };
    let mut pushed = 0usize;
    let mut total_reward = 0i64;
    for _ in 0..cfg.episodes_per_epoch {
        let vid = rng.random_range(0..volumes.len());
        let trace = collect_single_episode(
            &volumes[vid],
            vid,
            &agent.net,
            cfg,
            explore,
            rng,
            &mut |t: Transition| {
                pushed += 1;
                memory.push(t)
            },
        )?;
        total_reward += trace.cumulative_reward;
        stats.episodes += 1;
        stats.transitions += trace.steps.len();
    }
    for b in 0..pushed.div_ceil(cfg.minibatch) * cfg.update_passes {
        let batch = memory.sample(cfg.minibatch, rng)?;
        let s = agent
            .update_single(&batch, volumes, cfg)
            .map_err(|e| annotate(e, epoch, b, None))?;
        stats.absorb(s);
    }
    stats.finish(total_reward);
    Ok(stats)
}

/// One row of the learning curves. Errors are mean distances in mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub mean_reward: f64,
    pub train_err: f64,
    pub val_err: f64,
    pub val_median: f64,
    /// Validation mean and median error in voxels.
    pub val_err_vox: f64,
    pub val_median_vox: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
}

/// Curves CSV: `epoch,mean_reward,train_err,val_err`.
pub fn write_curves_csv<W: Write>(rows: &[CurveRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,mean_reward,train_err,val_err")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.epoch, r.mean_reward, r.train_err, r.val_err)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters before the first update.
    pub initial: Network<f32>,
    pub network: Network<f32>,
    /// Lowest validation mean error seen (the final network when there is no
    /// validation set, the initial one when no epoch ran).
    pub best: Network<f32>,
    pub best_epoch: Option<usize>,
    pub curves: Vec<CurveRow>,
}

/// Train from scratch. `on_epoch` sees each curve row with the network after
/// that epoch; returning an error aborts the run.
pub fn train<F>(train_set: &[Volume], val_set: &[Volume], cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&CurveRow, &Network<f32>) -> Result<()>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("data.train", "no training volumes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = Network::<f32>::new(cfg.net_config(), &mut rng)?;
    let mut agent = NetworkAgent::new(initial.clone(), cfg);
    let mut memories = Memories::for_config(cfg)?;
    let settings = EvalSettings::from_train(cfg);
    let train_probe = &train_set[..cfg.eval.train_volumes.min(train_set.len())];
    let train_cases = cases_from_volumes(train_probe)?;
    let val_cases = cases_from_volumes(val_set)?;
    let mut best: Option<(f64, usize, Network<f32>)> = None;
    let mut curves = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let stats = train_epoch(&mut agent, &mut memories, train_set, cfg, epoch, &mut rng)?;
        let train_err = if train_cases.is_empty() {
            f64::NAN
        } else {
            evaluate(agent.network(), &train_cases, &settings)?.summary.mean_mm
        };
        let (val_err, val_median, val_err_vox, val_median_vox) = if val_cases.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let s = evaluate(agent.network(), &val_cases, &settings)?.summary;
            (s.mean_mm, s.median_mm, s.mean_vox, s.median_vox)
        };
        let row = CurveRow {
            epoch: epoch + 1,
            mean_reward: stats.mean_reward,
            train_err,
            val_err,
            val_median,
            val_err_vox,
            val_median_vox,
            actor_loss: stats.actor_loss,
            critic_loss: stats.critic_loss,
        };
        log::info!(
            "epoch {} reward {:.2} train {:.2} val {:.2} (median {:.2})",
            row.epoch,
            row.mean_reward,
            row.train_err,
            row.val_err,
            row.val_median
        );
        if val_err.is_finite() && best.as_ref().is_none_or(|b| val_err < b.0) {
            best = Some((val_err, row.epoch, agent.network().clone()));
        }
        on_epoch(&row, agent.network())?;
        curves.push(row);
    }
    let network = agent.into_network();
    let (best, best_epoch) = match best {
        Some((_, e, net)) => (net, Some(e)),
        None if cfg.epochs == 0 => (initial.clone(), None),
        None => (network.clone(), Some(cfg.epochs)),
    };
    Ok(TrainOutcome {
        initial,
        network,
        best,
        best_epoch,
        curves,
    })
}
