//! Convolutional actor-critic approximator.
//!
//! A shared trunk of conv(3x3) + ReLU + 2x2 max-pool stages turns the
//! tri-planar observation into a flat feature vector. Heads are small MLPs
//! (one hidden ReLU layer) on top of it:
//!
//! | mode           | heads                                                   |
//! |----------------|---------------------------------------------------------|
//! | `partial`      | three 2-way softmax policies and three scalar values    |
//! | `actor-critic` | one 6-way softmax policy and one scalar value           |
//! | `q-learning`   | one 6-way linear Q head                                 |
//!
//! Everything is generic over [`Scalar`] so the same code runs in `f32` for
//! training and `f64` for gradient checks.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod optimizer;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, load_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckReport, GRADCHECK_TOLERANCE};
pub use loss::{Gradients, LossSample, LossStats};
pub use optimizer::{Optimizer, OptimizerState};

use crate::mdp::Axis;
use crate::volume::State;
use crate::{Error, Result};

pub trait Scalar:
    Float + FromPrimitive + AddAssign + MulAssign + Sum + Debug + Default + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + AddAssign + MulAssign + Sum + Debug + Default + Send + Sync + 'static
{
}

/// Which family of heads sits on the trunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Partial,
    ActorCritic,
    QLearning,
}

impl Mode {
    pub fn heads(self) -> Vec<Head> {
        match self {
            Mode::Partial => Axis::ALL
                .map(Head::PartialPolicy)
                .into_iter()
                .chain(Axis::ALL.map(Head::PartialValue))
                .collect(),
            Mode::ActorCritic => vec![Head::Policy, Head::Value],
            Mode::QLearning => vec![Head::Q],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Partial => "partial",
            Mode::ActorCritic => "actor-critic",
            Mode::QLearning => "q-learning",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        [Mode::Partial, Mode::ActorCritic, Mode::QLearning]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("mode", format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    PartialPolicy(Axis),
    PartialValue(Axis),
    Policy,
    Value,
    Q,
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::PartialPolicy(_) => 2,
            Head::Policy | Head::Q => 6,
            Head::PartialValue(_) | Head::Value => 1,
        }
    }

    pub fn is_policy(self) -> bool {
        matches!(self, Head::PartialPolicy(_) | Head::Policy)
    }

    pub fn name(self) -> String {
        match self {
            Head::PartialPolicy(a) => format!("policy_{}", a.name()),
            Head::PartialValue(a) => format!("value_{}", a.name()),
            Head::Policy => "policy".into(),
            Head::Value => "value".into(),
            Head::Q => "q".into(),
        }
    }
}

/// Which loss a batch trains: the actor/critic pair of one axis, the single
/// actor/critic pair, or the Q head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selector {
    Axis(Axis),
    Single,
    Q,
}

impl Selector {
    /// `(actor head, critic or Q head)`.
    pub fn heads(self) -> (Option<Head>, Head) {
        match self {
            Selector::Axis(a) => (Some(Head::PartialPolicy(a)), Head::PartialValue(a)),
            Selector::Single => (Some(Head::Policy), Head::Value),
            Selector::Q => (None, Head::Q),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub mode: Mode,
    /// Observation window `m`.
    pub window: usize,
    /// Output channels of each conv stage.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Hidden width of every head.
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::desk(Mode::Partial)
    }
}

impl NetConfig {
    /// Four stages 16-32-32-64, hidden width 128, `m = 16`.
    pub fn desk(mode: Mode) -> Self {
        NetConfig {
            mode,
            window: 16,
            channels: vec![16, 32, 32, 64],
            kernel: 3,
            hidden: 128,
        }
    }

    /// Two narrow stages on an `m = 8` window, for gradient checks.
    pub fn tiny(mode: Mode) -> Self {
        NetConfig {
            mode,
            window: 8,
            channels: vec![4, 6],
            kernel: 3,
            hidden: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("window", "must be positive"));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("channels", "need at least one non-empty stage"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("kernel", "must be odd for same padding"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be positive"));
        }
        if self.channels.len() >= usize::BITS as usize || self.window >> self.channels.len() == 0 {
            return Err(Error::config(
                "channels",
                format!(
                    "{} pooling stages shrink a {}-voxel window to nothing",
                    self.channels.len(),
                    self.window
                ),
            ));
        }
        if self.window.checked_mul(self.window).and_then(|w| w.checked_mul(3)).is_none()
            || self.param_count().is_none()
        {
            return Err(Error::config("window", "network size overflows"));
        }
        Ok(())
    }

    /// Spatial side of every stage's input, plus the final pooled side.
    fn sides(&self) -> Vec<usize> {
        (0..=self.channels.len()).map(|j| self.window >> j).collect()
    }

    pub fn flat_width(&self) -> usize {
        let s = self.window >> self.channels.len();
        self.channels.last().copied().unwrap_or(0) * s * s
    }

    pub fn input_width(&self) -> usize {
        3 * self.window * self.window
    }

    /// Name and shape of every parameter tensor, in network order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel;
        let mut shapes = Vec::new();
        let mut in_c = 3;
        for (j, &out_c) in self.channels.iter().enumerate() {
            shapes.push((format!("trunk.{j}.weight"), vec![out_c, in_c, k, k]));
            shapes.push((format!("trunk.{j}.bias"), vec![out_c]));
            in_c = out_c;
        }
        let flat = self.flat_width();
        for head in self.mode.heads() {
            let name = head.name();
            shapes.push((format!("{name}.hidden.weight"), vec![self.hidden, flat]));
            shapes.push((format!("{name}.hidden.bias"), vec![self.hidden]));
            shapes.push((format!("{name}.out.weight"), vec![head.outputs(), self.hidden]));
            shapes.push((format!("{name}.out.bias"), vec![head.outputs()]));
        }
        shapes
    }

    /// Total parameter count, or `None` if it overflows.
    pub fn param_count(&self) -> Option<usize> {
        let mut total = 0usize;
        let mut in_c = 3usize;
        let kk = self.kernel.checked_mul(self.kernel)?;
        for &out_c in &self.channels {
            total = total.checked_add(out_c.checked_mul(in_c)?.checked_mul(kk)?.checked_add(out_c)?)?;
            in_c = out_c;
        }
        let side = self.window >> self.channels.len().min(usize::BITS as usize - 1);
        let flat = in_c.checked_mul(side)?.checked_mul(side)?;
        for head in self.mode.heads() {
            let per = self
                .hidden
                .checked_mul(flat)?
                .checked_add(self.hidden)?
                .checked_add(head.outputs().checked_mul(self.hidden)?)?
                .checked_add(head.outputs())?;
            total = total.checked_add(per)?;
        }
        Some(total)
    }
}

/// One named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Tensors are laid out as `[stage weight, stage bias]*` for the trunk, then
/// `[hidden weight, hidden bias, out weight, out bias]` for each head in
/// [`Mode::heads`] order. Checkpoints use the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    config: NetConfig,
    heads: Vec<Head>,
    params: Vec<Param<T>>,
}

/// Which part of the network a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Trunk,
    Head(Head),
}

impl<T: Scalar> Network<T> {
    /// Weights uniform in `+-sqrt(6 / fan_in)` for ReLU layers and
    /// `+-1 / sqrt(fan_in)` for output layers; biases zero.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        let mut net = Network::zeros(config)?;
        let n_stage = net.config.channels.len();
        for (i, p) in net.params.iter_mut().enumerate() {
            let is_bias = p.shape.len() == 1;
            if is_bias {
                continue;
            }
            let fan_in: usize = p.shape[1..].iter().product();
            let output_layer = i >= 2 * n_stage && (i - 2 * n_stage) % 4 == 2;
            let bound = if output_layer {
                (1.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            for v in p.data.iter_mut() {
                *v = T::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let heads = config.mode.heads();
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| Param::zeros(name, shape))
            .collect();
        Ok(Network {
            config,
            heads,
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn group(&self, tensor: usize) -> Group {
        let trunk = 2 * self.config.channels.len();
        if tensor < trunk {
            Group::Trunk
        } else {
            Group::Head(self.heads[(tensor - trunk) / 4])
        }
    }

    fn head_slot(&self, head: Head) -> Result<usize> {
        self.heads
            .iter()
            .position(|&h| h == head)
            .map(|i| 2 * self.config.channels.len() + 4 * i)
            .ok_or_else(|| {
                Error::config("head", format!("{} has no {} head", self.config.mode.name(), head.name()))
            })
    }

    /// Convert every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            heads: self.heads.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    pub fn forward_trunk(&self, input: &[T]) -> Result<TrunkCache<T>> {
        if input.len() != self.config.input_width() {
            return Err(Error::config(
                "window",
                format!(
                    "state has {} values, trunk expects {} (m = {})",
                    input.len(),
                    self.config.input_width(),
                    self.config.window
                ),
            ));
        }
        let sides = self.config.sides();
        let k = self.config.kernel;
        let mut stages: Vec<StageCache<T>> = Vec::with_capacity(self.config.channels.len());
        let mut in_c = 3;
        for (j, &out_c) in self.config.channels.iter().enumerate() {
            let s = sides[j];
            let h = sides[j + 1];
            let src = if j == 0 { input } else { &stages[j - 1].pooled };
            let mut conv = vec![T::zero(); out_c * s * s];
            layers::conv_forward(
                src,
                in_c,
                s,
                &self.params[2 * j].data,
                &self.params[2 * j + 1].data,
                out_c,
                k,
                &mut conv,
            );
            let mut pooled = vec![T::zero(); out_c * h * h];
            let mut argmax = vec![0u32; out_c * h * h];
            layers::relu_pool_forward(&conv, out_c, s, &mut pooled, &mut argmax);
            stages.push(StageCache { conv, argmax, pooled });
            in_c = out_c;
        }
        Ok(TrunkCache {
            input: input.to_vec(),
            stages,
        })
    }

    pub fn forward_head(&self, head: Head, flat: &[T]) -> Result<HeadCache<T>> {
        let slot = self.head_slot(head)?;
        let hidden_n = self.config.hidden;
        let mut hidden_pre = vec![T::zero(); hidden_n];
        layers::dense_forward(&self.params[slot].data, &self.params[slot + 1].data, flat, &mut hidden_pre);
        let hidden: Vec<T> = hidden_pre.iter().map(|v| v.max(T::zero())).collect();
        let mut output = vec![T::zero(); head.outputs()];
        layers::dense_forward(&self.params[slot + 2].data, &self.params[slot + 3].data, &hidden, &mut output);
        Ok(HeadCache {
            head,
            hidden_pre,
            hidden,
            output,
        })
    }

    /// Evaluate one head on an observation. Policy heads return a
    /// distribution, value heads a scalar, the Q head six action values.
    ///
    /// `keep_prob < 1` applies inverted dropout to the flat trunk output;
    /// this is only meant for exploratory action sampling.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        state: &State,
        head: Head,
        keep_prob: f64,
        rng: &mut R,
    ) -> Result<(Output, ForwardCache<T>)> {
        if state.window() != self.config.window {
            return Err(Error::config(
                "window",
                format!("state window {} != trunk window {}", state.window(), self.config.window),
            ));
        }
        let input: Vec<T> = state.as_slice().iter().map(|&v| T::lit(v as f64)).collect();
        let trunk = self.forward_trunk(&input)?;
        let mut flat = trunk.flat().to_vec();
        apply_dropout(&mut flat, keep_prob, rng);
        let cache = self.forward_head(head, &flat)?;
        let output = Output::from_head(head, &cache.output);
        Ok((
            output,
            ForwardCache {
                trunk,
                heads: vec![cache],
            },
        ))
    }

    /// Post-processed outputs of several heads from one trunk pass: softmax
    /// probabilities for policies, raw outputs otherwise.
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        input: &[T],
        heads: &[Head],
        dropout: Option<(f64, &mut R)>,
    ) -> Result<Vec<Vec<f64>>> {
        let trunk = self.forward_trunk(input)?;
        let mut flat = trunk.flat().to_vec();
        if let Some((keep, rng)) = dropout {
            apply_dropout(&mut flat, keep, rng);
        }
        heads
            .iter()
            .map(|&h| {
                let cache = self.forward_head(h, &flat)?;
                Ok(Output::from_head(h, &cache.output).into_vec())
            })
            .collect()
    }
}

impl<T: Scalar> Param<T> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param {
            name,
            shape,
            data: vec![T::zero(); n],
        }
    }
}

fn apply_dropout<T: Scalar, R: Rng + ?Sized>(flat: &mut [T], keep_prob: f64, rng: &mut R) {
    if keep_prob >= 1.0 {
        return;
    }
    let scale = T::lit(1.0 / keep_prob);
    for v in flat.iter_mut() {
        if rng.random::<f64>() < keep_prob {
            *v *= scale;
        } else {
            *v = T::zero();
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    Distribution(Vec<f64>),
    Scalar(f64),
    Values(Vec<f64>),
}

impl Output {
    fn from_head<T: Scalar>(head: Head, raw: &[T]) -> Output {
        match head {
            Head::PartialPolicy(_) | Head::Policy => Output::Distribution(softmax(raw)),
            Head::PartialValue(_) | Head::Value => Output::Scalar(raw[0].as_f64()),
            Head::Q => Output::Values(raw.iter().map(|v| v.as_f64()).collect()),
        }
    }

    pub fn into_vec(self) -> Vec<f64> {
        match self {
            Output::Distribution(v) | Output::Values(v) => v,
            Output::Scalar(v) => vec![v],
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageCache<T> {
    conv: Vec<T>,
    argmax: Vec<u32>,
    pooled: Vec<T>,
}

/// Trunk activations kept for backpropagation.
#[derive(Clone, Debug)]
pub struct TrunkCache<T> {
    input: Vec<T>,
    stages: Vec<StageCache<T>>,
}

impl<T> TrunkCache<T> {
    pub fn flat(&self) -> &[T] {
        &self.stages.last().expect("at least one stage").pooled
    }
}

#[derive(Clone, Debug)]
pub struct HeadCache<T> {
    pub head: Head,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
    /// Logits, value or Q values.
    pub output: Vec<T>,
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub trunk: TrunkCache<T>,
    pub heads: Vec<HeadCache<T>>,
}
