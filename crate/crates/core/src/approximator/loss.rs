//! TD losses and their gradients.
//!
//! For a batch of `B` samples the mean loss is
//!
//! ```text
//! actor-critic:  (1/B) sum [ -eps * log pi(a|s) + (tau - V(s))^2 ]
//! Q-learning:    (1/B) sum [ (tau - Q(s, a))^2 ]
//! ```
//!
//! The advantage `eps` is a constant coefficient: no gradient flows from the
//! actor term into the critic. Replayed samples may carry the probability `mu`
//! the behavior policy gave their action; the actor coefficient then becomes
//! `eps * min(1, pi(a|s) / mu)`, also held constant.

use super::{layers, Group, Head, HeadCache, Network, Scalar, Selector};
use crate::{Error, Result};

/// One training sample. `input` is the flattened observation.
#[derive(Clone, Copy, Debug)]
pub struct LossSample<'a, T> {
    pub input: &'a [T],
    /// Action index within the actor's (or Q head's) output.
    pub action: usize,
    /// TD target `tau`.
    pub td_target: f64,
    /// TD error `eps`. When `None` it is taken as `tau - V(s)` from this very
    /// forward pass, still as a constant.
    pub td_error: Option<f64>,
    /// Behavior probability of `action`. When set, the actor coefficient is
    /// scaled by `min(1, pi(a|s) / behavior)`.
    pub behavior: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    /// Mean actor loss over the batch (0 for Q-learning).
    pub actor: f64,
    /// Mean squared TD residual.
    pub critic: f64,
    /// Mean advantage.
    pub advantage: f64,
}

/// Gradients shaped like the network's parameters. Tensors of heads the
/// batch did not touch stay exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub(crate) tensors: Vec<Vec<T>>,
    pub(crate) touched: Vec<bool>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Gradients {
            tensors: net.params().iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            touched: vec![false; net.params().len()],
        }
    }

    pub fn tensors(&self) -> &[Vec<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.tensors
    }

    /// Whether tensor `i` received any contribution.
    pub fn touched(&self, i: usize) -> bool {
        self.touched[i]
    }

    pub fn mark_all(&mut self) {
        self.touched.iter_mut().for_each(|t| *t = true);
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs().as_f64()))
    }
}

struct SampleLoss {
    actor: f64,
    critic: f64,
    advantage: f64,
}

impl<T: Scalar> Network<T> {
    /// Mean batch loss and its gradient with respect to the selected heads
    /// and the shared trunk.
    pub fn loss_and_gradients(
        &self,
        batch: &[LossSample<'_, T>],
        selector: Selector,
    ) -> Result<(Gradients<T>, LossStats)> {
        self.run_batch(batch, selector, true)
            .map(|(g, s)| (g.expect("gradients requested"), s))
    }

    /// The same mean loss without gradients (`actor + critic`).
    pub fn batch_loss(&self, batch: &[LossSample<'_, T>], selector: Selector) -> Result<f64> {
        let (_, stats) = self.run_batch(batch, selector, false)?;
        Ok(stats.actor + stats.critic)
    }

    fn run_batch(
        &self,
        batch: &[LossSample<'_, T>],
        selector: Selector,
        want_grads: bool,
    ) -> Result<(Option<Gradients<T>>, LossStats)> {
        if batch.is_empty() {
            return Err(Error::Contract("loss over an empty batch".into()));
        }
        let (actor_head, critic_head) = selector.heads();
        let actor_slot = actor_head.map(|h| self.head_slot(h)).transpose()?;
        let critic_slot = self.head_slot(critic_head)?;
        let mut grads = want_grads.then(|| Gradients::zeros_like(self));
        if let Some(g) = grads.as_mut() {
            for i in 0..self.params.len() {
                g.touched[i] = match self.group(i) {
                    Group::Trunk => true,
                    Group::Head(h) => h == critic_head || Some(h) == actor_head,
                };
            }
        }
        let scale = 1.0 / batch.len() as f64;
        let mut stats = LossStats::default();
        for (i, sample) in batch.iter().enumerate() {
            let per = self.sample_step(
                sample,
                actor_head,
                actor_slot,
                critic_head,
                critic_slot,
                scale,
                grads.as_mut(),
            )
            .map_err(|reason| Error::Numerical(format!("batch sample {i}: {reason}")))?;
            stats.actor += per.actor * scale;
            stats.critic += per.critic * scale;
            stats.advantage += per.advantage * scale;
        }
        Ok((grads, stats))
    }

    #[allow(clippy::too_many_arguments)]
    fn sample_step(
        &self,
        sample: &LossSample<'_, T>,
        actor_head: Option<Head>,
        actor_slot: Option<usize>,
        critic_head: Head,
        critic_slot: usize,
        scale: f64,
        grads: Option<&mut Gradients<T>>,
    ) -> std::result::Result<SampleLoss, String> {
        let trunk = self.forward_trunk(sample.input).map_err(|e| e.to_string())?;
        let flat = trunk.flat();
        let critic = self.forward_head(critic_head, flat).map_err(|e| e.to_string())?;
        let tau = sample.td_target;
        if !tau.is_finite() {
            return Err("non-finite TD target".into());
        }
        let (residual, mut d_critic) = if critic_head == Head::Q {
            if sample.action >= 6 {
                return Err(format!("action index {} out of range", sample.action));
            }
            let q = critic.output[sample.action].as_f64();
            let r = tau - q;
            let mut d = vec![T::zero(); 6];
            d[sample.action] = T::lit(-2.0 * r * scale);
            (r, d)
        } else {
            let r = tau - critic.output[0].as_f64();
            (r, vec![T::lit(-2.0 * r * scale)])
        };
        if !residual.is_finite() {
            return Err("non-finite critic output".into());
        }
        let mut out = SampleLoss {
            actor: 0.0,
            critic: residual * residual,
            advantage: 0.0,
        };

        let mut actor_cache = None;
        if let Some(head) = actor_head {
            let cache = self.forward_head(head, flat).map_err(|e| e.to_string())?;
            let n = head.outputs();
            if sample.action >= n {
                return Err(format!("action index {} out of range for {}", sample.action, head.name()));
            }
            let eps = sample.td_error.unwrap_or(residual);
            let probs = super::softmax(&cache.output);
            let z: Vec<f64> = cache.output.iter().map(|v| v.as_f64()).collect();
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
            let log_pi = z[sample.action] - lse;
            if !(log_pi.is_finite() && eps.is_finite()) {
                return Err("non-finite policy output".into());
            }
            let weight = match sample.behavior {
                Some(mu) if mu > 0.0 => (log_pi.exp() / mu).min(1.0),
                Some(_) => return Err("non-positive behavior probability".into()),
                None => 1.0,
            };
            let coef = eps * weight;
            out.actor = -coef * log_pi;
            out.advantage = eps;
            let dz: Vec<T> = (0..n)
                .map(|k| {
                    let onehot = if k == sample.action { 1.0 } else { 0.0 };
                    T::lit(coef * (probs[k] - onehot) * scale)
                })
                .collect();
            actor_cache = Some((cache, dz));
        }

        let Some(grads) = grads else {
            return Ok(out);
        };
        let mut dflat = vec![T::zero(); flat.len()];
        self.head_backward(critic_slot, &critic, flat, &mut d_critic, grads, &mut dflat);
        if let (Some((cache, mut dz)), Some(slot)) = (actor_cache, actor_slot) {
            self.head_backward(slot, &cache, flat, &mut dz, grads, &mut dflat);
        }
        self.trunk_backward(&trunk, dflat, grads);
        Ok(out)
    }

    fn head_backward(
        &self,
        slot: usize,
        cache: &HeadCache<T>,
        flat: &[T],
        dout: &mut [T],
        grads: &mut Gradients<T>,
        dflat: &mut [T],
    ) {
        let hidden_n = self.config.hidden;
        let mut dhidden = vec![T::zero(); hidden_n];
        {
            let (lo, hi) = grads.tensors.split_at_mut(slot + 3);
            layers::dense_backward(
                &self.params[slot + 2].data,
                &cache.hidden,
                dout,
                &mut lo[slot + 2],
                &mut hi[0],
                Some(&mut dhidden),
            );
        }
        for (d, &pre) in dhidden.iter_mut().zip(&cache.hidden_pre) {
            if pre <= T::zero() {
                *d = T::zero();
            }
        }
        let (lo, hi) = grads.tensors.split_at_mut(slot + 1);
        layers::dense_backward(
            &self.params[slot].data,
            flat,
            &dhidden,
            &mut lo[slot],
            &mut hi[0],
            Some(dflat),
        );
    }

    fn trunk_backward(&self, trunk: &super::TrunkCache<T>, dflat: Vec<T>, grads: &mut Gradients<T>) {
        let sides = self.config.sides();
        let k = self.config.kernel;
        let mut dpooled = dflat;
        for j in (0..self.config.channels.len()).rev() {
            let out_c = self.config.channels[j];
            let in_c = if j == 0 { 3 } else { self.config.channels[j - 1] };
            let s = sides[j];
            let stage = &trunk.stages[j];
            let mut dconv = vec![T::zero(); out_c * s * s];
            layers::relu_pool_backward(&stage.conv, &stage.argmax, &dpooled, &mut dconv);
            let src: &[T] = if j == 0 { &trunk.input } else { &trunk.stages[j - 1].pooled };
            let mut din = (j > 0).then(|| vec![T::zero(); in_c * s * s]);
            let (lo, hi) = grads.tensors.split_at_mut(2 * j + 1);
            layers::conv_backward(
                src,
                in_c,
                s,
                &self.params[2 * j].data,
                out_c,
                k,
                &dconv,
                &mut lo[2 * j],
                &mut hi[0],
                din.as_deref_mut(),
            );
            if let Some(d) = din {
                dpooled = d;
            }
        }
    }
}
