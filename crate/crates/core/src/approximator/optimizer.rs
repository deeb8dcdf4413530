use serde::{Deserialize, Serialize};

use super::loss::Gradients;
use super::{Network, Scalar};

/// Update rule applied to loss gradients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    /// `p <- p - alpha * g`.
    Sgd,
    /// Adam with per-tensor bias correction. Tensors a batch does not touch
    /// keep both their moments and their values.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam()
    }
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Plain gradient-descent step on the loss: the critic moves down its
    /// squared error and the actor up its advantage-weighted log-likelihood.
    pub fn apply_update(&mut self, grads: &Gradients<T>, alpha: f64) {
        let a = T::lit(alpha);
        for (i, p) in self.params.iter_mut().enumerate() {
            if !grads.touched[i] {
                continue;
            }
            for (v, &g) in p.data.iter_mut().zip(&grads.tensors[i]) {
                *v = *v - a * g;
            }
        }
    }
}

/// Running state of an [`Optimizer`] for one network.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    rule: Optimizer,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: Vec<i32>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(rule: Optimizer, net: &Network<T>) -> Self {
        let (first, second) = match rule {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => {
                let z: Vec<Vec<T>> = net.params().iter().map(|p| vec![T::zero(); p.data.len()]).collect();
                (z.clone(), z)
            }
        };
        OptimizerState {
            rule,
            first,
            second,
            steps: vec![0; net.params().len()],
        }
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, alpha: f64) {
        let Optimizer::Adam { beta1, beta2, epsilon } = self.rule else {
            net.apply_update(grads, alpha);
            return;
        };
        let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(epsilon));
        let one = T::one();
        for (i, p) in net.params.iter_mut().enumerate() {
            if !grads.touched[i] {
                continue;
            }
            self.steps[i] += 1;
            let t = self.steps[i];
            let c1 = T::lit(1.0 - beta1.powi(t));
            let c2 = T::lit(1.0 - beta2.powi(t));
            let lr = T::lit(alpha);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (k, (w, &g)) in p.data.iter_mut().zip(&grads.tensors[i]).enumerate() {
                m[k] = b1 * m[k] + (one - b1) * g;
                v[k] = b2 * v[k] + (one - b2) * g * g;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{LossSample, Mode, NetConfig, Selector};
    use super::*;
    use crate::mdp::Axis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_or_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::<f32>::new(NetConfig::tiny(Mode::Partial), &mut rng).unwrap();
        let mut g = Gradients::zeros_like(&net);
        g.mark_all();
        let mut a = net.clone();
        a.apply_update(&g, 0.1);
        assert_eq!(a, net);
        for t in g.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 1.0);
        }
        let mut b = net.clone();
        b.apply_update(&g, 0.0);
        assert_eq!(b, net);
    }

    #[test]
    fn small_critic_step_decreases_its_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Network::<f32>::new(NetConfig::tiny(Mode::Partial), &mut rng).unwrap();
        let inputs: Vec<Vec<f32>> = (0..8).map(|_| (0..192).map(|_| rng.random()).collect()).collect();
        let batch: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| LossSample { input: x, action: i % 2, td_target: 1.0 - (i % 3) as f64, td_error: Some(0.0), behavior: None })
            .collect();
        let (g, before) = net.loss_and_gradients(&batch, Selector::Axis(Axis::X)).unwrap();
        let mut stepped = net.clone();
        stepped.apply_update(&g, 1e-5);
        let (_, after) = stepped.loss_and_gradients(&batch, Selector::Axis(Axis::X)).unwrap();
        assert!(after.critic < before.critic, "{} !< {}", after.critic, before.critic);
    }

    #[test]
    fn adam_leaves_untouched_heads_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = Network::<f32>::new(NetConfig::tiny(Mode::Partial), &mut rng).unwrap();
        let x: Vec<f32> = (0..192).map(|_| rng.random()).collect();
        let mut state = OptimizerState::new(Optimizer::adam(), &net);
        let batch = [LossSample { input: &x[..], action: 0, td_target: 1.0, td_error: None, behavior: None }];
        let (g, _) = net.loss_and_gradients(&batch, Selector::Axis(Axis::X)).unwrap();
        state.step(&mut net, &g, 1e-3);
        let before = net.clone();
        let (g, _) = net.loss_and_gradients(&batch, Selector::Axis(Axis::Y)).unwrap();
        state.step(&mut net, &g, 1e-3);
        for (i, (p, q)) in net.params().iter().zip(before.params()).enumerate() {
            if p.name.starts_with("policy_x") || p.name.starts_with("value_x") {
                assert_eq!(p, q, "tensor {i}");
            }
        }
    }
}
