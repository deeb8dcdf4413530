//! Central finite-difference check of the analytic loss gradients, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::Gradients;
use super::{Group, LossSample, Mode, NetConfig, Network, Selector};
use crate::mdp::Axis;
use crate::Result;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor holding the worst entry.
    pub worst: String,
    pub checked: usize,
    /// Worst error per head (and the trunk).
    pub per_group: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOLERANCE
    }

    pub fn group_error(&self, name: &str) -> Option<f64> {
        self.per_group.iter().find(|(g, _)| g == name).map(|(_, e)| *e)
    }
}

/// Check every parameter of a randomly initialized network of `config`
/// against central differences of the loss its mode trains.
pub fn gradient_check(config: &NetConfig, seed: u64) -> Result<GradCheckReport> {
    let selector = match config.mode {
        Mode::Partial => Selector::Axis(Axis::from_index(seed as usize)),
        Mode::ActorCritic => Selector::Single,
        Mode::QLearning => Selector::Q,
    };
    gradient_check_with(config, seed, selector, |_| {})
}

/// Like [`gradient_check`], but lets a test tamper with the analytic
/// gradients before comparison.
pub fn gradient_check_with(
    config: &NetConfig,
    seed: u64,
    selector: Selector,
    tamper: impl Fn(&mut Gradients<f64>),
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::new(config.clone(), &mut rng)?;
    // Nonzero biases keep pre-activations away from the ReLU kink at 0.
    for p in net.params_mut() {
        if p.shape.len() == 1 {
            p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let width = config.input_width();
    let inputs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..width).map(|_| rng.random::<f64>()).collect())
        .collect();
    let n_actions = match selector {
        Selector::Axis(_) => 2,
        _ => 6,
    };
    let batch: Vec<LossSample<'_, f64>> = inputs
        .iter()
        .map(|x| LossSample {
            input: x,
            action: rng.random_range(0..n_actions),
            td_target: rng.random_range(-1.0..1.0),
            td_error: Some(rng.random_range(-1.0..1.0)),
            behavior: None,
        })
        .collect();

    let (mut analytic, _) = net.loss_and_gradients(&batch, selector)?;
    tamper(&mut analytic);

    let mut per_group: Vec<(String, f64)> = Vec::new();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for t in 0..net.params().len() {
        let group = match net.group(t) {
            Group::Trunk => "trunk".to_string(),
            Group::Head(h) => h.name(),
        };
        for k in 0..net.params()[t].data.len() {
            let orig = net.params()[t].data[k];
            net.params_mut()[t].data[k] = orig + STEP;
            let up = net.batch_loss(&batch, selector)?;
            net.params_mut()[t].data[k] = orig - STEP;
            let down = net.batch_loss(&batch, selector)?;
            net.params_mut()[t].data[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.tensors()[t][k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            checked += 1;
            if err > worst.0 || worst.1.is_empty() {
                worst = (err.max(worst.0), net.params()[t].name.clone());
            }
            match per_group.iter_mut().find(|(g, _)| *g == group) {
                Some(entry) => entry.1 = entry.1.max(err),
                None => per_group.push((group.clone(), err)),
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst: worst.1,
        checked,
        per_group,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::Head;

    #[test]
    fn tiny_partial_net_passes_and_is_repeatable() {
        let cfg = NetConfig::tiny(Mode::Partial);
        let a = gradient_check(&cfg, 0).unwrap();
        assert!(a.passed(), "{a:?}");
        assert!(a.checked > 1000);
        let b = gradient_check(&cfg, 0).unwrap();
        assert_eq!(a.max_rel_error.to_bits(), b.max_rel_error.to_bits());
    }

    #[test]
    fn corrupted_backward_rule_is_caught() {
        let cfg = NetConfig::tiny(Mode::Partial);
        let net = Network::<f64>::zeros(cfg.clone()).unwrap();
        let hidden = net
            .params()
            .iter()
            .position(|p| p.name == format!("{}.hidden.weight", Head::PartialValue(Axis::X).name()))
            .unwrap();
        // Double one head's hidden-layer weight gradient.
        let report = gradient_check_with(&cfg, 0, Selector::Axis(Axis::X), |g| {
            g.tensors_mut()[hidden].iter_mut().for_each(|v| *v *= 2.0)
        })
        .unwrap();
        assert!(report.max_rel_error > 1e-2, "{report:?}");
        assert!(!report.passed());
        // A sign flip in the first conv is caught too.
        let report = gradient_check_with(&cfg, 1, Selector::Axis(Axis::Y), |g| {
            g.tensors_mut()[0].iter_mut().for_each(|v| *v = -*v)
        })
        .unwrap();
        assert!(report.max_rel_error > 1e-2);
    }
}
