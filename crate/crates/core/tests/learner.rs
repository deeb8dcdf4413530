use std::collections::BTreeMap;

use partial_rl::approximator::{Mode, NetConfig, Network, Optimizer};
use partial_rl::learner::{
    collect_partial_episode, collect_single_episode, train, train_epoch, train_epoch_partial, EvalConfig,
    Exploration, Memories, NetworkAgent, PartialPolicy, TrainConfig,
};
use partial_rl::mdp::{reward, Axis, Transition};
use partial_rl::replay::ReplayMemory;
use partial_rl::tabular::TabularModel;
use partial_rl::volume::{Position, Volume};
use partial_rl::Result;
use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn volume(dims: [usize; 3], target: [f64; 3]) -> Volume {
    let data = (0..dims.iter().product::<usize>()).map(|i| ((i * 29) % 97) as f32).collect();
    Volume::new(dims, [1.0; 3], data, BTreeMap::from([("t".to_string(), target)])).unwrap()
}

fn tiny(mode: Mode) -> TrainConfig {
    TrainConfig {
        episodes_per_epoch: 3,
        steps_per_episode: 12,
        minibatch: 4,
        epochs: 2,
        net: NetConfig::tiny(mode),
        eval: EvalConfig { starts: 2, steps: 9, last: 3, train_volumes: 1, ..EvalConfig::default() },
        ..TrainConfig::for_mode(mode)
    }
}

/// Always moves toward the first landmark.
struct TowardTarget;

impl PartialPolicy for TowardTarget {
    fn partial_distribution(
        &self,
        volume: &Volume,
        q: Position,
        axis: Axis,
        _keep_prob: f64,
        _rng: &mut dyn RngCore,
    ) -> Result<[f64; 2]> {
        let p = volume.primary_landmark().unwrap().1;
        Ok(if p[axis.index()] > q[axis.index()] as f64 { [1.0, 0.0] } else { [0.0, 1.0] })
    }
}

#[test]
fn hundred_step_sequences_cycle_axes() {
    let v = volume([24; 3], [5.0, 17.0, 11.0]);
    let net = Network::<f32>::new(NetConfig::tiny(Mode::Partial), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let cfg = TrainConfig { steps_per_episode: 300, ..tiny(Mode::Partial) };
    let mut pushed = Vec::new();
    let trace = collect_partial_episode(&v, 0, &net, &cfg, 0.5, &mut ChaCha8Rng::seed_from_u64(2), &mut |t| {
        pushed.push(t);
        Ok(())
    })
    .unwrap();
    assert_eq!(trace.steps.len(), 300);
    assert_eq!(pushed.len(), 300);
    let tokens: String = trace.steps.iter().map(|s| &s.action.token()[..1]).collect();
    assert_eq!(tokens, "xyz".repeat(100));
}

#[test]
fn oracle_rewards_match_recomputation() {
    let target = [5.5, 17.0, 11.0];
    let v = volume([24; 3], target);
    let cfg = TrainConfig { steps_per_episode: 90, eta: 1, ..tiny(Mode::Partial) };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trace = collect_partial_episode(&v, 0, &TowardTarget, &cfg, 1.0, &mut rng, &mut |_| Ok(())).unwrap();
    let positions: Vec<Position> = trace.positions().collect();
    let (mut better, mut worse) = (0i64, 0i64);
    for w in positions.windows(2) {
        let d = |q: Position| (0..3).map(|i| (q[i] as f64 - target[i]).powi(2)).sum::<f64>();
        if d(w[1]) < d(w[0]) {
            better += 1;
        } else if d(w[1]) > d(w[0]) {
            worse += 1;
        }
    }
    assert_eq!(trace.cumulative_reward, better - worse);
    assert!(trace.cumulative_reward > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn consecutive_positions_differ_in_one_coordinate(seed in 0u64..1000, eta in 1i64..4, partial in any::<bool>()) {
        let v = volume([14, 11, 9], [3.0, 7.0, 4.0]);
        let mode = if partial { Mode::Partial } else { Mode::ActorCritic };
        let cfg = TrainConfig { eta, steps_per_episode: 40, ..tiny(mode) };
        let net = Network::<f32>::new(cfg.net_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut pushed: Vec<Transition> = Vec::new();
        let mut sink = |t: Transition| {
            pushed.push(t);
            Ok(())
        };
        let trace = if partial {
            collect_partial_episode(&v, 0, &net, &cfg, 0.3, &mut rng, &mut sink).unwrap()
        } else {
            collect_single_episode(&v, 0, &net, &cfg, 0.3, &mut rng, &mut sink).unwrap()
        };
        let positions: Vec<Position> = trace.positions().collect();
        for (w, t) in positions.windows(2).zip(&pushed) {
            let diffs: Vec<i64> = (0..3).map(|i| (w[1][i] - w[0][i]).abs()).collect();
            prop_assert!(diffs.iter().filter(|&&d| d != 0).count() <= 1);
            prop_assert!(diffs.iter().all(|&d| d <= eta));
            prop_assert_eq!((t.from, t.to), (w[0], w[1]));
            prop_assert_eq!(t.reward, reward(w[0], w[1], [3.0, 7.0, 4.0]));
            prop_assert!(t.behavior > 0.0 && t.behavior <= 1.0);
        }
    }
}

#[test]
fn identical_seeds_give_bit_identical_parameters() {
    let vols = [volume([20; 3], [6.0, 9.0, 12.0]), volume([20; 3], [13.0, 4.0, 8.0])];
    for mode in [Mode::Partial, Mode::ActorCritic, Mode::QLearning] {
        let cfg = TrainConfig { epochs: 1, ..tiny(mode) };
        let a = train(&vols, &[], &cfg, |_, _| Ok(())).unwrap();
        let b = train(&vols, &[], &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(a.network, b.network, "{mode:?}");
        assert_ne!(a.network, a.initial, "{mode:?}");
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let vols = [volume([20; 3], [6.0, 9.0, 12.0])];
    for mode in [Mode::Partial, Mode::ActorCritic, Mode::QLearning] {
        for optimizer in [Optimizer::Sgd, Optimizer::adam()] {
            let cfg = TrainConfig { alpha: 0.0, optimizer, ..tiny(mode) };
            let net = Network::<f32>::new(cfg.net_config(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let mut agent = NetworkAgent::new(net.clone(), &cfg);
            let mut memories = Memories::for_config(&cfg).unwrap();
            let stats = train_epoch(&mut agent, &mut memories, &vols, &cfg, 0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            assert_eq!(agent.network(), &net, "{mode:?}");
            assert_eq!(stats.episodes, 3);
            assert_eq!(stats.transitions, 36);
            assert!(stats.updates > 0);
            assert!(stats.critic_loss > 0.0);
        }
    }
}

const TAB_DIMS: [usize; 3] = [9, 9, 9];
const TAB_TARGET: [f64; 3] = [3.0, 5.0, 6.0];

fn tabular_setup() -> (Vec<Volume>, TrainConfig) {
    let v = Volume::new(TAB_DIMS, [1.0; 3], vec![0.0; 729], BTreeMap::from([("t".to_string(), TAB_TARGET)])).unwrap();
    let cfg = TrainConfig {
        eta: 1,
        alpha: 10.0,
        episodes_per_epoch: 20,
        steps_per_episode: 30,
        minibatch: 32,
        epochs: 200,
        replay_capacity: 100_000,
        exploration: Exploration::EpsilonGreedy { start: 1.0, end: 0.2 },
        net: NetConfig { window: 2, ..NetConfig::tiny(Mode::Partial) },
        ..TrainConfig::default()
    };
    (vec![v], cfg)
}

#[test]
fn tabular_reward_trend_is_non_decreasing() {
    let (vols, cfg) = tabular_setup();
    let mut model = TabularModel::new(TAB_DIMS).unwrap();
    let mut memories = ReplayMemory::per_axis(cfg.replay_capacity).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rewards: Vec<f64> = (0..20)
        .map(|e| train_epoch_partial(&mut model, &mut memories, &vols, &cfg, e, &mut rng).unwrap().mean_reward)
        .collect();
    let smooth: Vec<f64> = rewards.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    // Noise level: spread of the epoch means around their moving average,
    // scaled to the standard error of a five-epoch mean.
    let resid: Vec<f64> = rewards[2..18].iter().zip(&smooth).map(|(r, s)| r - s).collect();
    let sd = (resid.iter().map(|r| r * r).sum::<f64>() / (resid.len() - 1) as f64).sqrt();
    let tol = 2.0 * sd / 5f64.sqrt();
    for w in smooth.windows(2) {
        assert!(w[1] >= w[0] - tol, "moving average fell from {} to {} (tolerance {tol}): {rewards:?}", w[0], w[1]);
    }
    assert!(smooth[smooth.len() - 1] > smooth[0], "{rewards:?}");
}

#[test]
fn frozen_policy_critic_drives_mean_advantage_to_zero() {
    let (vols, base) = tabular_setup();
    let mut model = TabularModel::new(TAB_DIMS).unwrap();
    model.frozen_policy = true;
    let mut memories = ReplayMemory::per_axis(20_000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let epochs = 300;
    for e in 0..epochs {
        // Robbins-Monro style decay so the tabular critic settles.
        let cfg = TrainConfig {
            exploration: Exploration::None,
            alpha: 10.0 / (1.0 + e as f64 / 10.0),
            update_passes: 2,
            ..base.clone()
        };
        train_epoch_partial(&mut model, &mut memories, &vols, &cfg, e, &mut rng).unwrap();
    }
    let cfg = TrainConfig { exploration: Exploration::None, ..base };
    let mut fresh = Vec::new();
    for _ in 0..400 {
        collect_partial_episode(&vols[0], 0, &model, &cfg, 1.0, &mut rng, &mut |t| {
            fresh.push(t);
            Ok(())
        })
        .unwrap();
    }
    let mean: f64 = fresh.iter().map(|t| model.advantage(t, cfg.gamma).unwrap()).sum::<f64>() / fresh.len() as f64;
    assert!(mean.abs() <= 0.05, "mean advantage {mean} over {} transitions", fresh.len());
    let probs = model.probabilities(Axis::X, [4; 3]).unwrap();
    assert_eq!(probs, [0.5, 0.5]);
}
