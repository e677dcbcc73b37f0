use alloc::sync::Arc;
use alloc::vec::Vec;

use super::gae::tests::brute_force;
use super::*;
use crate::meta::MetaConfig;
use crate::network::build_grid_network;
use crate::nn::Parameters;
use crate::sim::FlowSpec;
use crate::sub::SubConfig;

fn small_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        seed: 3,
        variant,
        epochs: 1,
        minibatch_steps: 60,
        meta_epochs: 1,
        meta_batch: 16,
        meta: MetaConfig { history: 4, ff_dim: 6, lstm_hidden: 4, lstm_layers: 1, encoder_layers: 1, goal_dim: 4, ..MetaConfig::default() },
        sub: SubConfig { head: alloc::vec![16, 8], branch_dim: 4, latent_dim: 3, goal_dim: 4, ..SubConfig::default() },
        ..TrainConfig::default()
    }
}

fn trainer(variant: Variant) -> Trainer {
    let net = Arc::new(build_grid_network(2, 2, 200.0, 13.89).unwrap().with_regions(1, 2).unwrap());
    Trainer::new(small_config(variant), net, FlowSpec::constant(0.3, 11)).unwrap()
}

#[test]
fn rollout_shapes() {
    let t = trainer(Variant::Full);
    let r = t.collect(0).unwrap();
    assert_eq!(r.steps, crate::sim::ROLLOUT_STEPS);
    assert_eq!(r.observations.shape(), (r.steps * 4, crate::features::OBS_DIM));
    assert_eq!(r.context.shape(), (r.steps * 4, 4));
    assert_eq!(r.actions.len(), r.steps * 4);
    assert_eq!(r.final_values.len(), 4);
    assert_eq!(r.snapshots.len(), r.steps);
    assert!(r.snapshots.iter().all(|s| s.len() == 2 * 4));
    assert!(r.log_probs.iter().all(|&l| l <= 0.0 && l.is_finite()));
    assert!(r.att.is_finite() && r.att > 0.0);
}

#[test]
fn reward_is_local_plus_shared_goal_reward() {
    let mut t = trainer(Variant::Full);
    let rollouts = [t.collect(0).unwrap()];
    t.observe_scales(&rollouts);
    let p = t.prepare(&rollouts).unwrap();
    let r = &rollouts[0];
    let w = t.config.effective_weights().goal();
    for step in 0..r.steps {
        let expected_goal = goal_reward(p.outcomes[0][step], p.goals[0][step], w, false);
        assert_eq!(p.goal_rewards[0][step], expected_goal);
        for i in 0..4 {
            let k = step * 4 + i;
            assert_eq!(p.rewards[0][k], r.local_rewards[k] + expected_goal);
            assert_eq!(r.local_rewards[k], local_reward(&r.terms[k]));
        }
    }
    assert!(p.goal_rewards[0].iter().any(|&g| g != 0.0));
}

#[test]
fn no_subgoal_has_zero_goal_reward() {
    for v in [Variant::NoSubgoal, Variant::NoMeta] {
        let mut t = trainer(v);
        let rollouts = [t.collect(0).unwrap()];
        t.observe_scales(&rollouts);
        let p = t.prepare(&rollouts).unwrap();
        assert!(p.goal_rewards[0].iter().all(|&g| g == 0.0));
        assert_eq!(p.rewards[0], rollouts[0].local_rewards);
    }
}

#[test]
fn stored_advantages_match_double_sum() {
    let mut t = trainer(Variant::Full);
    let rollouts = [t.collect(0).unwrap()];
    t.observe_scales(&rollouts);
    let p = t.prepare(&rollouts).unwrap();
    let r = &rollouts[0];
    let w = t.config.weights;
    // Last five steps of each agent: the segment is bootstrapped by the episode's final value.
    for i in 0..4 {
        let start = r.steps - 5;
        let rew: Vec<f64> = (start..r.steps).map(|s| p.rewards[0][s * 4 + i]).collect();
        let mut vals: Vec<f64> = (start..r.steps).map(|s| r.values[s * 4 + i]).collect();
        vals.push(r.final_values[i]);
        let oracle = brute_force(&rew, &vals, w.gamma, w.lambda);
        for (k, s) in (start..r.steps).enumerate() {
            assert!((p.advantages[0][s * 4 + i] - oracle[k]).abs() < 1e-10);
        }
    }
}

#[test]
fn gradient_isolation() {
    let mut t = trainer(Variant::Full);
    let rollouts = [t.collect(0).unwrap()];
    t.observe_scales(&rollouts);
    let p = t.prepare(&rollouts).unwrap();
    t.meta.zero_grad();
    t.sub.zero_grad();
    let items: Vec<(usize, usize)> = (0..10).map(|s| (0, s)).collect();
    t.sub_gradients(&rollouts, &p, &items, None).unwrap();
    assert!(t.sub.max_abs_grad() > 0.0);
    assert_eq!(t.meta.max_abs_grad(), 0.0);
    t.sub.zero_grad();
    t.meta_gradients(&p, &[0, 5, 9, 30]).unwrap();
    assert!(t.meta.max_abs_grad() > 0.0);
    assert_eq!(t.sub.max_abs_grad(), 0.0);
}

#[test]
fn every_variant_updates() {
    for v in Variant::ALL {
        let mut t = trainer(v);
        let before_meta = t.meta.flat_values();
        let before_sub = t.sub.flat_values();
        let log = t.run_episode().unwrap();
        assert_eq!(log.variant, v);
        assert_eq!(t.episode, 1);
        assert!(log.sub_loss.is_finite() && log.mean_reward.is_finite());
        assert_ne!(t.sub.flat_values(), before_sub);
        assert_eq!(t.meta.flat_values() != before_meta, v.uses_meta(), "{v:?}");
    }
}

#[test]
fn updates_are_deterministic() {
    let mut a = trainer(Variant::Full);
    let mut b = trainer(Variant::Full);
    assert_eq!(a.run_episode().unwrap(), b.run_episode().unwrap());
    assert_eq!(a.sub.flat_values(), b.sub.flat_values());
    assert_eq!(a.meta.flat_values(), b.meta.flat_values());
}

#[test]
fn non_finite_update_rolls_back() {
    let mut t = trainer(Variant::Full);
    let rollouts = [t.collect(0).unwrap()];
    t.sub.head[0].weight.value.data[0] = f64::NAN;
    let poisoned = t.sub.clone();
    let meta = t.meta.flat_values();
    let err = t.train_on(&rollouts).unwrap_err();
    assert!(matches!(err, crate::Error::NonFiniteLoss(_) | crate::Error::NonFiniteGradient), "{err:?}");
    assert!(t.lr_halved);
    assert_eq!(t.sub_opt.lr, t.config.lr * 0.5);
    assert_eq!(t.episode, 0);
    assert_eq!(t.meta.flat_values(), meta);
    assert_eq!(t.sub.flat_values().len(), poisoned.flat_values().len());
    assert!(t.sub.head[0].weight.value.data[0].is_nan());
    assert_eq!(t.sub.head[0].weight.value.data[1], poisoned.head[0].weight.value.data[1]);
}

#[test]
fn pretraining_reports_losses() {
    let mut t = trainer(Variant::Full);
    t.config.pretrain_episodes = 1;
    t.config.meta_epochs = 3;
    let losses = t.pretrain_meta().unwrap();
    assert_eq!(losses.len(), 3);
    assert!(losses.iter().all(|l| l.is_finite() && *l >= 0.0));
}

#[test]
fn evaluation_is_greedy_and_repeatable() {
    let t = trainer(Variant::NoGac);
    assert_eq!(t.evaluate(4).unwrap(), t.evaluate(4).unwrap());
    let ftc = run_baseline(t.network.clone(), &t.flow, Controller::Ftc, 4).unwrap();
    let mp = run_baseline(t.network.clone(), &t.flow, Controller::MaxPressure, 4).unwrap();
    assert!(ftc.att > 0.0 && mp.att > 0.0);
}
