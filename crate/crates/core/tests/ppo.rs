mod common;

use common::{central_difference, relative_error, surrogate_gradient_error};
use metamorl::envs::{collect_episodes, EnvId, EnvSpec, EpisodeCounter};
use metamorl::nnet::{Activation, PolicyParams, ValueParams};
use metamorl::rl::{
    ppo_update, scalarized_advantages, standardize, surrogate, value_loss, LossVariant, PpoConfig,
    RolloutBatch, SurrogateTerm,
};
use metamorl::scalarize::{PreferenceVector, ScalarizationSpec};
use metamorl::{Error, RngStream};

fn setup(env: EnvId, seed: u64, episodes: usize) -> (EnvSpec, PolicyParams<f64>, ValueParams<f64>, RolloutBatch<f64>) {
    let spec = EnvSpec::new(env);
    let root = RngStream::new(seed);
    let policy = PolicyParams::init(spec.state_dim, spec.action_dim, &[32, 32], Activation::Tanh, &mut root.child(0)).unwrap();
    let value = ValueParams::init(spec.state_dim, spec.num_objectives, &[32, 32], Activation::Tanh, &mut root.child(1)).unwrap();
    let trajs = collect_episodes(&spec, &policy, episodes, &root.child(2), &EpisodeCounter::new()).unwrap();
    let batch = RolloutBatch::new(trajs, spec.default_gamma()).unwrap().with_advantages(&value).unwrap();
    (spec, policy, value, batch)
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    for loss in [LossVariant::Clip, LossVariant::KlPenalty] {
        let mut checked = 0;
        for seed in 0..30 {
            if let Some(err) = surrogate_gradient_error(seed, loss) {
                assert!(err <= 1e-5, "{loss:?} seed {seed}: relative error {err:e}");
                checked += 1;
            }
        }
        assert!(checked >= 25, "{loss:?}: only {checked} instances away from clip kinks");
    }
}

#[test]
fn value_gradient_matches_finite_differences() {
    let (_, _, value, batch) = setup(EnvId::PointReacher, 3, 2);
    let samples: Vec<_> = (0..batch.len()).step_by(3).map(|i| (&batch, i)).collect();
    let (_, grad) = value_loss(&value, &samples).unwrap();
    let mut probe = value.clone();
    let numeric = central_difference(&value.mlp.flat(), 1e-6, |p| {
        probe.mlp.set_flat(p).unwrap();
        value_loss(&probe, &samples).unwrap().0
    });
    let err = relative_error(&grad.flat(), &numeric);
    assert!(err <= 1e-5, "relative error {err:e}");
}

#[test]
fn zero_advantages_give_zero_gradient() {
    let (_, policy, _, batch) = setup(EnvId::PointReacher, 1, 2);
    let zeros = vec![0.0; batch.len()];
    let indices: Vec<usize> = (0..batch.len()).collect();
    let term = SurrogateTerm {
        batch: &batch,
        advantages: &zeros,
        indices: &indices,
    };
    let (obj, grad) = surrogate(&policy, &[term], &PpoConfig::default()).unwrap();
    assert_eq!(obj, 0.0);
    assert!(grad.flat().iter().all(|&g| g == 0.0));
}

#[test]
fn zero_learning_rates_leave_parameters_bit_identical() {
    let (_, policy, value, batch) = setup(EnvId::PointReacher, 2, 4);
    let cfg = PpoConfig {
        policy_lr: 0.0,
        value_lr: 0.0,
        ..PpoConfig::default()
    };
    let w = PreferenceVector::new(vec![0.3, 0.7]).unwrap();
    let out = ppo_update(&policy, &value, &batch, &w, &ScalarizationSpec::weighted_sum(), &cfg, &RngStream::new(0)).unwrap();
    assert_eq!(out.policy, policy);
    assert_eq!(out.value, value);
    assert_eq!(out.stats.kl, 0.0);
}

#[test]
fn update_is_pure() {
    let (_, policy, value, batch) = setup(EnvId::ConvexBandit, 4, 32);
    let w = PreferenceVector::new(vec![0.5, 0.5]).unwrap();
    let scal = ScalarizationSpec::weighted_sum();
    let cfg = PpoConfig::default();
    let rng = RngStream::at(9, vec![1, 2]);
    let a = ppo_update(&policy, &value, &batch, &w, &scal, &cfg, &rng).unwrap();
    let b = ppo_update(&policy, &value, &batch, &w, &scal, &cfg, &rng).unwrap();
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.value, b.value);
    assert_ne!(a.policy, policy);
}

#[test]
fn one_hot_weighted_sum_is_the_single_objective_surrogate() {
    let (_, policy, _, batch) = setup(EnvId::PointReacher, 5, 3);
    let indices: Vec<usize> = (0..batch.len()).collect();
    let cfg = PpoConfig::default();
    for k in 0..2 {
        let scal = scalarized_advantages(&batch, &PreferenceVector::one_hot(2, k), &ScalarizationSpec::weighted_sum()).unwrap();
        let column: Vec<f64> = batch.raw_advantages.iter().map(|a| a[k]).collect();
        let single = standardize(&column);
        assert_eq!(scal.standardized, single);
        let eval = |adv: &[f64]| {
            let term = SurrogateTerm {
                batch: &batch,
                advantages: adv,
                indices: &indices,
            };
            surrogate(&policy, &[term], &cfg).unwrap()
        };
        let (a, ga) = eval(&scal.standardized);
        let (b, gb) = eval(&single);
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }
}

#[test]
fn update_kl_stays_below_guard() {
    for env in [EnvId::ConvexBandit, EnvId::PointReacher, EnvId::MoDrive] {
        let spec = EnvSpec::new(env);
        let root = RngStream::new(11);
        let mut policy = PolicyParams::init(spec.state_dim, spec.action_dim, &[32, 32], Activation::Tanh, &mut root.child(0)).unwrap();
        let mut value = ValueParams::init(spec.state_dim, spec.num_objectives, &[32, 32], Activation::Tanh, &mut root.child(1)).unwrap();
        let cfg = PpoConfig {
            gamma: spec.default_gamma(),
            ..PpoConfig::default()
        };
        let w = PreferenceVector::normalized(vec![1.0; spec.num_objectives]).unwrap();
        for it in 0..15 {
            let r = root.child(2).child(it);
            let trajs = collect_episodes(&spec, &policy, cfg.episodes_per_iteration, &r.child(0), &EpisodeCounter::new()).unwrap();
            let batch = RolloutBatch::new(trajs, cfg.gamma).unwrap().with_advantages(&value).unwrap();
            let out = ppo_update(&policy, &value, &batch, &w, &ScalarizationSpec::weighted_sum(), &cfg, &r.child(1)).unwrap();
            assert!(out.stats.kl <= 0.15, "{env} iteration {it}: kl {}", out.stats.kl);
            policy = out.policy;
            value = out.value;
        }
    }
}

#[test]
fn non_finite_baseline_aborts_update() {
    let (_, policy, mut value, batch) = setup(EnvId::ConvexBandit, 6, 8);
    let last = value.mlp.biases.len() - 1;
    value.mlp.biases[last][0] = f64::INFINITY;
    let batch = RolloutBatch::new(batch.trajectories, 1.0).unwrap().with_advantages(&value).unwrap();
    let w = PreferenceVector::new(vec![0.5, 0.5]).unwrap();
    let err = ppo_update(&policy, &value, &batch, &w, &ScalarizationSpec::weighted_sum(), &PpoConfig::default(), &RngStream::new(0));
    assert!(matches!(err, Err(Error::AbortUpdate(_))), "{err:?}");
}

#[test]
fn convex_bandit_converges_to_balanced_action() {
    let spec = EnvSpec::new(EnvId::ConvexBandit);
    let root = RngStream::new(0);
    let mut policy = PolicyParams::<f64>::init(1, 1, &[32, 32], Activation::Tanh, &mut root.child(0)).unwrap();
    let mut value = ValueParams::init(1, 2, &[32, 32], Activation::Tanh, &mut root.child(1)).unwrap();
    let cfg = PpoConfig {
        gamma: 1.0,
        ..PpoConfig::default()
    };
    let w = PreferenceVector::new(vec![0.5, 0.5]).unwrap();
    let counter = EpisodeCounter::new();
    for it in 0..200 {
        let r = root.child(2).child(it);
        let trajs = collect_episodes(&spec, &policy, cfg.episodes_per_iteration, &r.child(0), &counter).unwrap();
        let batch = RolloutBatch::new(trajs, 1.0).unwrap().with_advantages(&value).unwrap();
        let out = ppo_update(&policy, &value, &batch, &w, &ScalarizationSpec::weighted_sum(), &cfg, &r.child(1)).unwrap();
        policy = out.policy;
        value = out.value;
    }
    let mean = policy.mean(&[0.0]).unwrap()[0];
    assert!((mean - 0.5).abs() <= 0.05, "mean action {mean}");
    assert_eq!(counter.get(), 200 * 16);
}
