use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nnet::PolicyParams;
use crate::real::Real;
use crate::rng::RngStream;

/// One episode. `behavior_*` fields describe the acting policy at sampling
/// time so importance ratios and KL terms can be formed later without the
/// acting parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub states: Vec<Vec<T>>,
    pub actions: Vec<Vec<T>>,
    pub rewards: Vec<Vec<T>>,
    pub behavior_log_probs: Vec<T>,
    pub behavior_means: Vec<Vec<T>>,
    pub behavior_log_std: Vec<T>,
}

impl<T> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Shared tally of training episodes simulated. Cheap to clone.
#[derive(Clone, Debug, Default)]
pub struct EpisodeCounter(Arc<AtomicU64>);

impl EpisodeCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(n: u64) -> Self {
        Self(Arc::new(AtomicU64::new(n)))
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Samples one full episode from the stochastic policy.
pub fn rollout<T: Real>(
    spec: &EnvSpec,
    policy: &PolicyParams<T>,
    rng: &mut RngStream,
) -> Result<Trajectory<T>> {
    if policy.state_dim() != spec.state_dim || policy.action_dim() != spec.action_dim {
        return Err(Error::InvalidInput(format!(
            "policy maps {} -> {} but {} needs {} -> {}",
            policy.state_dim(),
            policy.action_dim(),
            spec.id,
            spec.state_dim,
            spec.action_dim
        )));
    }
    let mut traj = Trajectory {
        states: Vec::with_capacity(spec.horizon),
        actions: Vec::with_capacity(spec.horizon),
        rewards: Vec::with_capacity(spec.horizon),
        behavior_log_probs: Vec::with_capacity(spec.horizon),
        behavior_means: Vec::with_capacity(spec.horizon),
        behavior_log_std: policy.log_std.clone(),
    };
    let mut s = spec.reset::<T>(rng);
    loop {
        let mean = policy.mean(&s.state)?;
        let action: Vec<T> = mean
            .iter()
            .zip(&policy.log_std)
            .map(|(&m, &l)| m + l.exp() * rng.normal::<T>())
            .collect();
        let log_prob = crate::nnet::diag_gaussian_log_prob(&mean, &policy.log_std, &action);
        let step = spec.step(&s, &action)?;
        traj.states.push(std::mem::take(&mut s.state));
        traj.actions.push(action);
        traj.rewards.push(step.reward);
        traj.behavior_log_probs.push(log_prob);
        traj.behavior_means.push(mean);
        s = step.next;
        if step.done {
            break;
        }
    }
    Ok(traj)
}

/// `episodes` rollouts, episode `e` drawing from `rng.child(e)`. Runs in
/// parallel; the output order and content do not depend on scheduling.
pub fn collect_episodes<T: Real>(
    spec: &EnvSpec,
    policy: &PolicyParams<T>,
    episodes: usize,
    rng: &RngStream,
    counter: &EpisodeCounter,
) -> Result<Vec<Trajectory<T>>> {
    let trajs = (0..episodes)
        .into_par_iter()
        .map(|e| rollout(spec, policy, &mut rng.child(e as u64)))
        .collect::<Result<Vec<_>>>()?;
    counter.add(episodes as u64);
    Ok(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;
    use crate::nnet::{Activation, MlpParams};

    fn constant_policy(state_dim: usize, mean: f64, log_std: f64) -> PolicyParams<f64> {
        let mlp = MlpParams::from_parts(
            vec![state_dim, 1],
            vec![vec![0.0; state_dim]],
            vec![vec![mean]],
            Activation::Tanh,
        )
        .unwrap();
        PolicyParams::new(mlp, vec![log_std]).unwrap()
    }

    #[test]
    fn bandit_rollout_has_length_one() {
        let spec = EnvSpec::new(EnvId::ConvexBandit);
        let t = rollout(&spec, &constant_policy(1, 0.3, -1.0), &mut RngStream::new(0)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.rewards[0].len(), 2);
    }

    #[test]
    fn mo_drive_saturating_policy_stays_alive() {
        // v <- v + 0.1 (a - 0.5 v) has fixed point 2a <= 2 for clipped a.
        let spec = EnvSpec::new(EnvId::MoDrive);
        let t = rollout(&spec, &constant_policy(1, 5.0, -5.0), &mut RngStream::new(1)).unwrap();
        assert_eq!(t.len(), 100);
        assert!(t.rewards.iter().all(|r| r[2] == 1.0));
        let v_final = t.rewards.last().unwrap()[0];
        let mut v = 0.0;
        for _ in 0..100 {
            v += 0.1 * (1.0 - 0.5 * v);
        }
        assert!((v_final - v).abs() < 1e-12);
    }

    #[test]
    fn cloned_streams_give_identical_trajectories() {
        let spec = EnvSpec::new(EnvId::PointReacher);
        let mut rng = RngStream::new(5);
        let policy = PolicyParams::<f64>::init(6, 2, &[8], Activation::Tanh, &mut rng).unwrap();
        let a = rollout(&spec, &policy, &mut rng.clone()).unwrap();
        let b = rollout(&spec, &policy, &mut rng.clone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recorded_log_probs_match_policy() {
        let spec = EnvSpec::new(EnvId::PointReacher);
        let mut rng = RngStream::new(6);
        let policy = PolicyParams::<f64>::init(6, 2, &[8], Activation::Tanh, &mut rng).unwrap();
        let t = rollout(&spec, &policy, &mut rng).unwrap();
        for i in 0..t.len() {
            let lp = policy.log_prob(&t.states[i], &t.actions[i]).unwrap();
            assert!((lp - t.behavior_log_probs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn collect_counts_episodes() {
        let spec = EnvSpec::new(EnvId::ConvexBandit);
        let counter = EpisodeCounter::new();
        let p = constant_policy(1, 0.0, 0.0);
        let trajs = collect_episodes(&spec, &p, 7, &RngStream::new(2), &counter).unwrap();
        assert_eq!(trajs.len(), 7);
        assert_eq!(counter.get(), 7);
    }
}
