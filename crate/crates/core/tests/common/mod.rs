#![allow(dead_code)]

use metamorl::envs::{collect_episodes, EnvId, EnvSpec, EpisodeCounter};
use metamorl::nnet::{Activation, PolicyParams, ValueParams};
use metamorl::rl::{scalarized_advantages, surrogate, LossVariant, PpoConfig, RolloutBatch, SurrogateTerm};
use metamorl::scalarize::{sample_preference, ScalarizationSpec, Utopian};
use metamorl::RngStream;

/// A frozen surrogate evaluation: behaviour data, advantages, a minibatch
/// and the (perturbed) parameters the gradient is taken at.
pub struct GradInstance {
    pub policy: PolicyParams<f64>,
    pub batch: RolloutBatch<f64>,
    pub advantages: Vec<f64>,
    pub indices: Vec<usize>,
    pub cfg: PpoConfig,
}

impl GradInstance {
    pub fn objective(&self, policy: &PolicyParams<f64>) -> f64 {
        let term = SurrogateTerm {
            batch: &self.batch,
            advantages: &self.advantages,
            indices: &self.indices,
        };
        surrogate(policy, &[term], &self.cfg).unwrap().0
    }

    pub fn gradient(&self) -> Vec<f64> {
        let term = SurrogateTerm {
            batch: &self.batch,
            advantages: &self.advantages,
            indices: &self.indices,
        };
        surrogate(&self.policy, &[term], &self.cfg).unwrap().1.flat()
    }

    /// Distance of the closest sample ratio to a clip boundary.
    pub fn kink_distance(&self) -> f64 {
        let eps = self.cfg.clip_epsilon;
        self.indices
            .iter()
            .map(|&i| {
                let lp = self.policy.log_prob(self.batch.state(i), self.batch.action(i)).unwrap();
                let rho = (lp - self.batch.behavior_log_prob(i)).exp();
                (rho - (1.0 - eps)).abs().min((rho - (1.0 + eps)).abs())
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Random network shape, environment, preference, scalarization and
/// minibatch; the evaluation point is the behaviour policy plus noise so
/// ratios differ from one.
pub fn random_instance(seed: u64, loss: LossVariant) -> GradInstance {
    let mut rng = RngStream::at(seed, vec![7]);
    let env = if rng.uniform::<f64>() < 0.5 { EnvId::PointReacher } else { EnvId::ConvexBandit };
    let spec = EnvSpec::new(env);
    let depth = 1 + (rng.uniform::<f64>() * 2.0) as usize;
    let hidden: Vec<usize> = (0..depth).map(|_| 3 + (rng.uniform::<f64>() * 10.0) as usize).collect();
    let act = if rng.uniform::<f64>() < 0.5 { Activation::Tanh } else { Activation::Relu };
    let behavior = PolicyParams::init(spec.state_dim, spec.action_dim, &hidden, act, &mut rng.child(1)).unwrap();
    let value = ValueParams::init(spec.state_dim, spec.num_objectives, &hidden, act, &mut rng.child(2)).unwrap();
    let episodes = if spec.horizon == 1 { 24 } else { 2 };
    let trajs = collect_episodes(&spec, &behavior, episodes, &rng.child(3), &EpisodeCounter::new()).unwrap();
    let batch = RolloutBatch::new(trajs, spec.default_gamma()).unwrap().with_advantages(&value).unwrap();
    let w = sample_preference(spec.num_objectives, &mut rng.child(4)).unwrap();
    let scal = if rng.uniform::<f64>() < 0.5 {
        ScalarizationSpec::weighted_sum()
    } else {
        let p = [1.0, 2.0, f64::INFINITY][(rng.uniform::<f64>() * 3.0) as usize];
        ScalarizationSpec::chebyshev(p, Utopian::BatchMaxPlusMargin { margin: 1e-3 })
    };
    let advantages = scalarized_advantages(&batch, &w, &scal).unwrap().standardized;
    let take = 8 + (rng.uniform::<f64>() * 24.0) as usize;
    let indices: Vec<usize> = rng.child(5).permutation(batch.len()).into_iter().take(take).collect();
    let mut policy = behavior.clone();
    let mut noise = rng.child(6);
    let flat: Vec<f64> = policy.flat().iter().map(|&p| p + 0.05 * noise.normal::<f64>()).collect();
    policy.set_flat(&flat).unwrap();
    let cfg = PpoConfig {
        loss,
        kl_beta: 0.5 + rng.uniform::<f64>(),
        ..PpoConfig::default()
    };
    GradInstance {
        policy,
        batch,
        advantages,
        indices,
        cfg,
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let up = f(&probe);
            probe[j] = x[j] - h;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Relative error of the analytic surrogate gradient against central
/// differences, or `None` when a ratio sits too close to a clip kink.
pub fn surrogate_gradient_error(seed: u64, loss: LossVariant) -> Option<f64> {
    let inst = random_instance(seed, loss);
    if loss == LossVariant::Clip && inst.kink_distance() < 1e-4 {
        return None;
    }
    let analytic = inst.gradient();
    let x = inst.policy.flat();
    let mut probe = inst.policy.clone();
    let numeric = central_difference(&x, 1e-6, |p| {
        probe.set_flat(p).unwrap();
        inst.objective(&probe)
    });
    Some(relative_error(&analytic, &numeric))
}
