use crate::envs::Trajectory;
use crate::error::{Error, Result};
use crate::nnet::ValueParams;
use crate::real::Real;

/// Standard deviations below this are treated as 1 when standardizing.
pub const STD_GUARD: f64 = 1e-8;

/// Trajectories plus per-step vector returns and advantages. Per-step
/// vectors are stored flattened in trajectory order.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch<T> {
    pub trajectories: Vec<Trajectory<T>>,
    pub gamma: T,
    pub returns: Vec<Vec<T>>,
    /// `V(s_t)` of the value network the advantages were formed with.
    pub values: Vec<Vec<T>>,
    /// `R_t - V(s_t)`.
    pub raw_advantages: Vec<Vec<T>>,
    /// `raw_advantages` standardized per objective across the batch.
    pub advantages: Vec<Vec<T>>,
    index: Vec<(usize, usize)>,
}

/// `R_t = r_t + gamma R_{t+1}` with `R_len = 0`, componentwise.
pub fn compute_returns<T: Real>(traj: &Trajectory<T>, gamma: T) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new(); traj.len()];
    let mut acc: Option<Vec<T>> = None;
    for t in (0..traj.len()).rev() {
        let r = &traj.rewards[t];
        let next: Vec<T> = match &acc {
            None => r.clone(),
            Some(a) => r.iter().zip(a).map(|(&r, &a)| r + gamma * a).collect(),
        };
        out[t] = next.clone();
        acc = Some(next);
    }
    out
}

/// Per-column standardization: zero mean, unit (population) variance.
pub fn standardize_columns<T: Real>(rows: &[Vec<T>]) -> Vec<Vec<T>> {
    let Some(q) = rows.first().map(Vec::len) else {
        return Vec::new();
    };
    let n = T::lit(rows.len() as f64);
    let mut out = rows.to_vec();
    for k in 0..q {
        let mean = rows.iter().map(|r| r[k]).sum::<T>() / n;
        let var = rows.iter().map(|r| (r[k] - mean) * (r[k] - mean)).sum::<T>() / n;
        let std = var.sqrt();
        let scale = if std < T::lit(STD_GUARD) { T::one() } else { std };
        out.iter_mut().for_each(|r| r[k] = (r[k] - mean) / scale);
    }
    out
}

pub fn standardize<T: Real>(xs: &[T]) -> Vec<T> {
    let rows: Vec<Vec<T>> = xs.iter().map(|&x| vec![x]).collect();
    standardize_columns(&rows).into_iter().map(|r| r[0]).collect()
}

/// Advantages of a batch under a value network.
#[derive(Clone, Debug, PartialEq)]
pub struct Advantages<T> {
    pub values: Vec<Vec<T>>,
    pub raw: Vec<Vec<T>>,
    pub standardized: Vec<Vec<T>>,
}

impl<T: Real> RolloutBatch<T> {
    /// Builds the batch and its returns; advantages are empty until
    /// [`with_advantages`](Self::with_advantages).
    pub fn new(trajectories: Vec<Trajectory<T>>, gamma: T) -> Result<Self> {
        if !(gamma >= T::zero() && gamma <= T::one()) {
            return Err(Error::InvalidInput(format!("gamma = {gamma} outside [0, 1]")));
        }
        let mut returns = Vec::new();
        let mut index = Vec::new();
        for (i, traj) in trajectories.iter().enumerate() {
            returns.extend(compute_returns(traj, gamma));
            index.extend((0..traj.len()).map(|t| (i, t)));
        }
        Ok(Self {
            trajectories,
            gamma,
            returns,
            values: Vec::new(),
            raw_advantages: Vec::new(),
            advantages: Vec::new(),
            index,
        })
    }

    pub fn with_advantages(mut self, value: &ValueParams<T>) -> Result<Self> {
        let adv = compute_advantages(&self, value)?;
        self.values = adv.values;
        self.raw_advantages = adv.raw;
        self.advantages = adv.standardized;
        Ok(self)
    }

    pub fn has_advantages(&self) -> bool {
        self.raw_advantages.len() == self.returns.len() && !self.returns.is_empty()
    }

    /// Number of time steps across all trajectories.
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn num_objectives(&self) -> usize {
        self.returns.first().map_or(0, Vec::len)
    }

    pub fn state(&self, i: usize) -> &[T] {
        let (e, t) = self.index[i];
        &self.trajectories[e].states[t]
    }

    pub fn action(&self, i: usize) -> &[T] {
        let (e, t) = self.index[i];
        &self.trajectories[e].actions[t]
    }

    pub fn behavior_log_prob(&self, i: usize) -> T {
        let (e, t) = self.index[i];
        self.trajectories[e].behavior_log_probs[t]
    }

    pub fn behavior_mean(&self, i: usize) -> &[T] {
        let (e, t) = self.index[i];
        &self.trajectories[e].behavior_means[t]
    }

    pub fn behavior_log_std(&self, i: usize) -> &[T] {
        let (e, _) = self.index[i];
        &self.trajectories[e].behavior_log_std
    }

    /// Mean discounted return `R_0` over trajectories.
    pub fn mean_episode_return(&self) -> Vec<T> {
        let q = self.num_objectives();
        let mut acc = vec![T::zero(); q];
        let mut offset = 0;
        for traj in &self.trajectories {
            if let Some(r0) = self.returns.get(offset) {
                acc.iter_mut().zip(r0).for_each(|(a, &r)| *a = *a + r);
            }
            offset += traj.len();
        }
        let n = T::lit(self.trajectories.len().max(1) as f64);
        acc.into_iter().map(|a| a / n).collect()
    }
}

/// `A_t = R_t - V(s_t)`, plus a per-objective standardized copy.
pub fn compute_advantages<T: Real>(
    batch: &RolloutBatch<T>,
    value: &ValueParams<T>,
) -> Result<Advantages<T>> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty rollout batch".into()));
    }
    if value.num_objectives() != batch.num_objectives() {
        return Err(Error::InvalidInput(format!(
            "value network has {} outputs, batch has {} objectives",
            value.num_objectives(),
            batch.num_objectives()
        )));
    }
    let values = (0..batch.len())
        .map(|i| value.predict(batch.state(i)))
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<Vec<T>> = batch
        .returns
        .iter()
        .zip(&values)
        .map(|(r, v)| r.iter().zip(v).map(|(&r, &v)| r - v).collect())
        .collect();
    let standardized = standardize_columns(&raw);
    Ok(Advantages {
        values,
        raw,
        standardized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Activation, MlpParams};
    use crate::rng::RngStream;

    pub(crate) fn traj_with_rewards(rewards: Vec<Vec<f64>>) -> Trajectory<f64> {
        let n = rewards.len();
        Trajectory {
            states: (0..n).map(|t| vec![t as f64]).collect(),
            actions: vec![vec![0.0]; n],
            rewards,
            behavior_log_probs: vec![0.0; n],
            behavior_means: vec![vec![0.0]; n],
            behavior_log_std: vec![0.0],
        }
    }

    fn zero_value(q: usize) -> ValueParams<f64> {
        ValueParams {
            mlp: MlpParams::zeros(&[1, q], Activation::Tanh).unwrap(),
        }
    }

    #[test]
    fn gamma_zero_returns_rewards() {
        let t = traj_with_rewards(vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]]);
        assert_eq!(compute_returns(&t, 0.0), t.rewards);
    }

    #[test]
    fn constant_reward_geometric_sum() {
        let t = traj_with_rewards(vec![vec![1.0, 2.0]; 3]);
        assert_eq!(compute_returns(&t, 0.5)[0], vec![1.75, 3.5]);
    }

    #[test]
    fn returns_are_linear_in_rewards() {
        let mut rng = RngStream::new(4);
        let mk = |rng: &mut RngStream| -> Vec<Vec<f64>> {
            (0..20).map(|_| vec![rng.normal(), rng.normal()]).collect()
        };
        let (u, v) = (mk(&mut rng), mk(&mut rng));
        let sum: Vec<Vec<f64>> = u
            .iter()
            .zip(&v)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        let (ru, rv, rs) = (
            compute_returns(&traj_with_rewards(u), 0.9),
            compute_returns(&traj_with_rewards(v), 0.9),
            compute_returns(&traj_with_rewards(sum), 0.9),
        );
        for t in 0..20 {
            for k in 0..2 {
                assert!((rs[t][k] - (ru[t][k] + rv[t][k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_value_network_gives_standardized_returns() {
        let trajs = vec![
            traj_with_rewards(vec![vec![1.0, 0.0], vec![2.0, 1.0]]),
            traj_with_rewards(vec![vec![-1.0, 4.0]]),
        ];
        let batch = RolloutBatch::new(trajs, 1.0).unwrap();
        let adv = compute_advantages(&batch, &zero_value(2)).unwrap();
        assert_eq!(adv.raw, batch.returns);
        assert_eq!(adv.standardized, standardize_columns(&batch.returns));
    }

    #[test]
    fn standardized_moments() {
        let mut rng = RngStream::new(8);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![3.0 + 10.0 * rng.normal::<f64>(), -7.0 + 0.01 * rng.normal::<f64>()])
            .collect();
        let s = standardize_columns(&rows);
        for k in 0..2 {
            let mean = s.iter().map(|r| r[k]).sum::<f64>() / 500.0;
            let var = s.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / 500.0;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_column_uses_guard() {
        let s = standardize_columns(&[vec![2.0], vec![2.0], vec![2.0]]);
        assert_eq!(s, vec![vec![0.0]; 3]);
    }

    #[test]
    fn perfect_value_gives_zero_raw_advantage() {
        // Single-step episodes in state [0] with reward (0.3, -0.2): a value
        // network with bias equal to the reward is exact.
        let trajs: Vec<_> = (0..4)
            .map(|_| {
                let mut t = traj_with_rewards(vec![vec![0.3, -0.2]]);
                t.states = vec![vec![0.0]];
                t
            })
            .collect();
        let batch = RolloutBatch::new(trajs, 1.0).unwrap();
        let mut value = zero_value(2);
        value.mlp.biases[0] = vec![0.3, -0.2];
        let adv = compute_advantages(&batch, &value).unwrap();
        assert!(adv.raw.iter().flatten().all(|&a| a == 0.0));
    }

    #[test]
    fn rejects_bad_gamma() {
        assert!(RolloutBatch::<f64>::new(vec![], 1.5).is_err());
    }
}
