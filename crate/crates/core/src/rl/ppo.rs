//! Scalarized PPO: the per-preference policy update and value regression.
//!
//! The surrogate for one sample with scalarized advantage `s` and ratio
//! `rho = pi(a|s) / pi_behavior(a|s)` is
//!
//! * clip: `min(rho * s, clamp(rho, 1 - eps, 1 + eps) * s)`
//! * kl_penalty: `rho * s - beta * KL(behavior || pi)`
//!
//! and the update ascends its minibatch mean by plain gradient steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{diag_gaussian_kl, MlpGrad, PolicyGrad, PolicyParams, ValueParams};
use crate::real::Real;
use crate::rl::batch::{standardize, RolloutBatch};
use crate::rng::RngStream;
use crate::scalarize::{PreferenceVector, ScalarizationKind, ScalarizationSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Clip,
    KlPenalty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub loss: LossVariant,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub episodes_per_iteration: usize,
    pub gamma: f64,
    /// Rescale any policy or value gradient whose L2 norm exceeds this.
    pub max_grad_norm: Option<f64>,
    /// Upper bound on the mean `KL(pre-update || post-update)` over the
    /// batch states. A policy step that would cross it is halved (up to
    /// [`KL_BACKTRACKS`] times) and the update then stops.
    pub max_kl: Option<f64>,
}

pub const KL_BACKTRACKS: usize = 12;

/// The step-size check measures KL on at most about this many evenly
/// strided batch states; the reported statistic uses all of them.
pub const KL_PROBE_STATES: usize = 64;

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            loss: LossVariant::Clip,
            clip_epsilon: 0.2,
            kl_beta: 1.0,
            policy_lr: 3e-3,
            value_lr: 1e-2,
            epochs: 5,
            minibatch_size: 64,
            episodes_per_iteration: 16,
            gamma: 0.99,
            max_grad_norm: None,
            max_kl: Some(0.1),
        }
    }
}

impl PpoConfig {
    /// Returns the names of offending fields.
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            bad.push("clip_epsilon");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            bad.push("kl_beta");
        }
        if !(self.policy_lr >= 0.0 && self.policy_lr.is_finite()) {
            bad.push("policy_lr");
        }
        if !(self.value_lr >= 0.0 && self.value_lr.is_finite()) {
            bad.push("value_lr");
        }
        if self.epochs == 0 {
            bad.push("epochs");
        }
        if self.minibatch_size == 0 {
            bad.push("minibatch_size");
        }
        if self.episodes_per_iteration == 0 {
            bad.push("episodes_per_iteration");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            bad.push("gamma");
        }
        if matches!(self.max_grad_norm, Some(c) if !(c > 0.0)) {
            bad.push("max_grad_norm");
        }
        if matches!(self.max_kl, Some(c) if !(c > 0.0)) {
            bad.push("max_kl");
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.invalid_fields();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.into_iter().map(|k| format!("ppo.{k}: out of range")).collect()))
        }
    }
}

/// Scalarized advantages of a batch for one preference.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarizedAdvantages<T> {
    /// Before standardization.
    pub raw: Vec<T>,
    /// Standardized across the batch; this is what the surrogate uses.
    pub standardized: Vec<T>,
}

/// Weighted sum: `w . (R_t - V(s_t))`. Chebyshev: `f(R_t) - f(V(s_t))`,
/// i.e. the scalarized return measured against the scalarized baseline,
/// with the utopian point taken over returns and baselines of the batch.
pub fn scalarized_advantages<T: Real>(
    batch: &RolloutBatch<T>,
    w: &PreferenceVector<T>,
    scal: &ScalarizationSpec,
) -> Result<ScalarizedAdvantages<T>> {
    if !batch.has_advantages() {
        return Err(Error::Usage("advantages must be computed before scalarizing".into()));
    }
    let q = batch.num_objectives();
    if w.len() != q {
        return Err(Error::InvalidInput(format!(
            "preference has {} weights, batch has {q} objectives",
            w.len()
        )));
    }
    let raw = match scal.kind {
        ScalarizationKind::WeightedSum => batch
            .raw_advantages
            .iter()
            .map(|a| crate::scalarize::weighted_sum(w, a))
            .collect::<Result<Vec<_>>>()?,
        ScalarizationKind::Chebyshev => {
            let z = scal.utopian_point(
                q,
                batch.returns.iter().chain(&batch.values).map(Vec::as_slice),
            )?;
            batch
                .returns
                .iter()
                .zip(&batch.values)
                .map(|(r, v)| Ok(scal.apply(w, r, &z)? - scal.apply(w, v, &z)?))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let standardized = standardize(&raw);
    Ok(ScalarizedAdvantages { raw, standardized })
}

/// One batch's contribution to a surrogate evaluation: the mean per-sample
/// surrogate over `indices`.
pub struct SurrogateTerm<'a, T> {
    pub batch: &'a RolloutBatch<T>,
    pub advantages: &'a [T],
    pub indices: &'a [usize],
}

/// Sum over `terms` of each term's mean surrogate, and its gradient with
/// respect to the policy parameters.
pub fn surrogate<T: Real>(
    policy: &PolicyParams<T>,
    terms: &[SurrogateTerm<'_, T>],
    cfg: &PpoConfig,
) -> Result<(T, PolicyGrad<T>)> {
    let mut grad = PolicyGrad::zeros_like(policy);
    let mut total = T::zero();
    let eps = T::lit(cfg.clip_epsilon);
    let beta = T::lit(cfg.kl_beta);
    let half_log_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    let half = T::lit(0.5);
    for term in terms {
        if term.indices.is_empty() {
            continue;
        }
        let weight = T::one() / T::lit(term.indices.len() as f64);
        for &i in term.indices {
            let batch = term.batch;
            let action = batch.action(i);
            let s = term.advantages[i];
            let old_mean = batch.behavior_mean(i);
            let old_log_std = batch.behavior_log_std(i);
            let old_log_prob = batch.behavior_log_prob(i);
            let log_std = &policy.log_std;
            let mut obj = T::zero();
            let mut dlog_std = vec![T::zero(); log_std.len()];
            policy.mlp.forward_backward_with(batch.state(i), &mut grad.mlp, |mu| {
                let inv_var: Vec<T> = log_std.iter().map(|&l| (-(l + l)).exp()).collect();
                let log_prob = mu
                    .iter()
                    .zip(log_std)
                    .zip(action)
                    .fold(T::zero(), |acc, ((&m, &l), &a)| {
                        let z = (a - m) * (-l).exp();
                        acc - half * z * z - l - half_log_2pi
                    });
                let rho = (log_prob - old_log_prob).exp();
                let unclipped = rho * s;
                let (sample_obj, coef) = match cfg.loss {
                    LossVariant::Clip => {
                        let clipped = rho.max(T::one() - eps).min(T::one() + eps) * s;
                        if unclipped <= clipped {
                            (unclipped, unclipped)
                        } else {
                            (clipped, T::zero())
                        }
                    }
                    LossVariant::KlPenalty => {
                        let kl = diag_gaussian_kl(old_mean, old_log_std, mu, log_std);
                        (unclipped - beta * kl, unclipped)
                    }
                };
                obj = sample_obj;
                let kl_beta = if cfg.loss == LossVariant::KlPenalty { beta } else { T::zero() };
                let mut upstream = Vec::with_capacity(mu.len());
                for d in 0..mu.len() {
                    let diff = action[d] - mu[d];
                    // d log pi / d mu, d log pi / d log_std
                    let dmu = diff * inv_var[d];
                    let dls = diff * diff * inv_var[d] - T::one();
                    // d KL / d mu, d KL / d log_std (new-policy side)
                    let gap = old_mean[d] - mu[d];
                    let old_var = (old_log_std[d] + old_log_std[d]).exp();
                    let kl_mu = -gap * inv_var[d];
                    let kl_ls = T::one() - (old_var + gap * gap) * inv_var[d];
                    upstream.push(weight * (coef * dmu - kl_beta * kl_mu));
                    dlog_std[d] = weight * (coef * dls - kl_beta * kl_ls);
                }
                upstream
            })?;
            total = total + weight * obj;
            grad.log_std
                .iter_mut()
                .zip(&dlog_std)
                .for_each(|(g, &d)| *g = *g + d);
        }
    }
    Ok((total, grad))
}

/// Mean squared vector error `|V(s) - R|^2` over `samples` and its gradient.
pub fn value_loss<T: Real>(
    value: &ValueParams<T>,
    samples: &[(&RolloutBatch<T>, usize)],
) -> Result<(T, MlpGrad<T>)> {
    let mut grad = MlpGrad::zeros_like(&value.mlp);
    let mut total = T::zero();
    if samples.is_empty() {
        return Ok((total, grad));
    }
    let weight = T::one() / T::lit(samples.len() as f64);
    let two = T::lit(2.0);
    for &(batch, i) in samples {
        let target = &batch.returns[i];
        let mut err = T::zero();
        value.mlp.forward_backward_with(batch.state(i), &mut grad, |v| {
            v.iter()
                .zip(target)
                .map(|(&v, &r)| {
                    err = err + (v - r) * (v - r);
                    weight * two * (v - r)
                })
                .collect()
        })?;
        total = total + weight * err;
    }
    Ok((total, grad))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    /// Mean `KL(pre-update || post-update)` over the batch states.
    pub kl: f64,
    pub mean_scalarized_advantage: f64,
    /// Negated surrogate at the updated parameters.
    pub policy_loss: f64,
    pub value_loss: f64,
}

#[derive(Clone, Debug)]
pub struct UpdateOutcome<T> {
    pub policy: PolicyParams<T>,
    pub value: ValueParams<T>,
    pub stats: UpdateStats,
}

/// A batch with the scalarized advantages of its preference.
pub(crate) struct TaskBatch<'a, T> {
    pub batch: &'a RolloutBatch<T>,
    pub advantages: ScalarizedAdvantages<T>,
}

/// One scalarized PPO update of policy and value on a batch collected with
/// advantages attached. Inputs are not modified.
pub fn ppo_update<T: Real>(
    policy: &PolicyParams<T>,
    value: &ValueParams<T>,
    batch: &RolloutBatch<T>,
    w: &PreferenceVector<T>,
    scal: &ScalarizationSpec,
    cfg: &PpoConfig,
    rng: &RngStream,
) -> Result<UpdateOutcome<T>> {
    let task = TaskBatch {
        batch,
        advantages: scalarized_advantages(batch, w, scal)?,
    };
    optimize(policy, value, &[task], cfg, T::lit(cfg.policy_lr), rng)
}

/// Action distributions of the pre-update policy at every batch state.
struct PolicySnapshot<'a, T> {
    states: Vec<&'a [T]>,
    means: Vec<Vec<T>>,
    log_std: Vec<T>,
}

impl<'a, T: Real> PolicySnapshot<'a, T> {
    /// Every `stride`-th pooled state.
    fn new(policy: &PolicyParams<T>, pooled: &[(&'a RolloutBatch<T>, usize)], stride: usize) -> Result<Self> {
        let states: Vec<&'a [T]> = pooled.iter().step_by(stride.max(1)).map(|&(b, i)| b.state(i)).collect();
        let means = states.iter().map(|s| policy.mean(s)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            states,
            means,
            log_std: policy.log_std.clone(),
        })
    }

    fn mean_kl_to(&self, policy: &PolicyParams<T>) -> Result<T> {
        let mut total = T::zero();
        for (s, m) in self.states.iter().zip(&self.means) {
            let mu = policy.mean(s)?;
            total = total + diag_gaussian_kl(m, &self.log_std, &mu, &policy.log_std);
        }
        Ok(total / T::lit(self.states.len().max(1) as f64))
    }
}

fn clip_norm<T: Real>(norm_sq: T, max_norm: Option<f64>) -> T {
    match max_norm {
        Some(c) if norm_sq.sqrt() > T::lit(c) => T::lit(c) / norm_sq.sqrt(),
        _ => T::one(),
    }
}

fn shuffled_chunks(rng: &RngStream, n: usize, size: usize) -> Vec<Vec<usize>> {
    rng.clone().permutation(n).chunks(size).map(<[usize]>::to_vec).collect()
}

/// Shared by the plain update and the meta-update: ascend the sum over tasks
/// of each task's surrogate, and regress the value network on the pooled
/// returns.
pub(crate) fn optimize<T: Real>(
    policy: &PolicyParams<T>,
    value: &ValueParams<T>,
    tasks: &[TaskBatch<'_, T>],
    cfg: &PpoConfig,
    policy_lr: T,
    rng: &RngStream,
) -> Result<UpdateOutcome<T>> {
    if tasks.is_empty() {
        return Err(Error::InvalidInput("update needs at least one batch".into()));
    }
    let pooled: Vec<(&RolloutBatch<T>, usize)> = tasks
        .iter()
        .flat_map(|t| (0..t.batch.len()).map(move |i| (t.batch, i)))
        .collect();
    let start = PolicySnapshot::new(policy, &pooled, 1)?;
    let probe = PolicySnapshot::new(policy, &pooled, pooled.len().div_ceil(KL_PROBE_STATES))?;
    let mut new_policy = policy.clone();
    let policy_rng = rng.child(0);
    'epochs: for epoch in 0..cfg.epochs {
        let epoch_rng = policy_rng.child(epoch as u64);
        let chunks: Vec<Vec<Vec<usize>>> = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| shuffled_chunks(&epoch_rng.child(i as u64), t.batch.len(), cfg.minibatch_size))
            .collect();
        let steps = chunks.iter().map(Vec::len).max().unwrap_or(0);
        'steps: for m in 0..steps {
            let terms: Vec<SurrogateTerm<'_, T>> = tasks
                .iter()
                .zip(&chunks)
                .map(|(t, c)| SurrogateTerm {
                    batch: t.batch,
                    advantages: &t.advantages.standardized,
                    indices: &c[m % c.len()],
                })
                .collect();
            let (obj, mut grad) = surrogate(&new_policy, &terms, cfg)?;
            let norm_sq = grad.norm_sq();
            if !obj.is_finite() || !norm_sq.is_finite() {
                return Err(Error::AbortUpdate(format!(
                    "policy epoch {epoch} step {m}: surrogate {obj}, grad norm^2 {norm_sq}"
                )));
            }
            if policy_lr == T::zero() {
                continue;
            }
            grad.scale(clip_norm(norm_sq, cfg.max_grad_norm));
            let Some(limit) = cfg.max_kl else {
                new_policy.apply(&grad, policy_lr);
                continue;
            };
            // Full step within the KL budget: keep going. Otherwise take the
            // largest halved step that fits and end the update.
            let limit = T::lit(limit);
            let mut step = policy_lr;
            for attempt in 0..=KL_BACKTRACKS {
                let mut trial = new_policy.clone();
                trial.apply(&grad, step);
                if probe.mean_kl_to(&trial)? <= limit {
                    new_policy = trial;
                    if attempt == 0 {
                        continue 'steps;
                    }
                    break;
                }
                step = step * T::lit(0.5);
            }
            break 'epochs;
        }
    }

    let mut new_value = value.clone();
    let value_lr = T::lit(cfg.value_lr);
    let value_rng = rng.child(1);
    for epoch in 0..cfg.epochs {
        for (m, chunk) in shuffled_chunks(&value_rng.child(epoch as u64), pooled.len(), cfg.minibatch_size)
            .iter()
            .enumerate()
        {
            let samples: Vec<_> = chunk.iter().map(|&j| pooled[j]).collect();
            let (loss, mut grad) = value_loss(&new_value, &samples)?;
            let norm_sq = grad.norm_sq();
            if !loss.is_finite() || !norm_sq.is_finite() {
                return Err(Error::AbortUpdate(format!(
                    "value epoch {epoch} step {m}: loss {loss}, grad norm^2 {norm_sq}"
                )));
            }
            if value_lr != T::zero() {
                grad.scale(clip_norm(norm_sq, cfg.max_grad_norm));
                new_value.mlp.apply(&grad, -value_lr);
            }
        }
    }

    let stats = update_stats(&start, &new_policy, &new_value, tasks, &pooled, cfg)?;
    if !new_policy.is_finite() || !new_value.mlp.is_finite() {
        return Err(Error::AbortUpdate("non-finite parameters after update".into()));
    }
    Ok(UpdateOutcome {
        policy: new_policy,
        value: new_value,
        stats,
    })
}

fn update_stats<T: Real>(
    start: &PolicySnapshot<T>,
    policy: &PolicyParams<T>,
    value: &ValueParams<T>,
    tasks: &[TaskBatch<'_, T>],
    pooled: &[(&RolloutBatch<T>, usize)],
    cfg: &PpoConfig,
) -> Result<UpdateStats> {
    let kl = start.mean_kl_to(policy)?.as_f64();
    let all: Vec<Vec<usize>> = tasks.iter().map(|t| (0..t.batch.len()).collect()).collect();
    let terms: Vec<SurrogateTerm<'_, T>> = tasks
        .iter()
        .zip(&all)
        .map(|(t, idx)| SurrogateTerm {
            batch: t.batch,
            advantages: &t.advantages.standardized,
            indices: idx,
        })
        .collect();
    let (obj, _) = surrogate(policy, &terms, cfg)?;
    let (vloss, _) = value_loss(value, pooled)?;
    let n_adv: usize = tasks.iter().map(|t| t.advantages.raw.len()).sum();
    let sum_adv: f64 = tasks
        .iter()
        .flat_map(|t| t.advantages.raw.iter())
        .map(|a| a.as_f64())
        .sum();
    let stats = UpdateStats {
        kl,
        mean_scalarized_advantage: sum_adv / n_adv.max(1) as f64,
        policy_loss: -obj.as_f64(),
        value_loss: vloss.as_f64(),
    };
    if !stats.policy_loss.is_finite() || !stats.value_loss.is_finite() {
        return Err(Error::AbortUpdate(format!("non-finite loss after update: {stats:?}")));
    }
    Ok(stats)
}
