//! Meta-training over preference vectors, fine-tuning into per-preference
//! policies, the radial baseline and front construction.
//!
//! Stream layout for `train_meta` under the root stream `rng`:
//!
//! ```text
//! rng.child(0)                       network initialisation
//! rng.child(1).child(it)             meta-iteration `it`
//!     .child(0)                      meta batch D
//!     .child(1).child(i)             task i: .child(0) preference,
//!                                    .child(1) adaptation, .child(2) batch D_i
//!     .child(2)                      meta-update
//! ```

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{collect_episodes, EnvSpec, EpisodeCounter};
use crate::error::{Error, Result};
use crate::nnet::{NetworkConfig, PolicyParams, ValueParams};
use crate::pareto::{ArchiveEntry, ParetoArchive};
use crate::real::Real;
use crate::rl::{
    evaluate_policy, optimize, ppo_update, scalarized_advantages, PpoConfig, RolloutBatch, TaskBatch,
    UpdateOutcome,
};
use crate::rng::RngStream;
use crate::scalarize::{sample_preference, PreferenceVector, ScalarizationSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub num_tasks: usize,
    pub meta_iterations: usize,
    pub adaptation_steps: usize,
    pub meta_lr: f64,
    /// Fine-tune iterations per preference (K).
    pub finetune_iterations: usize,
    /// The meta batch D holds this many times a regular update's episodes.
    pub batch_multiplier: usize,
    /// Preferences fine-tuned into the final front (N).
    pub preference_count: usize,
    /// Checkpoint period in meta-iterations; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            num_tasks: 5,
            meta_iterations: 400,
            adaptation_steps: 1,
            meta_lr: 3e-3,
            finetune_iterations: 10,
            batch_multiplier: 5,
            preference_count: 30,
            checkpoint_every: 50,
        }
    }
}

impl MetaConfig {
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if self.num_tasks == 0 {
            bad.push("num_tasks");
        }
        if self.adaptation_steps == 0 {
            bad.push("adaptation_steps");
        }
        if !(self.meta_lr >= 0.0 && self.meta_lr.is_finite()) {
            bad.push("meta_lr");
        }
        if self.batch_multiplier == 0 {
            bad.push("batch_multiplier");
        }
        if self.preference_count == 0 {
            bad.push("preference_count");
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.invalid_fields();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.into_iter().map(|k| format!("meta.{k}: out of range")).collect()))
        }
    }

    /// Episodes in the meta batch D.
    pub fn meta_batch_episodes(&self, ppo: &PpoConfig) -> u64 {
        (self.batch_multiplier * ppo.episodes_per_iteration) as u64
    }

    /// Fresh episodes each task spends on adaptation. Adaptation reuses D,
    /// so this is zero.
    pub fn adaptation_episodes(&self, _ppo: &PpoConfig) -> u64 {
        0
    }

    /// Episodes in each post-adaptation batch D_i.
    pub fn post_adaptation_episodes(&self, ppo: &PpoConfig) -> u64 {
        ppo.episodes_per_iteration as u64
    }

    pub fn episodes_per_iteration(&self, ppo: &PpoConfig) -> u64 {
        self.meta_batch_episodes(ppo)
            + self.num_tasks as u64 * (self.adaptation_episodes(ppo) + self.post_adaptation_episodes(ppo))
    }

    /// Episodes consumed by `train_meta`.
    pub fn training_episodes(&self, ppo: &PpoConfig) -> u64 {
        self.meta_iterations as u64 * self.episodes_per_iteration(ppo)
    }

    /// Episodes consumed fine-tuning all `preference_count` preferences.
    pub fn finetune_episodes(&self, ppo: &PpoConfig) -> u64 {
        (self.preference_count * self.finetune_iterations * ppo.episodes_per_iteration) as u64
    }

    pub fn total_episodes(&self, ppo: &PpoConfig) -> u64 {
        self.training_episodes(ppo) + self.finetune_episodes(ppo)
    }
}

/// One task of a meta-iteration.
#[derive(Clone, Debug)]
pub struct TaskRecord<T> {
    pub preference: PreferenceVector<T>,
    pub policy: PolicyParams<T>,
    pub value: ValueParams<T>,
    /// D, collected under the meta-policy and shared by all tasks.
    pub adaptation_batch: Arc<RolloutBatch<T>>,
    /// D_i, collected under the adapted policy, with advantages under the
    /// adapted value network.
    pub batch: RolloutBatch<T>,
}

/// Adapts the meta-parameters to `w` with `adaptation_steps` updates on
/// `d`, recomputing advantages under the current value network each step.
/// Step `k` uses `rng.child(k)`.
#[allow(clippy::too_many_arguments)]
pub fn adapt<T: Real>(
    meta: &PolicyParams<T>,
    value: &ValueParams<T>,
    d: &RolloutBatch<T>,
    w: &PreferenceVector<T>,
    cfg: &MetaConfig,
    ppo: &PpoConfig,
    scal: &ScalarizationSpec,
    rng: &RngStream,
) -> Result<(PolicyParams<T>, ValueParams<T>)> {
    let mut policy = meta.clone();
    let mut value = value.clone();
    for step in 0..cfg.adaptation_steps {
        let batch = d.clone().with_advantages(&value)?;
        let out = ppo_update(&policy, &value, &batch, w, scal, ppo, &rng.child(step as u64))?;
        policy = out.policy;
        value = out.value;
    }
    Ok((policy, value))
}

/// One aggregated first-order step: ascend the sum over tasks of each
/// task's surrogate on D_i, with ratios against the adapted policy that
/// collected it, at learning rate `meta_lr`; regress the value network on
/// all D_i returns.
pub fn meta_update<T: Real>(
    meta: &PolicyParams<T>,
    value: &ValueParams<T>,
    tasks: &[TaskRecord<T>],
    cfg: &MetaConfig,
    ppo: &PpoConfig,
    scal: &ScalarizationSpec,
    rng: &RngStream,
) -> Result<UpdateOutcome<T>> {
    let batches = tasks
        .iter()
        .map(|t| {
            Ok(TaskBatch {
                batch: &t.batch,
                advantages: scalarized_advantages(&t.batch, &t.preference, scal)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    optimize(meta, value, &batches, ppo, T::lit(cfg.meta_lr), rng)
}

/// One row of the meta-training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    /// Cumulative episodes after this iteration.
    pub episodes: u64,
    /// Mean discounted return of D.
    pub mean_return: Vec<f64>,
    pub kl: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Tasks whose adaptation aborted; they fell back to the meta-policy.
    pub adapt_failures: usize,
    /// The meta-update aborted and the meta-parameters were kept.
    pub skipped: bool,
}

/// Everything needed to continue meta-training.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaState<T> {
    pub policy: PolicyParams<T>,
    pub value: ValueParams<T>,
    pub next_iteration: usize,
    pub episodes: u64,
    pub history: Vec<HistoryRow>,
}

impl<T: Real> MetaState<T> {
    pub fn init(spec: &EnvSpec, net: &NetworkConfig, rng: &RngStream) -> Result<Self> {
        let (policy, value) = net.init(spec.state_dim, spec.action_dim, spec.num_objectives, &rng.child(0))?;
        Ok(Self {
            policy,
            value,
            next_iteration: 0,
            episodes: 0,
            history: Vec::new(),
        })
    }
}

/// Meta-trains from a random initialisation.
pub fn train_meta<T: Real>(
    spec: &EnvSpec,
    cfg: &MetaConfig,
    ppo: &PpoConfig,
    scal: &ScalarizationSpec,
    net: &NetworkConfig,
    rng: &RngStream,
) -> Result<MetaState<T>> {
    let state = MetaState::init(spec, net, rng)?;
    continue_meta(spec, cfg, ppo, scal, rng, state, &EpisodeCounter::new(), |_| Ok(()))
}

/// Runs the remaining meta-iterations of `state`. `after_iteration` sees
/// the state after every iteration; an error from it stops training.
#[allow(clippy::too_many_arguments)]
pub fn continue_meta<T: Real>(
    spec: &EnvSpec,
    cfg: &MetaConfig,
    ppo: &PpoConfig,
    scal: &ScalarizationSpec,
    rng: &RngStream,
    mut state: MetaState<T>,
    counter: &EpisodeCounter,
    mut after_iteration: impl FnMut(&MetaState<T>) -> Result<()>,
) -> Result<MetaState<T>> {
    cfg.validate()?;
    ppo.validate()?;
    scal.validate()?;
    let gamma = T::lit(ppo.gamma);
    for it in state.next_iteration..cfg.meta_iterations {
        let it_rng = rng.child(1).child(it as u64);
        let start = counter.get();
        let d = collect_episodes(
            spec,
            &state.policy,
            cfg.meta_batch_episodes(ppo) as usize,
            &it_rng.child(0),
            counter,
        )?;
        let d = Arc::new(RolloutBatch::new(d, gamma)?);

        let tasks = (0..cfg.num_tasks)
            .into_par_iter()
            .map(|i| {
                let task_rng = it_rng.child(1).child(i as u64);
                let w = sample_preference::<T>(spec.num_objectives, &mut task_rng.child(0))?;
                let (policy, value, failed) =
                    match adapt(&state.policy, &state.value, &d, &w, cfg, ppo, scal, &task_rng.child(1)) {
                        Ok((p, v)) => (p, v, false),
                        Err(Error::AbortUpdate(reason)) => {
                            log::warn!("meta-iteration {it}, task {i}: adaptation aborted: {reason}");
                            (state.policy.clone(), state.value.clone(), true)
                        }
                        Err(e) => return Err(e),
                    };
                let di = collect_episodes(
                    spec,
                    &policy,
                    cfg.post_adaptation_episodes(ppo) as usize,
                    &task_rng.child(2),
                    counter,
                )?;
                let batch = RolloutBatch::new(di, gamma)?.with_advantages(&value)?;
                Ok((
                    TaskRecord {
                        preference: w,
                        policy,
                        value,
                        adaptation_batch: Arc::clone(&d),
                        batch,
                    },
                    failed,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let adapt_failures = tasks.iter().filter(|(_, f)| *f).count();
        let tasks: Vec<TaskRecord<T>> = tasks.into_iter().map(|(t, _)| t).collect();

        let mean_return = d.mean_episode_return().iter().map(|r| r.as_f64()).collect();
        let mut row = HistoryRow {
            iteration: it,
            episodes: 0,
            mean_return,
            kl: 0.0,
            policy_loss: f64::NAN,
            value_loss: f64::NAN,
            adapt_failures,
            skipped: false,
        };
        match meta_update(&state.policy, &state.value, &tasks, cfg, ppo, scal, &it_rng.child(2)) {
            Ok(out) => {
                state.policy = out.policy;
                state.value = out.value;
                row.kl = out.stats.kl;
                row.policy_loss = out.stats.policy_loss;
                row.value_loss = out.stats.value_loss;
            }
            Err(Error::AbortUpdate(reason)) => {
                log::warn!("meta-iteration {it} skipped: {reason}");
                row.skipped = true;
            }
            Err(e) => return Err(e),
        }
        state.episodes += counter.get() - start;
        row.episodes = state.episodes;
        state.history.push(row);
        state.next_iteration = it + 1;
        after_iteration(&state)?;
    }
    Ok(state)
}

/// `k` PPO iterations from the given parameters; returns the policy after
/// each iteration, starting with the input (`k + 1` snapshots). Iteration
/// `j` collects from `rng.child(j).child(0)` and updates with
/// `rng.child(j).child(1)`.
#[allow(clippy::too_many_arguments)]
pub fn finetune_trace<T: Real>(
    meta: &PolicyParams<T>,
    value: &ValueParams<T>,
    spec: &EnvSpec,
    w: &PreferenceVector<T>,
    k: usize,
    ppo: &PpoConfig,
    scal: &ScalarizationSpec,
    rng: &RngStream,
    counter: &EpisodeCounter,
) -> Result<Vec<PolicyParams<T>>> {
    let gamma = T::lit(ppo.gamma);
    let mut policy = meta.clone();
    let mut value = value.clone();
    let mut trace = Vec::with_capacity(k + 1);
    trace.push(policy.clone());
    for j in 0..k {
        let r = rng.child(j as u64);
        let trajs = collect_episodes(spec, &policy, ppo.episodes_per_iteration, &r.child(0), counter)?;
        let batch = RolloutBatch::new(trajs, gamma)?.with_advantages(&value)?;
        let out = ppo_update(&policy, &value, &batch, w, scal, ppo, &r.child(1))?;
        policy = out.policy;
        value = out.value;
        trace.push(policy.clone());
    }
    Ok(trace)
}

/// [`finetune_trace`] keeping only the final policy.
#[allow(clippy::too_many_arguments)]
pub fn finetune<T: Real>(
    meta: &PolicyParams<T>,
    value: &ValueParams<T>,
    spec: &EnvSpec,
    w: &PreferenceVector<T>,
    k: usize,
    ppo: &PpoConfig,
    scal: &ScalarizationSpec,
    rng: &RngStream,
    counter: &EpisodeCounter,
) -> Result<PolicyParams<T>> {
    let mut trace = finetune_trace(meta, value, spec, w, k, ppo, scal, rng, counter)?;
    Ok(trace.pop().expect("trace holds the starting policy"))
}

/// A radial-baseline policy; `failure` holds the abort reason if training
/// stopped early, in which case `policy` is the last good one.
#[derive(Clone, Debug)]
pub struct RaPolicy<T> {
    pub preference: PreferenceVector<T>,
    pub policy: PolicyParams<T>,
    pub failure: Option<String>,
}

impl<T> RaPolicy<T> {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Trains one randomly initialised policy per weight for `t` iterations.
/// Each weight draws from `rng.child_keyed(weight)`: initialisation from
/// `.child(0)`, iteration `j` from `.child(1).child(j)`. The output does
/// not depend on the position of a weight in the list.
#[allow(clippy::too_many_arguments)]
pub fn run_ra<T: Real>(
    spec: &EnvSpec,
    weights: &[PreferenceVector<T>],
    t: usize,
    ppo: &PpoConfig,
    scal: &ScalarizationSpec,
    net: &NetworkConfig,
    rng: &RngStream,
    counter: &EpisodeCounter,
) -> Result<Vec<RaPolicy<T>>> {
    if t == 0 {
        return Err(Error::InvalidInput("radial baseline needs at least one iteration".into()));
    }
    ppo.validate()?;
    scal.validate()?;
    weights
        .par_iter()
        .map(|w| {
            let stream = rng.child_keyed(w.weights());
            let (policy, value) =
                net.init::<T>(spec.state_dim, spec.action_dim, spec.num_objectives, &stream.child(0))?;
            match finetune_trace(&policy, &value, spec, w, t, ppo, scal, &stream.child(1), counter) {
                Ok(mut trace) => Ok(RaPolicy {
                    preference: w.clone(),
                    policy: trace.pop().expect("non-empty trace"),
                    failure: None,
                }),
                Err(Error::AbortUpdate(reason)) => {
                    log::warn!("radial policy for {:?} failed: {reason}", w.weights());
                    Ok(RaPolicy {
                        preference: w.clone(),
                        policy,
                        failure: Some(reason),
                    })
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Evaluates every policy on the same evaluation streams, flags validity
/// and marks dominance among the valid ones. Policy ids are positions.
pub fn build_front<T: Real>(
    spec: &EnvSpec,
    policies: &[PolicyParams<T>],
    labels: &[PreferenceVector<T>],
    gamma: T,
    episodes: usize,
    rng: &RngStream,
) -> Result<ParetoArchive<T>> {
    if policies.is_empty() {
        return Err(Error::InvalidInput("front needs at least one policy".into()));
    }
    if labels.len() != policies.len() {
        return Err(Error::InvalidInput(format!(
            "{} policies but {} preference labels",
            policies.len(),
            labels.len()
        )));
    }
    let entries = policies
        .par_iter()
        .zip(labels)
        .enumerate()
        .map(|(id, (policy, w))| {
            let mean_return = evaluate_policy(spec, policy, episodes, gamma, rng)?;
            Ok(ArchiveEntry {
                policy_id: id,
                preference: w.weights().to_vec(),
                valid: spec.is_valid(&mean_return),
                mean_return,
                non_dominated: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParetoArchive::new(entries))
}
