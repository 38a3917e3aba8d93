//! Full experiments: meta-training, fine-tuning, the radial baseline, and
//! every artifact of a run directory.
//!
//! Stream layout under `RngStream::new(seed)`:
//!
//! ```text
//! child(0).child(0)                      meta-training (see `meta`)
//! child(0).child(1).child(a).child(i)    fine-tuning preference i, attempt a
//! child(1).child(a)                      radial baseline, attempt a
//! child(2)                               evaluation, shared by every policy
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::envs::{EnvId, EnvSpec, EpisodeCounter};
use crate::error::{Error, Result};
use crate::harness::artifacts::{
    comparison_csv, curve_csv, export_front_csv, history_csv, scatter_svg, write_atomic, ComparisonRow, CurvePoint,
    Series,
};
use crate::harness::checkpoint::{load_meta_state, save_meta_state, save_policy, save_value};
use crate::harness::config::ExperimentConfig;
use crate::meta::{build_front, continue_meta, finetune_trace, run_ra, MetaState};
use crate::nnet::PolicyParams;
use crate::pareto::{hypervolume, hypervolume_mc, reference_point, ParetoArchive, REFERENCE_MARGIN};
use crate::rng::RngStream;
use crate::scalarize::{radial_weights, PreferenceVector};

/// Fine-tuning a preference is retried on fresh streams this many times in
/// total before the run gives up.
pub const MAX_ATTEMPTS: usize = 3;

/// `radial_weights(q, n)`, or the uniform preference when `n == 1`.
pub fn front_preferences(q: usize, n: usize) -> Result<Vec<PreferenceVector<f64>>> {
    if n == 1 {
        Ok(vec![PreferenceVector::normalized(vec![1.0; q])?])
    } else {
        radial_weights(q, n)
    }
}

/// Radial-baseline iterations per weight that spend the meta method's
/// total episode count (at least one).
pub fn matched_ra_iterations(cfg: &ExperimentConfig) -> usize {
    let total = cfg.meta.total_episodes(&cfg.ppo) as f64;
    let per_iteration = (cfg.meta.preference_count * cfg.ppo.episodes_per_iteration) as f64;
    ((total / per_iteration).round() as usize).max(1)
}

pub fn ra_iterations(cfg: &ExperimentConfig) -> usize {
    cfg.ra_iterations.unwrap_or_else(|| matched_ra_iterations(cfg))
}

/// Return vector of the exact optimum for `w`, where one is known: on the
/// convex bandit the weighted-sum optimum is `a* = w_1 / (w_0 + w_1)`.
pub fn analytic_optimum(env: EnvId, w: &[f64]) -> Option<Vec<f64>> {
    match env {
        EnvId::ConvexBandit => {
            let a = w[1] / (w[0] + w[1]);
            Some(vec![-a * a, -(a - 1.0) * (a - 1.0)])
        }
        _ => None,
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue meta-training from this meta-state checkpoint.
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EpisodeCounts {
    pub meta_training: u64,
    pub meta_finetune: u64,
    pub meta_total: u64,
    /// Closed form from the meta configuration.
    pub meta_expected: u64,
    pub ra_total: u64,
    pub ra_expected: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub code_version: String,
    pub env: String,
    pub seed: u64,
    pub method: String,
    pub config: String,
    pub episodes: EpisodeCounts,
    pub ra_iterations: usize,
    pub finetune_retries: usize,
    pub failed_ra_policies: usize,
    pub reference_point: Vec<f64>,
    pub created_unix: u64,
}

#[derive(Clone, Debug)]
pub struct MethodResult {
    pub archive: ParetoArchive<f64>,
    pub policies: Vec<PolicyParams<f64>>,
    pub episodes: u64,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output: PathBuf,
    pub meta: Option<MethodResult>,
    pub curve: Vec<CurvePoint>,
    pub ra: Option<MethodResult>,
    pub reference_point: Vec<f64>,
    pub manifest: Manifest,
}

struct MetaPhase {
    state: MetaState<f64>,
    preferences: Vec<PreferenceVector<f64>>,
    /// `fronts[k]` is the front after `k` fine-tuning iterations.
    fronts: Vec<ParetoArchive<f64>>,
    policies: Vec<PolicyParams<f64>>,
    finetune_episodes: u64,
    retries: usize,
}

struct RaPhase {
    archive: ParetoArchive<f64>,
    policies: Vec<PolicyParams<f64>>,
    episodes: u64,
    iterations: usize,
    failed: usize,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    run_experiment_with(cfg, &RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    prepare(cfg)?;
    let out = cfg.output.clone();
    let spec = cfg.spec();
    let root = RngStream::new(cfg.seed);
    let eval_rng = root.child(2);

    let meta = if cfg.method.runs_meta() {
        Some(meta_phase(cfg, &spec, &root.child(0), &eval_rng, opts)?)
    } else {
        None
    };
    let ra = if cfg.method.runs_ra() {
        Some(ra_phase(cfg, &spec, &root.child(1), &eval_rng)?)
    } else {
        None
    };

    // One reference point for every hypervolume of the run.
    let mut all_points: Vec<Vec<f64>> = Vec::new();
    if let Some(m) = &meta {
        m.fronts.iter().for_each(|f| all_points.extend(f.valid_points()));
    }
    if let Some(r) = &ra {
        all_points.extend(r.archive.valid_points());
    }
    let reference = reference_point(&all_points, REFERENCE_MARGIN).unwrap_or_default();
    let hv = |points: &[Vec<f64>]| front_hypervolume(points, &reference);
    let q = spec.num_objectives;
    let mut comparison = Vec::new();
    let mut curve = Vec::new();

    let meta_result = match meta {
        Some(mut m) => {
            curve = curve_points(cfg, &m.fronts, &hv)?;
            write_atomic(&out.join("finetune_curve.csv"), curve_csv(&curve).as_bytes())?;
            let mut archive = m.fronts.pop().expect("at least the starting front");
            finish_archive(&mut archive, &reference, &hv)?;
            export_front_csv(&archive, q, &out.join("front_meta.csv"))?;
            write_json(&out.join("archive_meta.json"), &archive)?;
            let episodes = m.state.episodes + m.finetune_episodes;
            comparison.push(ComparisonRow {
                method: "meta".into(),
                episodes,
                hypervolume: archive.hypervolume.unwrap_or(0.0),
                analytic_hypervolume: analytic_hv(spec.id, &m.preferences, &reference)?,
                valid: archive.valid_count(),
                non_dominated: archive.non_dominated_count(),
                policies: archive.entries.len(),
            });
            Some((m, archive, episodes))
        }
        None => None,
    };
    let ra_result = match ra {
        Some(mut r) => {
            finish_archive(&mut r.archive, &reference, &hv)?;
            export_front_csv(&r.archive, q, &out.join("front_ra.csv"))?;
            write_json(&out.join("archive_ra.json"), &r.archive)?;
            let prefs: Vec<PreferenceVector<f64>> = r
                .archive
                .entries
                .iter()
                .map(|e| PreferenceVector::new(e.preference.clone()))
                .collect::<Result<_>>()?;
            comparison.push(ComparisonRow {
                method: "ra".into(),
                episodes: r.episodes,
                hypervolume: r.archive.hypervolume.unwrap_or(0.0),
                analytic_hypervolume: analytic_hv(spec.id, &prefs, &reference)?,
                valid: r.archive.valid_count(),
                non_dominated: r.archive.non_dominated_count(),
                policies: r.archive.entries.len(),
            });
            Some(r)
        }
        None => None,
    };
    write_atomic(&out.join("comparison.csv"), comparison_csv(&comparison, &reference).as_bytes())?;

    let mut series = Vec::new();
    if let Some((_, a, _)) = &meta_result {
        series.push(Series {
            name: "meta",
            color: "#1f5fbf",
            archive: a,
        });
    }
    if let Some(r) = &ra_result {
        series.push(Series {
            name: "ra",
            color: "#d9541e",
            archive: &r.archive,
        });
    }
    if q >= 2 {
        write_atomic(&out.join("front.svg"), scatter_svg(&series).as_bytes())?;
    }

    let meta_training = meta_result.as_ref().map_or(0, |(m, _, _)| m.state.episodes);
    let meta_finetune = meta_result.as_ref().map_or(0, |(m, _, _)| m.finetune_episodes);
    let ra_iters = ra_result.as_ref().map_or_else(|| ra_iterations(cfg), |r| r.iterations);
    let manifest = Manifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        env: cfg.env.to_string(),
        seed: cfg.seed,
        method: format!("{:?}", cfg.method).to_lowercase(),
        config: cfg.to_toml(),
        episodes: EpisodeCounts {
            meta_training,
            meta_finetune,
            meta_total: meta_training + meta_finetune,
            meta_expected: if cfg.method.runs_meta() { cfg.meta.total_episodes(&cfg.ppo) } else { 0 },
            ra_total: ra_result.as_ref().map_or(0, |r| r.episodes),
            ra_expected: if cfg.method.runs_ra() {
                (ra_iters * cfg.meta.preference_count * cfg.ppo.episodes_per_iteration) as u64
            } else {
                0
            },
        },
        ra_iterations: ra_iters,
        finetune_retries: meta_result.as_ref().map_or(0, |(m, _, _)| m.retries),
        failed_ra_policies: ra_result.as_ref().map_or(0, |r| r.failed),
        reference_point: reference.clone(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    write_json(&out.join("manifest.json"), &manifest)?;

    Ok(RunSummary {
        output: out,
        meta: meta_result.map(|(m, archive, episodes)| MethodResult {
            archive,
            policies: m.policies,
            episodes,
        }),
        curve,
        ra: ra_result.map(|r| MethodResult {
            archive: r.archive,
            policies: r.policies,
            episodes: r.episodes,
        }),
        reference_point: reference,
        manifest,
    })
}

/// Samples for the Monte-Carlo estimate used above four objectives.
pub const MC_SAMPLES: usize = 1_000_000;

/// Exact hypervolume, or a fixed-stream Monte-Carlo estimate (with a
/// warning) when there are more than four objectives. An empty reference
/// (no valid points anywhere) gives zero.
pub fn front_hypervolume(points: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    if reference.is_empty() {
        return Ok(0.0);
    }
    match hypervolume(points, reference) {
        Err(Error::UnsupportedDimension(q)) => {
            log::warn!("{q} objectives: hypervolume estimated from {MC_SAMPLES} samples");
            let mut rng = RngStream::at(0, vec![q as u64]);
            Ok(hypervolume_mc(points, reference, MC_SAMPLES, &mut rng)?.0)
        }
        other => other,
    }
}

fn finish_archive(
    archive: &mut ParetoArchive<f64>,
    reference: &[f64],
    hv: &impl Fn(&[Vec<f64>]) -> Result<f64>,
) -> Result<()> {
    archive.reference_point = reference.to_vec();
    archive.hypervolume = Some(hv(&archive.valid_points())?);
    Ok(())
}

fn analytic_hv(env: EnvId, prefs: &[PreferenceVector<f64>], reference: &[f64]) -> Result<Option<f64>> {
    if reference.is_empty() {
        return Ok(None);
    }
    let optima: Option<Vec<Vec<f64>>> = prefs.iter().map(|w| analytic_optimum(env, w.weights())).collect();
    optima.map(|points| hypervolume(&points, reference)).transpose()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn meta_phase(
    cfg: &ExperimentConfig,
    spec: &EnvSpec,
    rng: &RngStream,
    eval_rng: &RngStream,
    opts: &RunOptions,
) -> Result<MetaPhase> {
    let state = train_stage(cfg, spec, rng, opts)?;
    finetune_stage(cfg, spec, rng, eval_rng, state)
}

/// Meta-training only: checkpoints, `history.csv` and the final meta-state
/// under the run directory.
pub fn train_meta_run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<MetaState<f64>> {
    prepare(cfg)?;
    train_stage(cfg, &cfg.spec(), &RngStream::new(cfg.seed).child(0), opts)
}

/// Fine-tunes `state` (usually a loaded meta checkpoint) and writes the
/// meta front, the fine-tuning curve and the fine-tuned policies. The curve
/// uses the reference point of its own points.
pub fn finetune_run(cfg: &ExperimentConfig, state: MetaState<f64>) -> Result<ParetoArchive<f64>> {
    prepare(cfg)?;
    let spec = cfg.spec();
    let root = RngStream::new(cfg.seed);
    let mut m = finetune_stage(cfg, &spec, &root.child(0), &root.child(2), state)?;
    let points: Vec<Vec<f64>> = m.fronts.iter().flat_map(|f| f.valid_points()).collect();
    let reference = reference_point(&points, REFERENCE_MARGIN).unwrap_or_default();
    let hv = |p: &[Vec<f64>]| front_hypervolume(p, &reference);
    let curve = curve_points(cfg, &m.fronts, &hv)?;
    write_atomic(&cfg.output.join("finetune_curve.csv"), curve_csv(&curve).as_bytes())?;
    let mut archive = m.fronts.pop().expect("at least the starting front");
    finish_archive(&mut archive, &reference, &hv)?;
    export_front_csv(&archive, spec.num_objectives, &cfg.output.join("front_meta.csv"))?;
    write_json(&cfg.output.join("archive_meta.json"), &archive)?;
    Ok(archive)
}

/// The radial baseline only; writes `front_ra.csv` and `archive_ra.json`.
pub fn ra_run(cfg: &ExperimentConfig) -> Result<ParetoArchive<f64>> {
    prepare(cfg)?;
    let spec = cfg.spec();
    let root = RngStream::new(cfg.seed);
    let mut r = ra_phase(cfg, &spec, &root.child(1), &root.child(2))?;
    let reference = reference_point(&r.archive.valid_points(), REFERENCE_MARGIN).unwrap_or_default();
    let hv = |p: &[Vec<f64>]| front_hypervolume(p, &reference);
    finish_archive(&mut r.archive, &reference, &hv)?;
    export_front_csv(&r.archive, spec.num_objectives, &cfg.output.join("front_ra.csv"))?;
    write_json(&cfg.output.join("archive_ra.json"), &r.archive)?;
    Ok(r.archive)
}

fn prepare(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    write_atomic(&cfg.output.join("config.toml"), cfg.to_toml().as_bytes())
}

fn curve_points(
    cfg: &ExperimentConfig,
    fronts: &[ParetoArchive<f64>],
    hv: &impl Fn(&[Vec<f64>]) -> Result<f64>,
) -> Result<Vec<CurvePoint>> {
    let mut seen: Vec<Vec<f64>> = Vec::new();
    let mut curve = Vec::new();
    for (k, front) in fronts.iter().enumerate() {
        let points = front.valid_points();
        seen.extend(points.iter().cloned());
        curve.push(CurvePoint {
            iteration: k,
            episodes: (k * cfg.meta.preference_count * cfg.ppo.episodes_per_iteration) as u64,
            hypervolume: hv(&points)?,
            monotone_hypervolume: hv(&seen)?,
            valid: front.valid_count(),
            non_dominated: front.non_dominated_count(),
        });
    }
    Ok(curve)
}

fn train_stage(cfg: &ExperimentConfig, spec: &EnvSpec, rng: &RngStream, opts: &RunOptions) -> Result<MetaState<f64>> {
    let out = &cfg.output;
    let ckpt_dir = out.join("checkpoints");
    let train_rng = rng.child(0);
    let state = match &opts.resume {
        Some(path) => {
            let state: MetaState<f64> = load_meta_state(path)?;
            let fresh = MetaState::<f64>::init(spec, &cfg.network, &train_rng)?;
            if state.policy.mlp.layer_sizes != fresh.policy.mlp.layer_sizes
                || state.value.mlp.layer_sizes != fresh.value.mlp.layer_sizes
            {
                return Err(Error::Checkpoint {
                    path: path.clone(),
                    reason: "network shapes do not match the configuration".into(),
                });
            }
            if state.next_iteration > cfg.meta.meta_iterations {
                return Err(Error::Checkpoint {
                    path: path.clone(),
                    reason: format!(
                        "checkpoint is at iteration {}, past meta_iterations = {}",
                        state.next_iteration, cfg.meta.meta_iterations
                    ),
                });
            }
            state
        }
        None => MetaState::init(spec, &cfg.network, &train_rng)?,
    };
    let counter = EpisodeCounter::starting_at(state.episodes);
    let every = cfg.meta.checkpoint_every;
    let state = continue_meta(
        spec,
        &cfg.meta,
        &cfg.ppo,
        &cfg.scalarization,
        &train_rng,
        state,
        &counter,
        |s| {
            if every > 0 && s.next_iteration % every == 0 {
                save_meta_state(s, &ckpt_dir.join(format!("meta_iter_{:06}.ckpt", s.next_iteration)))?;
            }
            Ok(())
        },
    )?;
    if counter.get() != state.episodes {
        return Err(Error::InvalidInput(format!(
            "episode counter {} disagrees with training state {}",
            counter.get(),
            state.episodes
        )));
    }
    save_meta_state(&state, &ckpt_dir.join("meta_final.ckpt"))?;
    save_policy(&state.policy, &ckpt_dir.join("meta_policy.ckpt"))?;
    save_value(&state.value, &ckpt_dir.join("meta_value.ckpt"))?;
    write_atomic(
        &out.join("history.csv"),
        history_csv(&state.history, spec.num_objectives).as_bytes(),
    )?;
    Ok(state)
}

fn finetune_stage(
    cfg: &ExperimentConfig,
    spec: &EnvSpec,
    rng: &RngStream,
    eval_rng: &RngStream,
    state: MetaState<f64>,
) -> Result<MetaPhase> {
    let out = &cfg.output;
    let prefs = front_preferences(spec.num_objectives, cfg.meta.preference_count)?;
    let k = cfg.meta.finetune_iterations;
    let ft_counter = EpisodeCounter::new();
    let traces = prefs
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut last = String::new();
            for attempt in 0..MAX_ATTEMPTS {
                let stream = rng.child(1).child(attempt as u64).child(i as u64);
                match finetune_trace(&state.policy, &state.value, spec, w, k, &cfg.ppo, &cfg.scalarization, &stream, &ft_counter) {
                    Ok(trace) => return Ok((trace, attempt)),
                    Err(Error::AbortUpdate(reason)) => {
                        log::warn!("fine-tuning preference {i} attempt {attempt} aborted: {reason}");
                        last = reason;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(Error::NumericalAbort {
                attempts: MAX_ATTEMPTS,
                reason: format!("fine-tuning preference {i}: {last}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let retries = traces.iter().map(|(_, a)| a).sum();
    let gamma = cfg.ppo.gamma;
    let fronts = (0..=k)
        .map(|j| {
            let policies: Vec<PolicyParams<f64>> = traces.iter().map(|(t, _)| t[j].clone()).collect();
            build_front(spec, &policies, &prefs, gamma, cfg.eval_episodes, eval_rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let policies: Vec<PolicyParams<f64>> = traces.into_iter().map(|(mut t, _)| t.pop().expect("non-empty")).collect();
    for (i, p) in policies.iter().enumerate() {
        save_policy(p, &out.join("policies").join(format!("meta_{i:03}.ckpt")))?;
    }
    Ok(MetaPhase {
        state,
        preferences: prefs,
        fronts,
        policies,
        finetune_episodes: ft_counter.get(),
        retries,
    })
}

fn ra_phase(cfg: &ExperimentConfig, spec: &EnvSpec, rng: &RngStream, eval_rng: &RngStream) -> Result<RaPhase> {
    let prefs = front_preferences(spec.num_objectives, cfg.meta.preference_count)?;
    let t = ra_iterations(cfg);
    let counter = EpisodeCounter::new();
    let trained = run_ra(spec, &prefs, t, &cfg.ppo, &cfg.scalarization, &cfg.network, &rng.child(0), &counter)?;
    let policies: Vec<PolicyParams<f64>> = trained.iter().map(|r| r.policy.clone()).collect();
    let mut archive = build_front(spec, &policies, &prefs, cfg.ppo.gamma, cfg.eval_episodes, eval_rng)?;
    let mut failed = 0;
    for (entry, r) in archive.entries.iter_mut().zip(&trained) {
        if r.failed() {
            entry.valid = false;
            failed += 1;
        }
    }
    archive.refresh_dominance();
    for (i, p) in policies.iter().enumerate() {
        save_policy(p, &cfg.output.join("policies").join(format!("ra_{i:03}.ckpt")))?;
    }
    Ok(RaPhase {
        archive,
        policies,
        episodes: counter.get(),
        iterations: t,
        failed,
    })
}
