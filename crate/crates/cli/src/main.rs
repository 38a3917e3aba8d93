use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use metamorl::envs::EnvId;
use metamorl::harness::artifacts::fmt_float;
use metamorl::harness::run::{front_hypervolume, front_preferences, ra_iterations};
use metamorl::harness::{
    export_front_csv, finetune_run, import_front_csv, load_meta_state, load_policy, ra_run, run_experiment_with,
    train_meta_run, ExperimentConfig, Overrides, RunOptions,
};
use metamorl::meta::build_front;
use metamorl::pareto::{reference_point, ParetoArchive, REFERENCE_MARGIN};
use metamorl::scalarize::PreferenceVector;
use metamorl::{Error, RngStream};

#[derive(Parser)]
#[command(name = "metamorl", version, about = "Meta-learned Pareto fronts for multi-objective RL")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// convex_bandit, concave_bandit, point_reacher or mo_drive.
    #[arg(long, global = true)]
    env: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full experiment as configured (meta, ra or both).
    Run {
        /// Continue meta-training from a meta-state checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Meta-training only.
    TrainMeta {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fine-tune a trained meta-state into a front.
    Finetune {
        /// Meta-state checkpoint; defaults to the run directory's final one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the radial-weights baseline.
    RunRa,
    /// Dominance and hypervolume of an archive (JSON) or front CSV.
    Pareto {
        input: PathBuf,
        /// Where to write the front CSV; defaults to `<out>/front.csv` when
        /// `--out` is given.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Hypervolume of the valid points of a front CSV.
    Hypervolume {
        input: PathBuf,
        /// Comma-separated reference point; defaults to the nadir of the
        /// points minus a small margin.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        reference: Option<Vec<f64>>,
    },
    /// Evaluate a policy checkpoint.
    Eval {
        policy: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(2),
                Some(Error::NumericalAbort { .. }) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn experiment(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let env = match &cli.env {
        Some(s) => Some(s.parse::<EnvId>().map_err(|e| Error::Config(vec![format!("env: {e}")]))?),
        None => None,
    };
    let overrides = Overrides {
        env,
        seed: cli.seed,
        output: cli.out.clone(),
    };
    Ok(match &cli.config {
        Some(path) => ExperimentConfig::load(path, &overrides)?,
        None => ExperimentConfig::from_overrides(&overrides)?,
    })
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Run { resume } => {
            let cfg = experiment(&cli)?;
            let summary = run_experiment_with(&cfg, &RunOptions { resume: resume.clone() })?;
            if let Some(m) = &summary.meta {
                report("meta", &m.archive, m.episodes);
            }
            if let Some(r) = &summary.ra {
                report("ra", &r.archive, r.episodes);
            }
            println!("artifacts in {}", summary.output.display());
        }
        Command::TrainMeta { resume } => {
            let cfg = experiment(&cli)?;
            let state = train_meta_run(&cfg, &RunOptions { resume: resume.clone() })?;
            println!(
                "meta-trained {} iterations, {} episodes; checkpoints in {}",
                state.next_iteration,
                state.episodes,
                cfg.output.join("checkpoints").display()
            );
        }
        Command::Finetune { checkpoint } => {
            let cfg = experiment(&cli)?;
            let path = checkpoint
                .clone()
                .unwrap_or_else(|| cfg.output.join("checkpoints").join("meta_final.ckpt"));
            let state = load_meta_state(&path)?;
            let archive = finetune_run(&cfg, state)?;
            report("meta", &archive, cfg.meta.finetune_episodes(&cfg.ppo));
        }
        Command::RunRa => {
            let cfg = experiment(&cli)?;
            let archive = ra_run(&cfg)?;
            let episodes = ra_iterations(&cfg) * cfg.meta.preference_count * cfg.ppo.episodes_per_iteration;
            report("ra", &archive, episodes as u64);
        }
        Command::Pareto { input, csv } => {
            let mut archive = read_archive(input)?;
            archive.refresh_dominance();
            let points = archive.valid_points();
            let q = archive.entries.first().map_or(2, |e| e.mean_return.len());
            println!("entries {}", archive.entries.len());
            println!("valid {}", archive.valid_count());
            println!("non_dominated {}", archive.non_dominated_count());
            if !points.is_empty() {
                let reference = reference_point(&points, REFERENCE_MARGIN)?;
                println!("hypervolume {}", fmt_float(front_hypervolume(&points, &reference)?));
                println!("reference {}", join(&reference));
            }
            let target = csv.clone().or_else(|| cli.out.as_ref().map(|d| d.join("front.csv")));
            if let Some(path) = target {
                export_front_csv(&archive, q, &path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Hypervolume { input, reference } => {
            let archive = import_front_csv(input)?;
            let points = archive.valid_points();
            if points.is_empty() {
                bail!("{} has no valid points", input.display());
            }
            let reference = match reference {
                Some(r) => r.clone(),
                None => reference_point(&points, REFERENCE_MARGIN)?,
            };
            println!("{}", fmt_float(front_hypervolume(&points, &reference)?));
        }
        Command::Eval { policy, episodes } => {
            let cfg = experiment(&cli)?;
            let spec = cfg.spec();
            let params = load_policy::<f64>(policy)?;
            let w: PreferenceVector<f64> = front_preferences(spec.num_objectives, 1)?.remove(0);
            let n = episodes.unwrap_or(cfg.eval_episodes);
            let front = build_front(&spec, &[params], &[w], cfg.ppo.gamma, n, &RngStream::new(cfg.seed).child(2))?;
            let e = &front.entries[0];
            println!("episodes {n}");
            println!("mean_return {}", join(&e.mean_return));
            println!("valid {}", e.valid);
        }
    }
    Ok(())
}

fn read_archive(path: &Path) -> anyhow::Result<ParetoArchive<f64>> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
        serde_json::from_str(&text).with_context(|| format!("{}: not an archive", path.display()))
    } else {
        Ok(import_front_csv(path)?)
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_float(x)).collect::<Vec<_>>().join(",")
}

fn report(name: &str, archive: &ParetoArchive<f64>, episodes: u64) {
    println!(
        "{name}: {} policies, {} valid, {} non-dominated, hypervolume {}, episodes {episodes}",
        archive.entries.len(),
        archive.valid_count(),
        archive.non_dominated_count(),
        archive.hypervolume.map_or_else(|| "n/a".into(), fmt_float),
    );
}
