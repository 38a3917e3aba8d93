//! Experiment configuration: TOML with dotted sections, per-environment
//! defaults, and validation that reports every offending key at once.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::envs::{EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::meta::MetaConfig;
use crate::nnet::{Activation, NetworkConfig};
use crate::rl::{LossVariant, PpoConfig};
use crate::scalarize::{ScalarizationKind, ScalarizationSpec, Utopian, DEFAULT_UTOPIAN_MARGIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Meta,
    Ra,
    Both,
}

impl Method {
    pub fn runs_meta(self) -> bool {
        matches!(self, Method::Meta | Method::Both)
    }

    pub fn runs_ra(self) -> bool {
        matches!(self, Method::Ra | Method::Both)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "meta" => Ok(Method::Meta),
            "ra" => Ok(Method::Ra),
            "both" => Ok(Method::Both),
            _ => Err(format!("unknown method {s:?} (meta, ra, both)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub seed: u64,
    pub method: Method,
    pub meta: MetaConfig,
    pub ppo: PpoConfig,
    pub scalarization: ScalarizationSpec,
    pub network: NetworkConfig,
    /// Radial-baseline iterations per weight; `None` matches the meta
    /// method's total episode budget.
    pub ra_iterations: Option<usize>,
    pub eval_episodes: usize,
    pub output: PathBuf,
}

impl ExperimentConfig {
    /// Defaults for `env`. Learning rates and meta-iteration counts differ
    /// per environment.
    pub fn defaults(env: EnvId, seed: u64) -> Self {
        let spec = EnvSpec::new(env);
        let mut ppo = PpoConfig {
            gamma: spec.default_gamma(),
            ..PpoConfig::default()
        };
        let mut meta = MetaConfig::default();
        match env {
            EnvId::ConvexBandit | EnvId::ConcaveBandit => {
                ppo.policy_lr = 1e-2;
                meta.meta_iterations = 50;
                meta.meta_lr = 1e-3;
                meta.checkpoint_every = 10;
            }
            EnvId::PointReacher | EnvId::MoDrive => {
                meta.meta_iterations = 60;
                meta.checkpoint_every = 20;
            }
        }
        Self {
            env,
            seed,
            method: Method::Both,
            meta,
            ppo,
            scalarization: ScalarizationSpec::weighted_sum(),
            network: NetworkConfig::default(),
            ra_iterations: None,
            eval_episodes: if spec.horizon == 1 { 1 } else { 10 },
            output: PathBuf::from("runs").join(env.as_str()),
        }
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec::new(self.env)
    }

    /// Reads a config file. `env`, `seed` and `output` given here take
    /// precedence over the file.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.message())]))?;
        Self::from_table(&table, overrides)
    }

    /// Defaults plus overrides only, for runs without a config file.
    pub fn from_overrides(overrides: &Overrides) -> Result<Self> {
        Self::from_table(&Table::new(), overrides)
    }

    fn from_table(table: &Table, overrides: &Overrides) -> Result<Self> {
        let mut errors = Vec::new();
        let env = match overrides.env {
            Some(env) => Some(env),
            None => match table.get("env") {
                Some(v) => parse_with(v, "env", &mut errors, |s| s.parse::<EnvId>()),
                None => {
                    errors.push("env: required (config key or --env)".into());
                    None
                }
            },
        };
        let Some(env) = env else {
            return Err(Error::Config(errors));
        };
        let mut cfg = Self::defaults(env, 0);
        let mut seed = overrides.seed;
        let mut reader = Reader { errors };

        for (key, value) in table {
            match key.as_str() {
                "env" => {}
                "seed" => {
                    let s = reader.u64(value, "seed");
                    if seed.is_none() {
                        seed = s;
                    }
                }
                "method" => reader.parsed(value, "method", &mut cfg.method),
                "eval_episodes" => reader.usize(value, "eval_episodes", &mut cfg.eval_episodes),
                "output" => {
                    if let Some(s) = reader.str(value, "output") {
                        cfg.output = PathBuf::from(s);
                    }
                }
                "ppo" => reader.section(value, "ppo", |r, k, v| apply_ppo(r, k, v, &mut cfg.ppo)),
                "meta" => reader.section(value, "meta", |r, k, v| apply_meta(r, k, v, &mut cfg.meta)),
                "network" => reader.section(value, "network", |r, k, v| apply_network(r, k, v, &mut cfg.network)),
                "scalarization" => {
                    reader.section(value, "scalarization", |r, k, v| apply_scalarization(r, k, v, &mut cfg.scalarization))
                }
                "ra" => reader.section(value, "ra", |r, k, v| match k {
                    "iterations" => {
                        let mut t = 0;
                        r.usize(v, "ra.iterations", &mut t);
                        cfg.ra_iterations = Some(t);
                        true
                    }
                    _ => false,
                }),
                other => reader.errors.push(format!("{other}: unknown key")),
            }
        }
        if let Some(out) = &overrides.output {
            cfg.output = out.clone();
        }
        match seed {
            Some(s) => cfg.seed = s,
            None => reader.errors.push("seed: required (config key or --seed)".into()),
        }
        let mut errors = reader.errors;
        errors.extend(cfg.invalid_keys());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Every out-of-range value, as `section.key: reason`.
    pub fn invalid_keys(&self) -> Vec<String> {
        let mut bad: Vec<String> = self
            .ppo
            .invalid_fields()
            .into_iter()
            .map(|k| format!("ppo.{k}: out of range"))
            .collect();
        bad.extend(self.meta.invalid_fields().into_iter().map(|k| format!("meta.{k}: out of range")));
        if let Err(e) = self.scalarization.validate() {
            bad.push(format!("scalarization: {e}"));
        }
        if let Utopian::Fixed(z) = &self.scalarization.utopian {
            let q = self.spec().num_objectives;
            if self.scalarization.kind == ScalarizationKind::Chebyshev && z.len() != q {
                bad.push(format!("scalarization.utopian: {} entries for {q} objectives", z.len()));
            }
        }
        if self.network.hidden.contains(&0) {
            bad.push("network.hidden: widths must be positive".into());
        }
        if self.eval_episodes == 0 {
            bad.push("eval_episodes: must be positive".into());
        }
        if self.ra_iterations == Some(0) {
            bad.push("ra.iterations: must be positive".into());
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.invalid_keys();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    /// The config as TOML that [`parse`](Self::parse) reads back to the
    /// same value.
    pub fn to_toml(&self) -> String {
        let f = |x: f64| {
            if x == f64::INFINITY {
                "\"inf\"".to_string()
            } else {
                format!("{x:?}")
            }
        };
        let opt = |x: Option<f64>| x.map_or_else(|| "\"none\"".to_string(), f);
        let s = &self.scalarization;
        let utopian = match &s.utopian {
            Utopian::BatchMaxPlusMargin { margin } => format!("\"batch_max\"\nutopian_margin = {}", f(*margin)),
            Utopian::Fixed(z) => format!("[{}]", z.iter().map(|&v| f(v)).collect::<Vec<_>>().join(", ")),
        };
        let kind = match s.kind {
            ScalarizationKind::WeightedSum => "weighted_sum",
            ScalarizationKind::Chebyshev => "chebyshev",
        };
        let loss = match self.ppo.loss {
            LossVariant::Clip => "clip",
            LossVariant::KlPenalty => "kl_penalty",
        };
        let method = match self.method {
            Method::Meta => "meta",
            Method::Ra => "ra",
            Method::Both => "both",
        };
        let p = &self.ppo;
        let m = &self.meta;
        let mut out = format!(
            "env = \"{}\"\nseed = {}\nmethod = \"{method}\"\neval_episodes = {}\noutput = {:?}\n",
            self.env,
            self.seed,
            self.eval_episodes,
            self.output.display().to_string(),
        );
        out += &format!(
            "\n[ppo]\nloss = \"{loss}\"\nclip_epsilon = {}\nkl_beta = {}\npolicy_lr = {}\nvalue_lr = {}\nepochs = {}\n\
             minibatch_size = {}\nepisodes_per_iteration = {}\ngamma = {}\nmax_grad_norm = {}\nmax_kl = {}\n",
            f(p.clip_epsilon),
            f(p.kl_beta),
            f(p.policy_lr),
            f(p.value_lr),
            p.epochs,
            p.minibatch_size,
            p.episodes_per_iteration,
            f(p.gamma),
            opt(p.max_grad_norm),
            opt(p.max_kl),
        );
        out += &format!(
            "\n[meta]\nnum_tasks = {}\nmeta_iterations = {}\nadaptation_steps = {}\nmeta_lr = {}\n\
             finetune_iterations = {}\nbatch_multiplier = {}\npreference_count = {}\ncheckpoint_every = {}\n",
            m.num_tasks,
            m.meta_iterations,
            m.adaptation_steps,
            f(m.meta_lr),
            m.finetune_iterations,
            m.batch_multiplier,
            m.preference_count,
            m.checkpoint_every,
        );
        out += &format!("\n[scalarization]\nkind = \"{kind}\"\np = {}\nutopian = {utopian}\n", f(s.p));
        out += &format!(
            "\n[network]\nhidden = [{}]\nactivation = \"{}\"\n",
            self.network.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(", "),
            self.network.activation.name(),
        );
        if let Some(t) = self.ra_iterations {
            out += &format!("\n[ra]\niterations = {t}\n");
        }
        out
    }
}

/// Command-line values that replace config-file entries.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub env: Option<EnvId>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

struct Reader {
    errors: Vec<String>,
}

fn parse_with<T, E: std::fmt::Display>(
    v: &Value,
    key: &str,
    errors: &mut Vec<String>,
    parse: impl FnOnce(&str) -> std::result::Result<T, E>,
) -> Option<T> {
    match v.as_str() {
        Some(s) => match parse(s) {
            Ok(x) => Some(x),
            Err(e) => {
                errors.push(format!("{key}: {e}"));
                None
            }
        },
        None => {
            errors.push(format!("{key}: expected a string"));
            None
        }
    }
}

impl Reader {
    fn section(&mut self, value: &Value, name: &str, mut apply: impl FnMut(&mut Self, &str, &Value) -> bool) {
        let Some(t) = value.as_table() else {
            self.errors.push(format!("{name}: expected a section"));
            return;
        };
        for (k, v) in t {
            if !apply(self, k, v) {
                self.errors.push(format!("{name}.{k}: unknown key"));
            }
        }
    }

    fn str<'a>(&mut self, v: &'a Value, key: &str) -> Option<&'a str> {
        let s = v.as_str();
        if s.is_none() {
            self.errors.push(format!("{key}: expected a string"));
        }
        s
    }

    fn parsed<T: FromStr>(&mut self, v: &Value, key: &str, slot: &mut T)
    where
        T::Err: std::fmt::Display,
    {
        if let Some(x) = parse_with(v, key, &mut self.errors, |s| s.parse::<T>()) {
            *slot = x;
        }
    }

    fn u64(&mut self, v: &Value, key: &str) -> Option<u64> {
        match v.as_integer() {
            Some(i) if i >= 0 => Some(i as u64),
            _ => {
                self.errors.push(format!("{key}: expected a non-negative integer"));
                None
            }
        }
    }

    fn usize(&mut self, v: &Value, key: &str, slot: &mut usize) {
        if let Some(x) = self.u64(v, key) {
            *slot = x as usize;
        }
    }

    /// Integers, floats, and the strings "inf" / "infinity".
    fn float(&mut self, v: &Value, key: &str) -> Option<f64> {
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            Value::String(s) if matches!(s.as_str(), "inf" | "infinity") => Some(f64::INFINITY),
            _ => {
                self.errors.push(format!("{key}: expected a number"));
                None
            }
        }
    }

    fn f64(&mut self, v: &Value, key: &str, slot: &mut f64) {
        if let Some(x) = self.float(v, key) {
            *slot = x;
        }
    }

    /// A number, or "none" to disable.
    fn optional(&mut self, v: &Value, key: &str, slot: &mut Option<f64>) {
        if v.as_str() == Some("none") {
            *slot = None;
        } else if let Some(x) = self.float(v, key) {
            *slot = Some(x);
        }
    }
}

fn apply_ppo(r: &mut Reader, k: &str, v: &Value, ppo: &mut PpoConfig) -> bool {
    let key = format!("ppo.{k}");
    match k {
        "loss" => {
            if let Some(s) = r.str(v, &key) {
                match s {
                    "clip" => ppo.loss = LossVariant::Clip,
                    "kl_penalty" => ppo.loss = LossVariant::KlPenalty,
                    _ => r.errors.push(format!("{key}: unknown loss {s:?} (clip, kl_penalty)")),
                }
            }
        }
        "clip_epsilon" => r.f64(v, &key, &mut ppo.clip_epsilon),
        "kl_beta" => r.f64(v, &key, &mut ppo.kl_beta),
        "policy_lr" => r.f64(v, &key, &mut ppo.policy_lr),
        "value_lr" => r.f64(v, &key, &mut ppo.value_lr),
        "epochs" => r.usize(v, &key, &mut ppo.epochs),
        "minibatch_size" => r.usize(v, &key, &mut ppo.minibatch_size),
        "episodes_per_iteration" => r.usize(v, &key, &mut ppo.episodes_per_iteration),
        "gamma" => r.f64(v, &key, &mut ppo.gamma),
        "max_grad_norm" => r.optional(v, &key, &mut ppo.max_grad_norm),
        "max_kl" => r.optional(v, &key, &mut ppo.max_kl),
        _ => return false,
    }
    true
}

fn apply_meta(r: &mut Reader, k: &str, v: &Value, meta: &mut MetaConfig) -> bool {
    let key = format!("meta.{k}");
    match k {
        "num_tasks" => r.usize(v, &key, &mut meta.num_tasks),
        "meta_iterations" => r.usize(v, &key, &mut meta.meta_iterations),
        "adaptation_steps" => r.usize(v, &key, &mut meta.adaptation_steps),
        "meta_lr" => r.f64(v, &key, &mut meta.meta_lr),
        "finetune_iterations" => r.usize(v, &key, &mut meta.finetune_iterations),
        "batch_multiplier" => r.usize(v, &key, &mut meta.batch_multiplier),
        "preference_count" => r.usize(v, &key, &mut meta.preference_count),
        "checkpoint_every" => r.usize(v, &key, &mut meta.checkpoint_every),
        _ => return false,
    }
    true
}

fn apply_network(r: &mut Reader, k: &str, v: &Value, net: &mut NetworkConfig) -> bool {
    let key = format!("network.{k}");
    match k {
        "hidden" => match v.as_array() {
            Some(items) => {
                let widths: Option<Vec<usize>> = items
                    .iter()
                    .map(|x| x.as_integer().filter(|&i| i > 0).map(|i| i as usize))
                    .collect();
                match widths {
                    Some(w) => net.hidden = w,
                    None => r.errors.push(format!("{key}: expected positive integers")),
                }
            }
            None => r.errors.push(format!("{key}: expected an array")),
        },
        "activation" => {
            if let Some(s) = r.str(v, &key) {
                match Activation::parse(s) {
                    Some(a) => net.activation = a,
                    None => r.errors.push(format!("{key}: unknown activation {s:?} (tanh, relu)")),
                }
            }
        }
        _ => return false,
    }
    true
}

fn apply_scalarization(r: &mut Reader, k: &str, v: &Value, s: &mut ScalarizationSpec) -> bool {
    let key = format!("scalarization.{k}");
    match k {
        "kind" => {
            if let Some(name) = r.str(v, &key) {
                match name {
                    "weighted_sum" => s.kind = ScalarizationKind::WeightedSum,
                    "chebyshev" => s.kind = ScalarizationKind::Chebyshev,
                    _ => r.errors.push(format!("{key}: unknown kind {name:?} (weighted_sum, chebyshev)")),
                }
            }
        }
        "p" => r.f64(v, &key, &mut s.p),
        "utopian" => match v {
            Value::String(name) if name == "batch_max" => {
                if !matches!(s.utopian, Utopian::BatchMaxPlusMargin { .. }) {
                    s.utopian = Utopian::BatchMaxPlusMargin {
                        margin: DEFAULT_UTOPIAN_MARGIN,
                    };
                }
            }
            Value::Array(items) => {
                let z: Vec<Option<f64>> = items
                    .iter()
                    .map(|x| match x {
                        Value::Float(f) => Some(*f),
                        Value::Integer(i) => Some(*i as f64),
                        _ => None,
                    })
                    .collect();
                match z.into_iter().collect::<Option<Vec<f64>>>() {
                    Some(z) => s.utopian = Utopian::Fixed(z),
                    None => r.errors.push(format!("{key}: expected numbers")),
                }
            }
            _ => r.errors.push(format!("{key}: expected \"batch_max\" or an array of numbers")),
        },
        "utopian_margin" => {
            let mut m = DEFAULT_UTOPIAN_MARGIN;
            r.f64(v, &key, &mut m);
            match &mut s.utopian {
                Utopian::BatchMaxPlusMargin { margin } => *margin = m,
                Utopian::Fixed(_) => r.errors.push(format!("{key}: only applies to utopian = \"batch_max\"")),
            }
        }
        _ => return false,
    }
    true
}
