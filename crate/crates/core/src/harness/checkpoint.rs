//! Line-oriented text checkpoints. Floats are written with 17 significant
//! digits so every `f64` (and `f32`) reads back bit-exactly; every array
//! is preceded by its length, and the file must close with `end`.
//!
//! ```text
//! metamorl-checkpoint
//! format_version 1
//! kind policy
//! mlp tanh 3 6 32 2
//! weights 0 192
//! 1.2345678901234567e-1 ...
//! biases 0 32
//! ...
//! log_std 2
//! -5.0000000000000000e-1 -5.0000000000000000e-1
//! end
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::artifacts::write_atomic;
use crate::meta::{HistoryRow, MetaState};
use crate::nnet::{Activation, MlpParams, PolicyParams, ValueParams};
use crate::real::Real;

const MAGIC: &str = "metamorl-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

struct Encoder {
    out: String,
}

impl Encoder {
    fn new(kind: &str) -> Self {
        Self {
            out: format!("{MAGIC}\nformat_version {FORMAT_VERSION}\nkind {kind}\n"),
        }
    }

    fn line(&mut self, s: &str) {
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn floats<T: Real>(&mut self, xs: &[T]) {
        let s: Vec<String> = xs.iter().map(|x| float(x.as_f64())).collect();
        self.line(&s.join(" "));
    }

    fn mlp<T: Real>(&mut self, mlp: &MlpParams<T>) {
        let sizes: Vec<String> = mlp.layer_sizes.iter().map(|s| s.to_string()).collect();
        self.line(&format!("mlp {} {} {}", mlp.activation.name(), sizes.len(), sizes.join(" ")));
        for (l, (w, b)) in mlp.weights.iter().zip(&mlp.biases).enumerate() {
            self.line(&format!("weights {l} {}", w.len()));
            self.floats(w);
            self.line(&format!("biases {l} {}", b.len()));
            self.floats(b);
        }
    }

    fn policy<T: Real>(&mut self, p: &PolicyParams<T>) {
        self.mlp(&p.mlp);
        self.line(&format!("log_std {}", p.log_std.len()));
        self.floats(&p.log_std);
    }

    fn finish(mut self) -> String {
        self.line("end");
        self.out
    }
}

struct Decoder<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> Decoder<'a> {
    fn new(text: &'a str, kind: &str) -> std::result::Result<Self, String> {
        let mut d = Self {
            lines: text.lines().enumerate(),
            line_no: 0,
        };
        if d.next()? != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version: u32 = d.keyed("format_version", 1)?[0].parse().map_err(|_| d.err("bad version"))?;
        if version != FORMAT_VERSION {
            return Err(format!("format version {version}, this build reads {FORMAT_VERSION}"));
        }
        let found = d.keyed("kind", 1)?[0];
        if found != kind {
            return Err(format!("holds a {found}, expected a {kind}"));
        }
        Ok(d)
    }

    fn err(&self, msg: &str) -> String {
        format!("line {}: {msg}", self.line_no)
    }

    fn next(&mut self) -> std::result::Result<&'a str, String> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line_no = i + 1;
                Ok(l)
            }
            None => Err(format!("truncated after line {}", self.line_no)),
        }
    }

    /// A line `key a b c ...` with at least `min` values after the key.
    fn keyed(&mut self, key: &str, min: usize) -> std::result::Result<Vec<&'a str>, String> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(&format!("expected `{key}`")));
        }
        let rest: Vec<&str> = parts.collect();
        if rest.len() < min {
            return Err(self.err(&format!("`{key}` needs {min} values")));
        }
        Ok(rest)
    }

    fn count(&self, s: &str) -> std::result::Result<usize, String> {
        s.parse().map_err(|_| self.err(&format!("bad count {s:?}")))
    }

    fn floats<T: Real>(&mut self, n: usize) -> std::result::Result<Vec<T>, String> {
        let line = self.next()?;
        let xs = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map(T::lit))
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|_| self.err("bad number"))?;
        if xs.len() != n {
            return Err(self.err(&format!("expected {n} numbers, found {}", xs.len())));
        }
        Ok(xs)
    }

    /// `key n` followed by a line of `n` floats.
    fn array<T: Real>(&mut self, key: &str) -> std::result::Result<Vec<T>, String> {
        let n = self.keyed(key, 1)?[0];
        let n = self.count(n)?;
        self.floats(n)
    }

    fn mlp<T: Real>(&mut self) -> std::result::Result<MlpParams<T>, String> {
        let head = self.keyed("mlp", 2)?;
        let activation = Activation::parse(head[0]).ok_or_else(|| self.err("unknown activation"))?;
        let n = self.count(head[1])?;
        if head.len() != n + 2 || n < 2 {
            return Err(self.err("layer size list does not match its count"));
        }
        let sizes = head[2..].iter().map(|s| self.count(s)).collect::<std::result::Result<Vec<_>, _>>()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..n - 1 {
            let w = self.keyed("weights", 2)?;
            if self.count(w[0])? != l {
                return Err(self.err("layers out of order"));
            }
            let len = self.count(w[1])?;
            if len != sizes[l] * sizes[l + 1] {
                return Err(self.err("weight shape does not match layer sizes"));
            }
            weights.push(self.floats(len)?);
            let b = self.keyed("biases", 2)?;
            let len = self.count(b[1])?;
            if self.count(b[0])? != l || len != sizes[l + 1] {
                return Err(self.err("bias shape does not match layer sizes"));
            }
            biases.push(self.floats(len)?);
        }
        MlpParams::from_parts(sizes, weights, biases, activation).map_err(|e| self.err(&e.to_string()))
    }

    fn policy<T: Real>(&mut self) -> std::result::Result<PolicyParams<T>, String> {
        let mlp = self.mlp()?;
        let log_std = self.array("log_std")?;
        PolicyParams::new(mlp, log_std).map_err(|e| self.err(&e.to_string()))
    }

    fn finish(mut self) -> std::result::Result<(), String> {
        if self.next()? != "end" {
            return Err(self.err("expected `end`"));
        }
        match self.lines.find(|(_, l)| !l.trim().is_empty()) {
            Some((i, _)) => Err(format!("line {}: trailing content after `end`", i + 1)),
            None => Ok(()),
        }
    }
}

pub fn encode_policy<T: Real>(policy: &PolicyParams<T>) -> String {
    let mut e = Encoder::new("policy");
    e.policy(policy);
    e.finish()
}

pub fn decode_policy<T: Real>(text: &str) -> std::result::Result<PolicyParams<T>, String> {
    let mut d = Decoder::new(text, "policy")?;
    let p = d.policy()?;
    d.finish()?;
    Ok(p)
}

pub fn encode_value<T: Real>(value: &ValueParams<T>) -> String {
    let mut e = Encoder::new("value");
    e.mlp(&value.mlp);
    e.finish()
}

pub fn decode_value<T: Real>(text: &str) -> std::result::Result<ValueParams<T>, String> {
    let mut d = Decoder::new(text, "value")?;
    let mlp = d.mlp()?;
    d.finish()?;
    Ok(ValueParams { mlp })
}

/// Meta-policy, value network, progress and the full history.
pub fn encode_meta_state<T: Real>(state: &MetaState<T>) -> String {
    let mut e = Encoder::new("meta_state");
    e.line(&format!("next_iteration {}", state.next_iteration));
    e.line(&format!("episodes {}", state.episodes));
    e.policy(&state.policy);
    e.mlp(&state.value.mlp);
    let q = state.history.first().map_or(0, |r| r.mean_return.len());
    e.line(&format!("history {} {q}", state.history.len()));
    for r in &state.history {
        let mut fields = vec![
            r.iteration.to_string(),
            r.episodes.to_string(),
            r.adapt_failures.to_string(),
            u8::from(r.skipped).to_string(),
            float(r.kl),
            float(r.policy_loss),
            float(r.value_loss),
        ];
        fields.extend(r.mean_return.iter().map(|&x| float(x)));
        e.line(&fields.join(" "));
    }
    e.finish()
}

pub fn decode_meta_state<T: Real>(text: &str) -> std::result::Result<MetaState<T>, String> {
    let mut d = Decoder::new(text, "meta_state")?;
    let next_iteration = d.keyed("next_iteration", 1)?[0];
    let next_iteration = d.count(next_iteration)?;
    let episodes = d.keyed("episodes", 1)?[0];
    let episodes: u64 = episodes.parse().map_err(|_| d.err("bad episode count"))?;
    let policy = d.policy()?;
    let value = ValueParams { mlp: d.mlp()? };
    let head = d.keyed("history", 2)?;
    let (rows, q) = (d.count(head[0])?, d.count(head[1])?);
    let mut history = Vec::with_capacity(rows);
    for _ in 0..rows {
        let line = d.next()?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 + q {
            return Err(d.err("history row has the wrong number of fields"));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| d.err("bad integer"));
        let num = |s: &str| s.parse::<f64>().map_err(|_| d.err("bad number"));
        history.push(HistoryRow {
            iteration: int(f[0])? as usize,
            episodes: int(f[1])?,
            adapt_failures: int(f[2])? as usize,
            skipped: int(f[3])? != 0,
            kl: num(f[4])?,
            policy_loss: num(f[5])?,
            value_loss: num(f[6])?,
            mean_return: f[7..].iter().map(|s| num(s)).collect::<std::result::Result<_, _>>()?,
        });
    }
    d.finish()?;
    if history.len() != next_iteration {
        return Err(format!(
            "history has {} rows but next_iteration is {next_iteration}",
            history.len()
        ));
    }
    Ok(MetaState {
        policy,
        value,
        next_iteration,
        episodes,
        history,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn checkpoint_error(path: &Path) -> impl FnOnce(String) -> Error + '_ {
    move |reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    }
}

pub fn save_policy<T: Real>(policy: &PolicyParams<T>, path: &Path) -> Result<()> {
    write_atomic(path, encode_policy(policy).as_bytes())
}

pub fn load_policy<T: Real>(path: &Path) -> Result<PolicyParams<T>> {
    decode_policy(&read(path)?).map_err(checkpoint_error(path))
}

pub fn save_value<T: Real>(value: &ValueParams<T>, path: &Path) -> Result<()> {
    write_atomic(path, encode_value(value).as_bytes())
}

pub fn load_value<T: Real>(path: &Path) -> Result<ValueParams<T>> {
    decode_value(&read(path)?).map_err(checkpoint_error(path))
}

pub fn save_meta_state<T: Real>(state: &MetaState<T>, path: &Path) -> Result<()> {
    write_atomic(path, encode_meta_state(state).as_bytes())
}

pub fn load_meta_state<T: Real>(path: &Path) -> Result<MetaState<T>> {
    decode_meta_state(&read(path)?).map_err(checkpoint_error(path))
}
