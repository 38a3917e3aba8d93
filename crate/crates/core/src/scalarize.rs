//! Preference vectors and scalarization functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{dot, Real};
use crate::rng::RngStream;

/// Tolerance on `sum(weights) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Non-negative weights over the objectives, summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceVector<T>(Vec<T>);

impl<T: Real> PreferenceVector<T> {
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("empty preference vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::InvalidInput(format!(
                "preference weights must be finite and non-negative: {weights:?}"
            )));
        }
        let sum: T = weights.iter().copied().sum();
        if (sum - T::one()).abs().as_f64() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!(
                "preference weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    /// Divides by the sum; fails if the input is not a non-negative,
    /// non-zero vector.
    pub fn normalized(weights: Vec<T>) -> Result<Self> {
        let sum: T = weights.iter().copied().sum();
        if !(sum > T::zero()) || weights.iter().any(|w| *w < T::zero()) {
            return Err(Error::InvalidInput(format!("cannot normalise {weights:?}")));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn one_hot(q: usize, k: usize) -> Self {
        let mut w = vec![T::zero(); q];
        w[k] = T::one();
        Self(w)
    }

    pub fn weights(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarizationKind {
    WeightedSum,
    Chebyshev,
}

/// Where the Chebyshev utopian point comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Utopian {
    /// Componentwise maximum over the current batch plus `margin`.
    BatchMaxPlusMargin { margin: f64 },
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarizationSpec {
    pub kind: ScalarizationKind,
    /// Chebyshev exponent, `>= 1`; `f64::INFINITY` selects the max-norm.
    pub p: f64,
    pub utopian: Utopian,
}

pub const DEFAULT_UTOPIAN_MARGIN: f64 = 1e-3;

impl Default for ScalarizationSpec {
    fn default() -> Self {
        Self::weighted_sum()
    }
}

impl ScalarizationSpec {
    pub fn weighted_sum() -> Self {
        Self {
            kind: ScalarizationKind::WeightedSum,
            p: 1.0,
            utopian: Utopian::BatchMaxPlusMargin {
                margin: DEFAULT_UTOPIAN_MARGIN,
            },
        }
    }

    pub fn chebyshev(p: f64, utopian: Utopian) -> Self {
        Self {
            kind: ScalarizationKind::Chebyshev,
            p,
            utopian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) {
            return Err(Error::InvalidInput(format!("chebyshev exponent p = {} < 1", self.p)));
        }
        match &self.utopian {
            Utopian::BatchMaxPlusMargin { margin } if !(margin.is_finite() && *margin >= 0.0) => {
                Err(Error::InvalidInput(format!("utopian margin {margin} must be >= 0")))
            }
            Utopian::Fixed(z)
                if self.kind == ScalarizationKind::Chebyshev && z.iter().any(|v| !v.is_finite()) =>
            {
                Err(Error::InvalidInput("fixed utopian point must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Utopian point for a set of vectors under this spec.
    pub fn utopian_point<'a, T: Real>(
        &self,
        q: usize,
        vectors: impl IntoIterator<Item = &'a [T]>,
    ) -> Result<Vec<T>> {
        match &self.utopian {
            Utopian::Fixed(z) => {
                if z.len() != q {
                    return Err(Error::InvalidInput(format!(
                        "fixed utopian point has {} entries, expected {q}",
                        z.len()
                    )));
                }
                Ok(z.iter().map(|&v| T::lit(v)).collect())
            }
            Utopian::BatchMaxPlusMargin { margin } => {
                let mut z = vec![T::neg_infinity(); q];
                for v in vectors {
                    z.iter_mut().zip(v).for_each(|(z, &x)| *z = z.max(x));
                }
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("utopian point of an empty batch".into()));
                }
                Ok(z.into_iter().map(|v| v + T::lit(*margin)).collect())
            }
        }
    }

    /// Scalarizes `v`. `z` is only used by the Chebyshev kind.
    pub fn apply<T: Real>(&self, w: &PreferenceVector<T>, v: &[T], z: &[T]) -> Result<T> {
        match self.kind {
            ScalarizationKind::WeightedSum => weighted_sum(w, v),
            ScalarizationKind::Chebyshev => chebyshev(self, w, v, z),
        }
    }
}

fn check_len<T>(w: &PreferenceVector<T>, v: &[T]) -> Result<()> {
    if w.0.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "preference has {} weights but vector has {} entries",
            w.0.len(),
            v.len()
        )));
    }
    Ok(())
}

pub fn weighted_sum<T: Real>(w: &PreferenceVector<T>, v: &[T]) -> Result<T> {
    check_len(w, v)?;
    Ok(dot(&w.0, v))
}

/// Negated weighted `L_p` distance to the utopian point `z`, so larger is
/// better and the maximum (zero) is attained at `v = z`.
pub fn chebyshev<T: Real>(
    spec: &ScalarizationSpec,
    w: &PreferenceVector<T>,
    v: &[T],
    z: &[T],
) -> Result<T> {
    check_len(w, v)?;
    if z.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "utopian point has {} entries, expected {}",
            z.len(),
            v.len()
        )));
    }
    let terms = w.0.iter().zip(v).zip(z).map(|((&wi, &vi), &zi)| (wi, (vi - zi).abs()));
    if spec.p.is_infinite() {
        return Ok(-terms.fold(T::zero(), |m, (wi, d)| m.max(wi * d)));
    }
    if spec.p == 1.0 {
        return Ok(-terms.fold(T::zero(), |acc, (wi, d)| acc + wi * d));
    }
    let p = T::lit(spec.p);
    let sum = terms.fold(T::zero(), |acc, (wi, d)| acc + wi * d.powf(p));
    Ok(-sum.powf(T::one() / p))
}

/// Uniform draw from the simplex: normalised unit-exponential variates.
pub fn sample_preference<T: Real>(q: usize, rng: &mut RngStream) -> Result<PreferenceVector<T>> {
    if q < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 objectives, got {q}")));
    }
    let draws: Vec<T> = (0..q).map(|_| rng.exp1::<T>()).collect();
    let sum: T = draws.iter().copied().sum();
    Ok(PreferenceVector(draws.into_iter().map(|d| d / sum).collect()))
}

/// Evenly spread weights for the radial baseline.
///
/// Two objectives: `(k / (n-1), 1 - k / (n-1))` for `k = 0..n`. More
/// objectives: compositions of the smallest granularity `m` whose simplex
/// lattice has at least `n` points, in ascending lexicographic order, first
/// `n` kept.
pub fn radial_weights<T: Real>(q: usize, n: usize) -> Result<Vec<PreferenceVector<T>>> {
    if n < 2 || q < 2 {
        return Err(Error::InvalidInput(format!("radial weights need q >= 2 and n >= 2 (q = {q}, n = {n})")));
    }
    if q == 2 {
        let denom = T::lit((n - 1) as f64);
        return Ok((0..n)
            .map(|k| {
                let a = T::lit(k as f64) / denom;
                PreferenceVector(vec![a, T::one() - a])
            })
            .collect());
    }
    let mut m = 1;
    while lattice_size(m, q) < n {
        m += 1;
    }
    let mut out = Vec::with_capacity(n);
    let mut parts = vec![0usize; q];
    compositions(m, 0, &mut parts, &mut |c| {
        if out.len() < n {
            let denom = T::lit(m as f64);
            out.push(PreferenceVector(c.iter().map(|&k| T::lit(k as f64) / denom).collect()));
        }
    });
    Ok(out)
}

fn lattice_size(m: usize, q: usize) -> usize {
    // C(m + q - 1, q - 1)
    let (n, k) = (m + q - 1, q - 1);
    (1..=k).fold(1usize, |acc, i| acc * (n - k + i) / i)
}

fn compositions(remaining: usize, idx: usize, parts: &mut [usize], emit: &mut impl FnMut(&[usize])) {
    if idx == parts.len() - 1 {
        parts[idx] = remaining;
        emit(parts);
        return;
    }
    for k in 0..=remaining {
        parts[idx] = k;
        compositions(remaining - k, idx + 1, parts, emit);
    }
}
