//! Diagonal-Gaussian policy head with a state-independent log standard
//! deviation, and the vector-output value network.

use crate::error::{Error, Result};
use crate::nnet::mlp::{Activation, MlpGrad, MlpParams};
use crate::real::{all_finite, Real};
use crate::rng::RngStream;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const LOG_STD_INIT: f64 = -0.5;
/// Scale of the final policy layer at initialisation (near-zero mean).
pub const POLICY_OUTPUT_GAIN: f64 = 0.01;

#[inline]
fn half_log_two_pi<T: Real>() -> T {
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T> {
    pub mlp: MlpParams<T>,
    pub log_std: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGrad<T> {
    pub mlp: MlpGrad<T>,
    pub log_std: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueParams<T> {
    pub mlp: MlpParams<T>,
}

impl<T: Real> PolicyParams<T> {
    pub fn new(mlp: MlpParams<T>, log_std: Vec<T>) -> Result<Self> {
        if mlp.output_dim() != log_std.len() {
            return Err(Error::InvalidInput(format!(
                "policy network outputs {} means but log_std has {} entries",
                mlp.output_dim(),
                log_std.len()
            )));
        }
        if !all_finite(&log_std) {
            return Err(Error::InvalidInput("non-finite log_std".into()));
        }
        Ok(Self { mlp, log_std })
    }

    /// Randomly initialised policy for `state_dim -> hidden... -> action_dim`.
    pub fn init(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let sizes = layer_sizes(state_dim, hidden, action_dim);
        let mlp = MlpParams::init_orthogonal(&sizes, activation, POLICY_OUTPUT_GAIN, rng)?;
        Ok(Self {
            mlp,
            log_std: vec![T::lit(LOG_STD_INIT); action_dim],
        })
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn state_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn mean(&self, state: &[T]) -> Result<Vec<T>> {
        self.mlp.forward(state)
    }

    pub fn std(&self) -> Vec<T> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, state: &[T], action: &[T]) -> Result<T> {
        if action.len() != self.action_dim() {
            return Err(Error::InvalidInput(format!(
                "action has length {}, expected {}",
                action.len(),
                self.action_dim()
            )));
        }
        if !all_finite(state) || !all_finite(action) {
            return Err(Error::InvalidInput("non-finite state or action".into()));
        }
        let mu = self.mean(state)?;
        Ok(diag_gaussian_log_prob(&mu, &self.log_std, action))
    }

    /// `mean(state) + exp(log_std) * eps`, `eps ~ N(0, I)` from `rng`.
    pub fn sample(&self, state: &[T], rng: &mut RngStream) -> Result<Vec<T>> {
        let mu = self.mean(state)?;
        Ok(mu
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &l)| m + l.exp() * rng.normal::<T>())
            .collect())
    }

    /// `KL(self || other)` between the two action distributions at `state`.
    pub fn kl(&self, other: &Self, state: &[T]) -> Result<T> {
        if self.action_dim() != other.action_dim() {
            return Err(Error::InvalidInput("policies differ in action dimension".into()));
        }
        let mp = self.mean(state)?;
        let mq = other.mean(state)?;
        Ok(diag_gaussian_kl(&mp, &self.log_std, &mq, &other.log_std))
    }

    pub fn clamp_log_std(&mut self) {
        let (lo, hi) = (T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        self.log_std.iter_mut().for_each(|l| *l = l.max(lo).min(hi));
    }

    /// `self += step * grad`, then re-clamp `log_std`.
    pub fn apply(&mut self, grad: &PolicyGrad<T>, step: T) {
        self.mlp.apply(&grad.mlp, step);
        self.log_std
            .iter_mut()
            .zip(&grad.log_std)
            .for_each(|(l, &g)| *l = *l + step * g);
        self.clamp_log_std();
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params() + self.log_std.len()
    }

    /// MLP parameters followed by `log_std`.
    pub fn flat(&self) -> Vec<T> {
        let mut v = self.mlp.flat();
        v.extend_from_slice(&self.log_std);
        v
    }

    /// Inverse of [`flat`](Self::flat); does not clamp.
    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        let n = self.mlp.num_params();
        if values.len() != n + self.log_std.len() {
            return Err(Error::InvalidInput("flat policy parameter length mismatch".into()));
        }
        self.mlp.set_flat(&values[..n])?;
        self.log_std.copy_from_slice(&values[n..]);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.mlp.is_finite() && all_finite(&self.log_std)
    }
}

impl<T: Real> PolicyGrad<T> {
    pub fn zeros_like(policy: &PolicyParams<T>) -> Self {
        Self {
            mlp: MlpGrad::zeros_like(&policy.mlp),
            log_std: vec![T::zero(); policy.log_std.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.mlp.add_assign(&other.mlp);
        self.log_std
            .iter_mut()
            .zip(&other.log_std)
            .for_each(|(a, &b)| *a = *a + b);
    }

    pub fn scale(&mut self, c: T) {
        self.mlp.scale(c);
        self.log_std.iter_mut().for_each(|v| *v = *v * c);
    }

    pub fn norm_sq(&self) -> T {
        self.mlp.norm_sq() + self.log_std.iter().fold(T::zero(), |a, &v| a + v * v)
    }

    pub fn is_finite(&self) -> bool {
        self.mlp.is_finite() && all_finite(&self.log_std)
    }

    pub fn flat(&self) -> Vec<T> {
        let mut v = self.mlp.flat();
        v.extend_from_slice(&self.log_std);
        v
    }
}

impl<T: Real> ValueParams<T> {
    pub fn init(
        state_dim: usize,
        num_objectives: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let sizes = layer_sizes(state_dim, hidden, num_objectives);
        Ok(Self {
            mlp: MlpParams::init_orthogonal(&sizes, activation, 1.0, rng)?,
        })
    }

    pub fn num_objectives(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn predict(&self, state: &[T]) -> Result<Vec<T>> {
        self.mlp.forward(state)
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

pub fn diag_gaussian_log_prob<T: Real>(mean: &[T], log_std: &[T], action: &[T]) -> T {
    let half = T::lit(0.5);
    mean.iter()
        .zip(log_std)
        .zip(action)
        .fold(T::zero(), |acc, ((&m, &l), &a)| {
            let z = (a - m) / l.exp();
            acc - half * z * z - l - half_log_two_pi::<T>()
        })
}

/// `KL(N(mp, e^lp) || N(mq, e^lq))` summed over independent dimensions.
pub fn diag_gaussian_kl<T: Real>(mp: &[T], lp: &[T], mq: &[T], lq: &[T]) -> T {
    let half = T::lit(0.5);
    mp.iter()
        .zip(lp)
        .zip(mq.iter().zip(lq))
        .fold(T::zero(), |acc, ((&mp, &lp), (&mq, &lq))| {
            let var_p = (lp + lp).exp();
            let var_q = (lq + lq).exp();
            let d = mp - mq;
            acc + (lq - lp) + (var_p + d * d) / (var_q + var_q) - half
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bias_policy(mean: f64, log_std: f64) -> PolicyParams<f64> {
        let mlp = MlpParams::from_parts(vec![1, 1], vec![vec![0.0]], vec![vec![mean]], Activation::Tanh)
            .unwrap();
        PolicyParams::new(mlp, vec![log_std]).unwrap()
    }

    #[test]
    fn log_prob_at_mode_of_standard_normal() {
        let p = bias_policy(0.3, 0.0);
        let lp = p.log_prob(&[0.0], &[0.3]).unwrap();
        assert!((lp - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn log_prob_one_sigma_away() {
        let p = bias_policy(0.0, 0.0);
        let lp = p.log_prob(&[0.0], &[1.0]).unwrap();
        assert!((lp - (-1.418_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn log_prob_integrates_to_one() {
        // Trapezoid rule on [-10, 10] for N(0.4, e^{-0.3}).
        let p = bias_policy(0.4, -0.3);
        let n = 200_000;
        let (lo, hi) = (-10.0, 10.0);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let a = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * p.log_prob(&[0.0], &[a]).unwrap().exp();
        }
        assert!((total * h - 1.0).abs() < 1e-3);
    }

    #[test]
    fn log_prob_rejects_non_finite() {
        let p = bias_policy(0.0, 0.0);
        assert!(matches!(p.log_prob(&[0.0], &[f64::NAN]), Err(Error::InvalidInput(_))));
        assert!(matches!(p.log_prob(&[0.0], &[1.0, 2.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sample_at_floor_std_stays_near_mean() {
        let p = bias_policy(0.7, LOG_STD_MIN);
        let mut rng = RngStream::new(5);
        for _ in 0..10_000 {
            let a = p.sample(&[0.0], &mut rng).unwrap()[0];
            assert!((a - 0.7).abs() < 0.03);
        }
    }

    #[test]
    fn sample_is_reproducible_on_cloned_streams() {
        let p = bias_policy(0.1, -0.5);
        let mut a = RngStream::new(77).child(2);
        let mut b = a.clone();
        assert_eq!(p.sample(&[0.0], &mut a).unwrap(), p.sample(&[0.0], &mut b).unwrap());
    }

    #[test]
    fn sample_mean_matches_policy_mean() {
        let p = bias_policy(-0.25, 0.2);
        let mut rng = RngStream::new(1234);
        let n = 100_000;
        let mean = (0..n).map(|_| p.sample(&[0.0], &mut rng).unwrap()[0]).sum::<f64>() / n as f64;
        let sigma = 0.2f64.exp();
        assert!((mean + 0.25).abs() < 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn kl_closed_form_cases() {
        let p = bias_policy(0.0, 0.0);
        let q = bias_policy(1.0, 0.0);
        assert_eq!(p.kl(&p, &[0.0]).unwrap(), 0.0);
        assert!((p.kl(&q, &[0.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut init = RngStream::new(21);
        let p = PolicyParams::<f64>::init(2, 2, &[4], Activation::Tanh, &mut init).unwrap();
        let mut q = p.clone();
        q.mlp.biases[1] = vec![0.3, -0.2];
        q.log_std = vec![-0.2, -0.9];
        let s = [0.4, -1.0];
        let exact = p.kl(&q, &s).unwrap();
        let mut rng = RngStream::new(99);
        let n = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let a = p.sample(&s, &mut rng).unwrap();
            let d = p.log_prob(&s, &a).unwrap() - q.log_prob(&s, &a).unwrap();
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "exact {exact} mc {mean} se {se}");
    }

    #[test]
    fn init_shapes_and_log_std() {
        let mut rng = RngStream::new(0);
        let p = PolicyParams::<f64>::init(6, 2, &[32, 32], Activation::Tanh, &mut rng).unwrap();
        assert_eq!(p.mlp.layer_sizes, vec![6, 32, 32, 2]);
        assert_eq!(p.log_std, vec![-0.5, -0.5]);
        let v = ValueParams::<f64>::init(6, 3, &[32, 32], Activation::Tanh, &mut rng).unwrap();
        assert_eq!(v.num_objectives(), 3);
    }

    #[test]
    fn apply_clamps_log_std() {
        let mut p = bias_policy(0.0, 0.0);
        let mut g = PolicyGrad::zeros_like(&p);
        g.log_std[0] = -100.0;
        p.apply(&g, 1.0);
        assert_eq!(p.log_std[0], LOG_STD_MIN);
        g.log_std[0] = 100.0;
        p.apply(&g, 1.0);
        assert_eq!(p.log_std[0], LOG_STD_MAX);
    }
}
