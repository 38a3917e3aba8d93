use rayon::prelude::*;

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nnet::PolicyParams;
use crate::real::Real;
use crate::rng::RngStream;

/// Mean discounted return vector `R_0` over `episodes` episodes, acting at
/// the policy mean. Episode `e` resets from `rng.child(e)`.
pub fn evaluate_policy<T: Real>(
    spec: &EnvSpec,
    policy: &PolicyParams<T>,
    episodes: usize,
    gamma: T,
    rng: &RngStream,
) -> Result<Vec<T>> {
    if episodes == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one episode".into()));
    }
    let returns = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut stream = rng.child(e as u64);
            let mut s = spec.reset::<T>(&mut stream);
            let mut ret = vec![T::zero(); spec.num_objectives];
            let mut discount = T::one();
            loop {
                let action = policy.mean(&s.state)?;
                let step = spec.step(&s, &action)?;
                ret.iter_mut()
                    .zip(&step.reward)
                    .for_each(|(acc, &r)| *acc = *acc + discount * r);
                discount = discount * gamma;
                s = step.next;
                if step.done {
                    break;
                }
            }
            Ok(ret)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = T::lit(episodes as f64);
    let mut mean = vec![T::zero(); spec.num_objectives];
    for r in &returns {
        mean.iter_mut().zip(r).for_each(|(m, &x)| *m = *m + x);
    }
    Ok(mean.into_iter().map(|m| m / n).collect())
}
