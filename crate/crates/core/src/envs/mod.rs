//! Desk-scale vector-reward environments.
//!
//! | id               | state | action | q | H   | validity            |
//! |------------------|-------|--------|---|-----|---------------------|
//! | `convex_bandit`  | 1     | 1      | 2 | 1   | always              |
//! | `concave_bandit` | 1     | 1      | 2 | 1   | always              |
//! | `point_reacher`  | 6     | 2      | 2 | 50  | return[0] > -20     |
//! | `mo_drive`       | 1     | 1      | 3 | 100 | return[2] > 50      |
//!
//! Dynamics are deterministic; randomness enters only through the initial
//! state and the policy. Actions are clipped here, not in the policy.

mod rollout;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::RngStream;

pub use rollout::{collect_episodes, rollout, EpisodeCounter, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    ConvexBandit,
    ConcaveBandit,
    PointReacher,
    MoDrive,
}

impl EnvId {
    pub const ALL: [EnvId; 4] = [
        EnvId::ConvexBandit,
        EnvId::ConcaveBandit,
        EnvId::PointReacher,
        EnvId::MoDrive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::ConvexBandit => "convex_bandit",
            EnvId::ConcaveBandit => "concave_bandit",
            EnvId::PointReacher => "point_reacher",
            EnvId::MoDrive => "mo_drive",
        }
    }

    pub fn is_bandit(self) -> bool {
        matches!(self, EnvId::ConvexBandit | EnvId::ConcaveBandit)
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown environment id `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Above,
    Below,
}

/// A policy is valid iff its mean discounted return on `objective` is
/// strictly above (or below) `threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityRule {
    pub objective: usize,
    pub threshold: f64,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub id: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub num_objectives: usize,
    pub horizon: usize,
    pub validity: Option<ValidityRule>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState<T> {
    pub id: EnvId,
    pub t: usize,
    pub state: Vec<T>,
    pub done: bool,
}

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Step<T> {
    pub next: EnvState<T>,
    pub reward: Vec<T>,
    pub done: bool,
}

const REACHER_DT: f64 = 0.1;
const REACHER_DAMPING: f64 = 0.9;
const DRIVE_SPEED_LIMIT: f64 = 3.0;

impl EnvSpec {
    pub fn new(id: EnvId) -> Self {
        let (state_dim, action_dim, num_objectives, horizon, validity) = match id {
            EnvId::ConvexBandit | EnvId::ConcaveBandit => (1, 1, 2, 1, None),
            EnvId::PointReacher => (
                6,
                2,
                2,
                50,
                Some(ValidityRule {
                    objective: 0,
                    threshold: -20.0,
                    direction: Direction::Above,
                }),
            ),
            EnvId::MoDrive => (
                1,
                1,
                3,
                100,
                Some(ValidityRule {
                    objective: 2,
                    threshold: 50.0,
                    direction: Direction::Above,
                }),
            ),
        };
        Self {
            id,
            state_dim,
            action_dim,
            num_objectives,
            horizon,
            validity,
        }
    }

    pub fn reset<T: Real>(&self, rng: &mut RngStream) -> EnvState<T> {
        let state = match self.id {
            EnvId::ConvexBandit | EnvId::ConcaveBandit | EnvId::MoDrive => vec![T::zero()],
            EnvId::PointReacher => {
                let radius: T = rng.uniform_in(T::lit(0.5), T::lit(1.0));
                let angle: T = rng.uniform_in(T::zero(), T::lit(2.0 * std::f64::consts::PI));
                let z = T::zero();
                vec![z, z, z, z, radius * angle.cos(), radius * angle.sin()]
            }
        };
        EnvState {
            id: self.id,
            t: 0,
            state,
            done: false,
        }
    }

    pub fn step<T: Real>(&self, s: &EnvState<T>, action: &[T]) -> Result<Step<T>> {
        if s.id != self.id {
            return Err(Error::Usage(format!("state of {} stepped in {}", s.id, self.id)));
        }
        if s.done || s.t >= self.horizon {
            return Err(Error::Usage(format!(
                "{}: cannot step a finished episode (t = {})",
                self.id, s.t
            )));
        }
        if action.len() != self.action_dim {
            return Err(Error::InvalidInput(format!(
                "{}: action has length {}, expected {}",
                self.id,
                action.len(),
                self.action_dim
            )));
        }
        let a = self.clip_action(action);
        let one = T::one();
        let mut terminated = false;
        let (state, reward) = match self.id {
            EnvId::ConvexBandit => {
                let a = a[0];
                (s.state.clone(), vec![-a * a, -(a - one) * (a - one)])
            }
            EnvId::ConcaveBandit => {
                let a = a[0];
                (s.state.clone(), vec![a * a, (one - a) * (one - a)])
            }
            EnvId::PointReacher => {
                let f = [a[0], a[1]];
                let (damp, dt) = (T::lit(REACHER_DAMPING), T::lit(REACHER_DT));
                let mut next = s.state.clone();
                for d in 0..2 {
                    next[2 + d] = damp * s.state[2 + d] + dt * f[d];
                    next[d] = s.state[d] + dt * next[2 + d];
                }
                let (dx, dy) = (next[0] - next[4], next[1] - next[5]);
                let dist = (dx * dx + dy * dy).sqrt();
                (next, vec![-dist, -(f[0] * f[0] + f[1] * f[1])])
            }
            EnvId::MoDrive => {
                let a = a[0];
                let v = s.state[0] + T::lit(0.1) * (a - T::lit(0.5) * s.state[0]);
                let alive = if v.abs() <= T::lit(DRIVE_SPEED_LIMIT) {
                    one
                } else {
                    terminated = true;
                    T::lit(-10.0)
                };
                (vec![v], vec![v, -a * a, alive])
            }
        };
        let t = s.t + 1;
        let done = terminated || t == self.horizon;
        Ok(Step {
            next: EnvState {
                id: self.id,
                t,
                state,
                done,
            },
            reward,
            done,
        })
    }

    pub fn is_valid<T: Real>(&self, mean_discounted_return: &[T]) -> bool {
        match self.validity {
            None => true,
            Some(rule) => {
                let v = mean_discounted_return
                    .get(rule.objective)
                    .map(|x| x.as_f64())
                    .unwrap_or(f64::NAN);
                match rule.direction {
                    Direction::Above => v > rule.threshold,
                    Direction::Below => v < rule.threshold,
                }
            }
        }
    }

    /// Per-coordinate box the environment clips actions into.
    pub fn action_bounds(&self) -> (f64, f64) {
        match self.id {
            EnvId::ConvexBandit => (-0.5, 1.5),
            EnvId::ConcaveBandit => (0.0, 1.0),
            EnvId::PointReacher | EnvId::MoDrive => (-1.0, 1.0),
        }
    }

    /// The action as the environment executes it.
    pub fn clip_action<T: Real>(&self, action: &[T]) -> Vec<T> {
        let (lo, hi) = self.action_bounds();
        action.iter().map(|&a| a.max(T::lit(lo)).min(T::lit(hi))).collect()
    }

    /// Discount factor used unless a config overrides it.
    pub fn default_gamma(&self) -> f64 {
        if self.horizon == 1 {
            1.0
        } else {
            0.99
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reacher_with_target(tx: f64, ty: f64) -> EnvState<f64> {
        EnvState {
            id: EnvId::PointReacher,
            t: 0,
            state: vec![0.0, 0.0, 0.0, 0.0, tx, ty],
            done: false,
        }
    }

    #[test]
    fn convex_bandit_reset_and_step() {
        let spec = EnvSpec::new(EnvId::ConvexBandit);
        let s0 = spec.reset::<f64>(&mut RngStream::new(0));
        assert_eq!((s0.t, s0.state.clone()), (0, vec![0.0]));
        let step = spec.step(&s0, &[0.0]).unwrap();
        assert_eq!(step.reward, vec![-0.0, -1.0]);
        assert!(step.done);
    }

    #[test]
    fn convex_bandit_clips_action() {
        let spec = EnvSpec::new(EnvId::ConvexBandit);
        let s0 = spec.reset::<f64>(&mut RngStream::new(0));
        let r = spec.step(&s0, &[9.0]).unwrap().reward;
        assert_eq!(r, vec![-2.25, -0.25]);
    }

    #[test]
    fn concave_bandit_midpoint() {
        let spec = EnvSpec::new(EnvId::ConcaveBandit);
        let s0 = spec.reset::<f64>(&mut RngStream::new(0));
        let step = spec.step(&s0, &[0.5]).unwrap();
        assert_eq!(step.reward, vec![0.25, 0.25]);
        assert!(step.done);
    }

    #[test]
    fn point_reacher_zero_action_one_step() {
        let spec = EnvSpec::new(EnvId::PointReacher);
        let step = spec.step(&reacher_with_target(0.8, 0.0), &[0.0, 0.0]).unwrap();
        assert!((step.reward[0] + 0.8).abs() < 1e-15);
        assert_eq!(step.reward[1], -0.0);
        assert!(!step.done);
    }

    #[test]
    fn point_reacher_one_step_dynamics() {
        let spec = EnvSpec::new(EnvId::PointReacher);
        let step = spec.step(&reacher_with_target(0.0, 0.5), &[1.0, 3.0]).unwrap();
        // f clipped to (1, 1): vel = 0.1 f, pos = 0.1 vel.
        let s = &step.next.state;
        assert!((s[2] - 0.1).abs() < 1e-15 && (s[3] - 0.1).abs() < 1e-15);
        assert!((s[0] - 0.01).abs() < 1e-15 && (s[1] - 0.01).abs() < 1e-15);
        let dist = (0.01f64.powi(2) + 0.49f64.powi(2)).sqrt();
        assert!((step.reward[0] + dist).abs() < 1e-15);
        assert_eq!(step.reward[1], -2.0);
    }

    #[test]
    fn point_reacher_target_on_ring() {
        let spec = EnvSpec::new(EnvId::PointReacher);
        let root = RngStream::new(3);
        for i in 0..1000 {
            let s = spec.reset::<f64>(&mut root.child(i));
            let r = s.state[4].hypot(s.state[5]);
            assert!((0.5..=1.0).contains(&r));
            assert_eq!(&s.state[..4], &[0.0; 4]);
        }
    }

    #[test]
    fn reset_is_deterministic_on_cloned_streams() {
        let spec = EnvSpec::new(EnvId::PointReacher);
        let mut a = RngStream::new(10);
        let mut b = a.clone();
        assert_eq!(spec.reset::<f64>(&mut a), spec.reset::<f64>(&mut b));
    }

    #[test]
    fn mo_drive_terminates_above_speed_limit() {
        let spec = EnvSpec::new(EnvId::MoDrive);
        let s = EnvState {
            id: EnvId::MoDrive,
            t: 3,
            state: vec![3.2],
            done: false,
        };
        let step = spec.step(&s, &[1.0]).unwrap();
        assert_eq!(step.reward[2], -10.0);
        assert!(step.done);
    }

    #[test]
    fn stepping_finished_episode_is_usage_error() {
        let spec = EnvSpec::new(EnvId::ConvexBandit);
        let s0 = spec.reset::<f64>(&mut RngStream::new(0));
        let s1 = spec.step(&s0, &[0.2]).unwrap().next;
        assert!(matches!(spec.step(&s1, &[0.2]), Err(Error::Usage(_))));
    }

    #[test]
    fn validity_rules() {
        assert!(EnvSpec::new(EnvId::ConvexBandit).is_valid(&[-1e9, -1e9]));
        let drive = EnvSpec::new(EnvId::MoDrive);
        assert!(drive.is_valid(&[0.0, 0.0, 51.0]));
        assert!(!drive.is_valid(&[0.0, 0.0, 49.0]));
        assert!(!EnvSpec::new(EnvId::PointReacher).is_valid(&[-25.0, 0.0]));
        assert!(EnvSpec::new(EnvId::PointReacher).is_valid(&[-15.0, 0.0]));
    }

    #[test]
    fn convex_bandit_weighted_sum_optimum_by_grid_search() {
        let spec = EnvSpec::new(EnvId::ConvexBandit);
        let s0 = spec.reset::<f64>(&mut RngStream::new(0));
        for &w1 in &[0.1, 0.25, 0.5, 0.8, 0.95] {
            let w = [w1, 1.0 - w1];
            let (best, _) = (0..=2000)
                .map(|i| -0.5 + 2.0 * i as f64 / 2000.0)
                .map(|a| {
                    let r = spec.step(&s0, &[a]).unwrap().reward;
                    (a, w[0] * r[0] + w[1] * r[1])
                })
                .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            assert!((best - w[1] / (w[0] + w[1])).abs() <= 1e-3);
        }
    }

    #[test]
    fn concave_bandit_weighted_sum_optimum_is_an_endpoint() {
        let spec = EnvSpec::new(EnvId::ConcaveBandit);
        let s0 = spec.reset::<f64>(&mut RngStream::new(0));
        for &w1 in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let w = [w1, 1.0 - w1];
            let (best, _) = (0..=1000)
                .map(|i| i as f64 / 1000.0)
                .map(|a| {
                    let r = spec.step(&s0, &[a]).unwrap().reward;
                    (a, w[0] * r[0] + w[1] * r[1])
                })
                .fold((0.5, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            assert!(best == 0.0 || best == 1.0, "w = {w:?}: argmax {best}");
        }
    }
}
