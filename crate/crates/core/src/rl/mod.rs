//! Policy optimisation for a single preference: vector returns, vector
//! advantages, the scalarized PPO update and deterministic evaluation.

mod batch;
mod eval;
mod ppo;

pub use batch::{
    compute_advantages, compute_returns, standardize, standardize_columns, Advantages, RolloutBatch,
    STD_GUARD,
};
pub use eval::evaluate_policy;
pub use ppo::{
    ppo_update, scalarized_advantages, surrogate, value_loss, LossVariant, PpoConfig,
    ScalarizedAdvantages, SurrogateTerm, UpdateOutcome, UpdateStats, KL_BACKTRACKS, KL_PROBE_STATES,
};
pub(crate) use ppo::{optimize, TaskBatch};
