//! Function approximators: MLPs with hand-written backward passes, the
//! Gaussian policy head and the vector value network.

mod gaussian;
mod init;
mod mlp;

pub use gaussian::{
    diag_gaussian_kl, diag_gaussian_log_prob, PolicyGrad, PolicyParams, ValueParams, LOG_STD_INIT,
    LOG_STD_MAX, LOG_STD_MIN, POLICY_OUTPUT_GAIN,
};
pub use mlp::{Activation, MlpGrad, MlpParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::RngStream;

/// Hidden layer widths and activation shared by policy and value networks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Tanh,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config(vec!["network.hidden: widths must be positive".into()]));
        }
        Ok(())
    }

    /// Fresh policy and value networks; the policy draws from `rng.child(0)`,
    /// the value network from `rng.child(1)`.
    pub fn init<T: Real>(
        &self,
        state_dim: usize,
        action_dim: usize,
        num_objectives: usize,
        rng: &RngStream,
    ) -> Result<(PolicyParams<T>, ValueParams<T>)> {
        let policy = PolicyParams::init(state_dim, action_dim, &self.hidden, self.activation, &mut rng.child(0))?;
        let value = ValueParams::init(state_dim, num_objectives, &self.hidden, self.activation, &mut rng.child(1))?;
        Ok((policy, value))
    }
}
