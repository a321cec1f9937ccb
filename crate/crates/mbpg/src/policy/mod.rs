//! Differentiable stochastic policies.
//!
//! Every policy maps a flat parameter vector and a state to a distribution
//! over actions, and can evaluate the log-density and its parameter gradient
//! (the score) for any action. The optimizers never see anything else.

pub mod gaussian;
pub mod mlp;
pub mod softmax;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::linalg::{Matrix, ParamVector};
use crate::{Error, Result};

pub use gaussian::MlpGaussian;
pub use softmax::{MlpSoftmax, TabularSoftmax};

/// A parametric stochastic policy over (`State`, `Action`).
pub trait Policy {
    type State: Clone;
    type Action: Clone;

    /// Flat parameter count.
    fn param_dim(&self) -> usize;

    /// Initial parameters. MLP weights draw uniform from
    /// [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases and everything else start
    /// at zero (which makes softmax policies start uniform).
    fn init_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector;

    /// `log pi_theta(a | s)`.
    fn action_log_prob(
        &self,
        theta: &ParamVector,
        state: &Self::State,
        action: &Self::Action,
    ) -> Result<f64>;

    /// Draw an action and report its log-probability.
    fn sample_action<R: Rng + ?Sized>(
        &self,
        theta: &ParamVector,
        state: &Self::State,
        rng: &mut R,
    ) -> Result<(Self::Action, f64)>;

    /// Score function `grad_theta log pi_theta(a | s)`.
    fn score(
        &self,
        theta: &ParamVector,
        state: &Self::State,
        action: &Self::Action,
    ) -> Result<ParamVector>;

    /// `grad^2_theta log pi_theta(a | s)` where a closed form exists;
    /// `None` means callers must fall back to finite differences.
    fn log_prob_hessian(
        &self,
        _theta: &ParamVector,
        _state: &Self::State,
        _action: &Self::Action,
    ) -> Option<Result<Matrix>> {
        None
    }

    fn validate_theta(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::ParamShape {
                expected: self.param_dim(),
                got: theta.len(),
            });
        }
        theta.check_finite("policy parameters")
    }

    /// `grad_theta log p(tau | theta)`: transition terms do not depend on
    /// theta, so this is the sum of per-step scores.
    fn trajectory_score(
        &self,
        theta: &ParamVector,
        traj: &Trajectory<Self::State, Self::Action>,
    ) -> Result<ParamVector> {
        let mut total = ParamVector::zeros(self.param_dim());
        for step in &traj.steps {
            total.add_scaled(1.0, &self.score(theta, &step.state, &step.action)?);
        }
        Ok(total)
    }

    /// Sum of `log pi_theta(a_h | s_h)` over the trajectory. Only the policy
    /// factors appear: reset and transition factors cancel in every
    /// importance ratio this quantity feeds.
    fn trajectory_log_prob(
        &self,
        theta: &ParamVector,
        traj: &Trajectory<Self::State, Self::Action>,
    ) -> Result<f64> {
        let mut total = 0.0;
        for step in &traj.steps {
            total += self.action_log_prob(theta, &step.state, &step.action)?;
        }
        Ok(total)
    }
}

/// Serializable description of a policy's shape, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyArchitecture {
    TabularSoftmax {
        num_states: usize,
        num_actions: usize,
    },
    LinearSoftmax {
        input_dim: usize,
        num_actions: usize,
    },
    MlpSoftmax {
        input_dim: usize,
        hidden: Vec<usize>,
        num_actions: usize,
    },
    LinearGaussian {
        input_dim: usize,
        action_dim: usize,
    },
    MlpGaussian {
        input_dim: usize,
        hidden: Vec<usize>,
        action_dim: usize,
    },
}

impl PolicyArchitecture {
    pub fn validate(&self) -> Result<()> {
        let invalid = |why: &str| Error::Invalid {
            what: "policy architecture".to_string(),
            why: why.to_string(),
        };
        match self {
            PolicyArchitecture::TabularSoftmax {
                num_states,
                num_actions,
            } => {
                if *num_states == 0 || *num_actions == 0 {
                    return Err(invalid("tabular softmax needs states and actions"));
                }
            }
            PolicyArchitecture::LinearSoftmax {
                input_dim,
                num_actions,
            } => {
                if *input_dim == 0 || *num_actions == 0 {
                    return Err(invalid("linear softmax needs inputs and actions"));
                }
            }
            PolicyArchitecture::MlpSoftmax {
                input_dim,
                hidden,
                num_actions,
            } => {
                if *input_dim == 0 || *num_actions == 0 {
                    return Err(invalid("mlp softmax needs inputs and actions"));
                }
                if hidden.is_empty() || hidden.contains(&0) {
                    return Err(invalid(
                        "mlp softmax needs at least one nonempty hidden layer",
                    ));
                }
            }
            PolicyArchitecture::LinearGaussian {
                input_dim,
                action_dim,
            } => {
                if *input_dim == 0 || *action_dim == 0 {
                    return Err(invalid("linear gaussian needs inputs and action dims"));
                }
            }
            PolicyArchitecture::MlpGaussian {
                input_dim,
                hidden,
                action_dim,
            } => {
                if *input_dim == 0 || *action_dim == 0 {
                    return Err(invalid("mlp gaussian needs inputs and action dims"));
                }
                if hidden.is_empty() || hidden.contains(&0) {
                    return Err(invalid(
                        "mlp gaussian needs at least one nonempty hidden layer",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn param_dim(&self) -> usize {
        match self {
            PolicyArchitecture::TabularSoftmax {
                num_states,
                num_actions,
            } => num_states * num_actions,
            PolicyArchitecture::LinearSoftmax {
                input_dim,
                num_actions,
            } => mlp::MlpSpec::new(*input_dim, vec![], *num_actions).param_dim(),
            PolicyArchitecture::MlpSoftmax {
                input_dim,
                hidden,
                num_actions,
            } => mlp::MlpSpec::new(*input_dim, hidden.clone(), *num_actions).param_dim(),
            PolicyArchitecture::LinearGaussian {
                input_dim,
                action_dim,
            } => mlp::MlpSpec::new(*input_dim, vec![], *action_dim).param_dim() + action_dim,
            PolicyArchitecture::MlpGaussian {
                input_dim,
                hidden,
                action_dim,
            } => {
                mlp::MlpSpec::new(*input_dim, hidden.clone(), *action_dim).param_dim() + action_dim
            }
        }
    }

    /// Concrete policy for the categorical feature-based kinds.
    pub fn build_softmax(&self) -> Option<MlpSoftmax> {
        match self {
            PolicyArchitecture::LinearSoftmax {
                input_dim,
                num_actions,
            } => Some(MlpSoftmax::new(*input_dim, vec![], *num_actions)),
            PolicyArchitecture::MlpSoftmax {
                input_dim,
                hidden,
                num_actions,
            } => Some(MlpSoftmax::new(*input_dim, hidden.clone(), *num_actions)),
            _ => None,
        }
    }

    pub fn build_tabular(&self) -> Option<TabularSoftmax> {
        match self {
            PolicyArchitecture::TabularSoftmax {
                num_states,
                num_actions,
            } => Some(TabularSoftmax::new(*num_states, *num_actions)),
            _ => None,
        }
    }

    pub fn build_gaussian(&self) -> Option<MlpGaussian> {
        match self {
            PolicyArchitecture::LinearGaussian {
                input_dim,
                action_dim,
            } => Some(MlpGaussian::new(*input_dim, vec![], *action_dim)),
            PolicyArchitecture::MlpGaussian {
                input_dim,
                hidden,
                action_dim,
            } => Some(MlpGaussian::new(*input_dim, hidden.clone(), *action_dim)),
            _ => None,
        }
    }
}

/// A saved policy: architecture descriptor plus flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub architecture: PolicyArchitecture,
    pub theta: Vec<f64>,
}

impl Checkpoint {
    pub fn new(architecture: PolicyArchitecture, theta: &ParamVector) -> Result<Self> {
        architecture.validate()?;
        if architecture.param_dim() != theta.len() {
            return Err(Error::ParamShape {
                expected: architecture.param_dim(),
                got: theta.len(),
            });
        }
        Ok(Checkpoint {
            architecture,
            theta: theta.as_slice().to_vec(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.architecture.validate()?;
        if ck.architecture.param_dim() != ck.theta.len() {
            return Err(Error::ParamShape {
                expected: ck.architecture.param_dim(),
                got: ck.theta.len(),
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &str) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io {
            path: path.to_string(),
            source,
        })
    }

    pub fn load(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn theta(&self) -> ParamVector {
        ParamVector::from_vec(self.theta.clone())
    }
}
