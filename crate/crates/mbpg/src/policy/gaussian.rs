//! Diagonal Gaussian policies for continuous actions: the mean comes from a
//! (possibly depth-zero) tanh MLP of the state features, the per-dimension
//! log standard deviations are free state-independent parameters appended to
//! the parameter vector, initialized at zero. Actions are not squashed.

use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::MlpSpec;
use super::Policy;
use crate::linalg::ParamVector;
use crate::{Error, Result};

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian policy head: `a ~ N(mlp(s), diag(exp(log_std))^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGaussian {
    pub mlp: MlpSpec,
    pub action_dim: usize,
}

impl MlpGaussian {
    pub fn new(input_dim: usize, hidden: Vec<usize>, action_dim: usize) -> Self {
        assert!(input_dim > 0 && action_dim > 0);
        MlpGaussian {
            mlp: MlpSpec::new(input_dim, hidden, action_dim),
            action_dim,
        }
    }

    fn check_input(&self, state: &[f64], action: Option<&[f64]>) -> Result<()> {
        if state.len() != self.mlp.input_dim {
            return Err(Error::Invalid {
                what: "state features".to_string(),
                why: format!(
                    "length {} does not match input dim {}",
                    state.len(),
                    self.mlp.input_dim
                ),
            });
        }
        if let Some(a) = action {
            if a.len() != self.action_dim {
                return Err(Error::Invalid {
                    what: "action vector".to_string(),
                    why: format!(
                        "length {} does not match action dim {}",
                        a.len(),
                        self.action_dim
                    ),
                });
            }
        }
        Ok(())
    }

    fn split<'t>(&self, theta: &'t ParamVector) -> (&'t [f64], &'t [f64]) {
        let mlp_dim = self.mlp.param_dim();
        let slice = theta.as_slice();
        (&slice[..mlp_dim], &slice[mlp_dim..])
    }
}

impl Policy for MlpGaussian {
    type State = Vec<f64>;
    type Action = Vec<f64>;

    fn param_dim(&self) -> usize {
        self.mlp.param_dim() + self.action_dim
    }

    fn init_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut theta = self.mlp.init_params(rng);
        // log_std starts at zero: unit standard deviation.
        theta.extend(std::iter::repeat_n(0.0, self.action_dim));
        ParamVector::from_vec(theta)
    }

    fn action_log_prob(
        &self,
        theta: &ParamVector,
        state: &Vec<f64>,
        action: &Vec<f64>,
    ) -> Result<f64> {
        self.validate_theta(theta)?;
        self.check_input(state, Some(action))?;
        let (mlp_theta, log_std) = self.split(theta);
        let mean = self.mlp.forward(mlp_theta, state).output;
        let mut lp = 0.0;
        for i in 0..self.action_dim {
            let sigma = log_std[i].exp();
            let z = (action[i] - mean[i]) / sigma;
            lp += -HALF_LN_TWO_PI - log_std[i] - 0.5 * z * z;
        }
        Ok(lp)
    }

    fn sample_action<R: Rng + ?Sized>(
        &self,
        theta: &ParamVector,
        state: &Vec<f64>,
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        self.validate_theta(theta)?;
        self.check_input(state, None)?;
        let (mlp_theta, log_std) = self.split(theta);
        let mean = self.mlp.forward(mlp_theta, state).output;
        let mut action = Vec::with_capacity(self.action_dim);
        let mut lp = 0.0;
        for i in 0..self.action_dim {
            let eps: f64 = rng.sample(StandardNormal);
            let sigma = log_std[i].exp();
            action.push(mean[i] + sigma * eps);
            lp += -HALF_LN_TWO_PI - log_std[i] - 0.5 * eps * eps;
        }
        Ok((action, lp))
    }

    fn score(
        &self,
        theta: &ParamVector,
        state: &Vec<f64>,
        action: &Vec<f64>,
    ) -> Result<ParamVector> {
        self.validate_theta(theta)?;
        self.check_input(state, Some(action))?;
        let (mlp_theta, log_std) = self.split(theta);
        let trace = self.mlp.forward(mlp_theta, state);
        let mlp_dim = self.mlp.param_dim();

        // d log p / d mean_i = (a_i - mu_i) / sigma_i^2
        let mut out_grad = Vec::with_capacity(self.action_dim);
        for i in 0..self.action_dim {
            let sigma = log_std[i].exp();
            out_grad.push((action[i] - trace.output[i]) / (sigma * sigma));
        }
        let mut grad = vec![0.0; self.param_dim()];
        self.mlp
            .backward(mlp_theta, &trace, &out_grad, &mut grad[..mlp_dim]);
        // d log p / d log_std_i = ((a_i - mu_i)/sigma_i)^2 - 1
        for i in 0..self.action_dim {
            let sigma = log_std[i].exp();
            let z = (action[i] - trace.output[i]) / sigma;
            grad[mlp_dim + i] = z * z - 1.0;
        }
        Ok(ParamVector::from_vec(grad))
    }
}
