//! Categorical policies: logits come either from a per-state table or from a
//! feature-based network, and actions are drawn from the softmax of those
//! logits. All log-probabilities go through the same log-sum-exp path, so
//! sampled and evaluated values agree exactly.

use rand::Rng;

use super::mlp::MlpSpec;
use super::Policy;
use crate::env::sample_categorical;
use crate::linalg::{log_sum_exp, Matrix, ParamVector};
use crate::{Error, Result};

/// One independent logit per (state, action) pair; states are indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSoftmax {
    pub num_states: usize,
    pub num_actions: usize,
}

impl TabularSoftmax {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        assert!(num_states > 0 && num_actions > 0);
        TabularSoftmax {
            num_states,
            num_actions,
        }
    }

    fn check_state_action(&self, state: usize, action: usize) -> Result<()> {
        if state >= self.num_states {
            return Err(Error::Invalid {
                what: "state index".to_string(),
                why: format!("{state} out of range for {} states", self.num_states),
            });
        }
        if action >= self.num_actions {
            return Err(Error::InvalidAction {
                action,
                context: "tabular softmax",
            });
        }
        Ok(())
    }

    /// Log-probabilities of all actions in `state`.
    fn log_probs(&self, theta: &ParamVector, state: usize) -> Vec<f64> {
        let block = &theta.as_slice()[state * self.num_actions..(state + 1) * self.num_actions];
        let lse = log_sum_exp(block);
        block.iter().map(|z| z - lse).collect()
    }
}

impl Policy for TabularSoftmax {
    type State = usize;
    type Action = usize;

    fn param_dim(&self) -> usize {
        self.num_states * self.num_actions
    }

    fn init_theta<R: Rng + ?Sized>(&self, _rng: &mut R) -> ParamVector {
        // Zero logits: the uniform policy.
        ParamVector::zeros(self.param_dim())
    }

    fn action_log_prob(&self, theta: &ParamVector, state: &usize, action: &usize) -> Result<f64> {
        self.validate_theta(theta)?;
        self.check_state_action(*state, *action)?;
        Ok(self.log_probs(theta, *state)[*action])
    }

    fn sample_action<R: Rng + ?Sized>(
        &self,
        theta: &ParamVector,
        state: &usize,
        rng: &mut R,
    ) -> Result<(usize, f64)> {
        self.validate_theta(theta)?;
        self.check_state_action(*state, 0)?;
        let log_probs = self.log_probs(theta, *state);
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let action = sample_categorical(rng, &probs);
        Ok((action, log_probs[action]))
    }

    fn score(&self, theta: &ParamVector, state: &usize, action: &usize) -> Result<ParamVector> {
        self.validate_theta(theta)?;
        self.check_state_action(*state, *action)?;
        let log_probs = self.log_probs(theta, *state);
        let mut g = ParamVector::zeros(self.param_dim());
        let base = state * self.num_actions;
        for (a, lp) in log_probs.iter().enumerate() {
            g[base + a] = if a == *action { 1.0 } else { 0.0 } - lp.exp();
        }
        Ok(g)
    }

    /// Closed form: within the active state's block,
    /// `H_ij = pi_i pi_j - pi_i delta_ij`, independent of the action taken.
    fn log_prob_hessian(
        &self,
        theta: &ParamVector,
        state: &usize,
        action: &usize,
    ) -> Option<Result<Matrix>> {
        if let Err(e) = self
            .validate_theta(theta)
            .and_then(|_| self.check_state_action(*state, *action))
        {
            return Some(Err(e));
        }
        let probs: Vec<f64> = self
            .log_probs(theta, *state)
            .iter()
            .map(|lp| lp.exp())
            .collect();
        let d = self.param_dim();
        let mut h = Matrix::zeros(d, d);
        let base = state * self.num_actions;
        for i in 0..self.num_actions {
            for j in 0..self.num_actions {
                let v = probs[i] * probs[j] - if i == j { probs[i] } else { 0.0 };
                h.set(base + i, base + j, v);
            }
        }
        Some(Ok(h))
    }
}

/// Categorical policy whose logits are a (possibly depth-zero) tanh MLP of a
/// feature vector. An empty `hidden` list gives the linear-softmax policy.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSoftmax {
    pub mlp: MlpSpec,
}

impl MlpSoftmax {
    pub fn new(input_dim: usize, hidden: Vec<usize>, num_actions: usize) -> Self {
        assert!(input_dim > 0 && num_actions > 0);
        MlpSoftmax {
            mlp: MlpSpec::new(input_dim, hidden, num_actions),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.mlp.output_dim
    }

    fn check_input(&self, state: &[f64], action: usize) -> Result<()> {
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
        if action >= self.num_actions() {
            return Err(Error::InvalidAction {
                action,
                context: "mlp softmax",
            });
        }
        Ok(())
    }
}

impl Policy for MlpSoftmax {
    type State = Vec<f64>;
    type Action = usize;

    fn param_dim(&self) -> usize {
        self.mlp.param_dim()
    }

    fn init_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        ParamVector::from_vec(self.mlp.init_params(rng))
    }

    fn action_log_prob(
        &self,
        theta: &ParamVector,
        state: &Vec<f64>,
        action: &usize,
    ) -> Result<f64> {
        self.validate_theta(theta)?;
        self.check_input(state, *action)?;
        let logits = self.mlp.forward(theta.as_slice(), state).output;
        Ok(logits[*action] - log_sum_exp(&logits))
    }

    fn sample_action<R: Rng + ?Sized>(
        &self,
        theta: &ParamVector,
        state: &Vec<f64>,
        rng: &mut R,
    ) -> Result<(usize, f64)> {
        self.validate_theta(theta)?;
        self.check_input(state, 0)?;
        let logits = self.mlp.forward(theta.as_slice(), state).output;
        let lse = log_sum_exp(&logits);
        let probs: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        let action = sample_categorical(rng, &probs);
        Ok((action, logits[action] - lse))
    }

    fn score(&self, theta: &ParamVector, state: &Vec<f64>, action: &usize) -> Result<ParamVector> {
        self.validate_theta(theta)?;
        self.check_input(state, *action)?;
        let trace = self.mlp.forward(theta.as_slice(), state);
        let lse = log_sum_exp(&trace.output);
        // d log pi(a) / d logit_j = 1{j=a} - softmax_j
        let out_grad: Vec<f64> = trace
            .output
            .iter()
            .enumerate()
            .map(|(j, z)| if j == *action { 1.0 } else { 0.0 } - (z - lse).exp())
            .collect();
        let mut grad = vec![0.0; self.param_dim()];
        self.mlp
            .backward(theta.as_slice(), &trace, &out_grad, &mut grad);
        Ok(ParamVector::from_vec(grad))
    }
}
