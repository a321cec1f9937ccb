//! Finite tabular MDPs with explicit transition, reward, and reset tables.
//! Small instances can be enumerated exhaustively, which is what makes exact
//! expectations (and therefore exact unbiasedness tests) possible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_categorical, Environment, Step, Trajectory};
use crate::linalg::ParamVector;
use crate::policy::Policy;
use crate::{Error, Result};

/// Default cap on exhaustive enumeration size; override with `MBPG_ENUM_CAP`.
pub const DEFAULT_ENUM_CAP: u64 = 1_000_000;

const DIST_TOL: f64 = 1e-12;

/// A finite MDP played for exactly `horizon` steps (no terminal states).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `transition[s][a][s']`, each row a probability distribution.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`, deterministic per state-action pair.
    pub reward: Vec<Vec<f64>>,
    /// Initial state distribution.
    pub initial_dist: Vec<f64>,
    pub horizon: usize,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        initial_dist: Vec<f64>,
        horizon: usize,
        gamma: f64,
    ) -> Result<Self> {
        let mdp = TabularMdp {
            num_states: initial_dist.len(),
            num_actions: reward.first().map_or(0, |r| r.len()),
            transition,
            reward,
            initial_dist,
            horizon,
            gamma,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mdp: TabularMdp = serde_json::from_str(text)?;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn from_json_file(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |why: String| Error::Invalid {
            what: "tabular mdp".to_string(),
            why,
        };
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(invalid("needs at least one state and one action".into()));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid(format!(
                "gamma must be in (0,1), got {}",
                self.gamma
            )));
        }
        if self.initial_dist.len() != self.num_states
            || self.transition.len() != self.num_states
            || self.reward.len() != self.num_states
        {
            return Err(invalid("table shapes disagree with num_states".into()));
        }
        check_distribution(&self.initial_dist, "initial_dist")?;
        for (s, (rows, rewards)) in self.transition.iter().zip(&self.reward).enumerate() {
            if rows.len() != self.num_actions || rewards.len() != self.num_actions {
                return Err(invalid(format!(
                    "state {s} has wrong action count in transition or reward table"
                )));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != self.num_states {
                    return Err(invalid(format!(
                        "transition[{s}][{a}] has wrong length {}",
                        row.len()
                    )));
                }
                check_distribution(row, &format!("transition[{s}][{a}]"))?;
            }
            for (a, r) in rewards.iter().enumerate() {
                if !r.is_finite() {
                    return Err(invalid(format!("reward[{s}][{a}] is not finite")));
                }
            }
        }
        Ok(())
    }

    /// Largest |reward| in the table.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward
            .iter()
            .flatten()
            .fold(0.0f64, |m, r| m.max(r.abs()))
    }

    /// Every fixed-length trajectory with positive probability, paired with
    /// that probability. Probabilities are the exact product of reset,
    /// policy, and transition terms, branching over the final state, so they
    /// sum to one.
    ///
    /// Errors when `S * (A*S)^H` exceeds the enumeration cap (default 10^6,
    /// override with the `MBPG_ENUM_CAP` environment variable).
    pub fn enumerate_trajectories<P>(
        &self,
        policy: &P,
        theta: &ParamVector,
    ) -> Result<Vec<(Trajectory<usize, usize>, f64)>>
    where
        P: Policy<State = usize, Action = usize>,
    {
        policy.validate_theta(theta)?;
        let cap = enum_cap();
        let branch = (self.num_actions as u128) * (self.num_states as u128);
        let mut bound = self.num_states as u128;
        for _ in 0..self.horizon {
            bound = bound.saturating_mul(branch);
            if bound > cap as u128 {
                return Err(Error::EnumerationTooLarge { count: bound, cap });
            }
        }

        // Per-(state, action) log-probabilities under the current parameters.
        let mut log_pi = vec![vec![0.0; self.num_actions]; self.num_states];
        for (s, row) in log_pi.iter_mut().enumerate() {
            for (a, lp) in row.iter_mut().enumerate() {
                *lp = policy.action_log_prob(theta, &s, &a)?;
            }
        }

        let mut out = Vec::new();
        let mut prefix: Vec<Step<usize, usize>> = Vec::with_capacity(self.horizon);
        for s0 in 0..self.num_states {
            let p0 = self.initial_dist[s0];
            if p0 > 0.0 {
                self.enumerate_from(s0, p0, &log_pi, &mut prefix, &mut out);
            }
        }
        Ok(out)
    }

    fn enumerate_from(
        &self,
        state: usize,
        prob: f64,
        log_pi: &[Vec<f64>],
        prefix: &mut Vec<Step<usize, usize>>,
        out: &mut Vec<(Trajectory<usize, usize>, f64)>,
    ) {
        if prefix.len() == self.horizon {
            out.push((
                Trajectory {
                    steps: prefix.clone(),
                    final_state: Some(state),
                },
                prob,
            ));
            return;
        }
        for a in 0..self.num_actions {
            let lp = log_pi[state][a];
            let pi = lp.exp();
            if pi <= 0.0 {
                continue;
            }
            prefix.push(Step {
                state,
                action: a,
                reward: self.reward[state][a],
                log_prob: lp,
            });
            for next in 0..self.num_states {
                let pt = self.transition[state][a][next];
                if pt > 0.0 {
                    self.enumerate_from(next, prob * pi * pt, log_pi, prefix, out);
                }
            }
            prefix.pop();
        }
    }

    /// Fixed two-state, two-action instance (H=3, gamma=0.9) with dense
    /// transitions and mixed-sign rewards; the reference problem for the
    /// exactness tests. 128 trajectories, 4 policy parameters.
    pub fn two_state_example() -> Self {
        TabularMdp::new(
            vec![
                vec![vec![0.7, 0.3], vec![0.2, 0.8]],
                vec![vec![0.45, 0.55], vec![0.9, 0.1]],
            ],
            vec![vec![0.8, -0.3], vec![-0.6, 1.0]],
            vec![0.6, 0.4],
            3,
            0.9,
        )
        .expect("reference MDP must validate")
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    for p in row {
        if !p.is_finite() || *p < 0.0 || *p > 1.0 + DIST_TOL {
            return Err(Error::Invalid {
                what: what.to_string(),
                why: format!("entry {p} is not a probability"),
            });
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(Error::Invalid {
            what: what.to_string(),
            why: format!("sums to {sum}, expected 1 within {DIST_TOL}"),
        });
    }
    Ok(())
}

fn enum_cap() -> u64 {
    match std::env::var("MBPG_ENUM_CAP") {
        Ok(v) => v.parse().unwrap_or(DEFAULT_ENUM_CAP),
        Err(_) => DEFAULT_ENUM_CAP,
    }
}

impl Environment for TabularMdp {
    type State = usize;
    type Action = usize;

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(rng, &self.initial_dist)
    }

    fn step<R: Rng + ?Sized>(
        &self,
        state: &usize,
        action: &usize,
        rng: &mut R,
    ) -> Result<(usize, f64, bool)> {
        if *action >= self.num_actions {
            return Err(Error::InvalidAction {
                action: *action,
                context: "tabular mdp step",
            });
        }
        let next = sample_categorical(rng, &self.transition[*state][*action]);
        Ok((next, self.reward[*state][*action], false))
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn r_max(&self) -> f64 {
        self.max_abs_reward()
    }
}
