//! Environments and trajectory plumbing.
//!
//! Two concrete environments are provided: arbitrary finite tabular MDPs
//! loaded from JSON (exactly solvable, used by the oracle) and the classic
//! cart-pole balancing task (used by the benchmark harness).

pub mod cartpole;
pub mod tabular;

use rand::Rng;

use crate::linalg::ParamVector;
use crate::policy::Policy;
use crate::Result;

pub use cartpole::CartPole;
pub use tabular::TabularMdp;

/// A finite-horizon MDP with stochastic reset and transition kernels.
pub trait Environment {
    type State: Clone;
    type Action: Clone;

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    /// Advance one step. Returns `(next_state, reward, done)`.
    fn step<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        action: &Self::Action,
        rng: &mut R,
    ) -> Result<(Self::State, f64, bool)>;

    /// Default episode length.
    fn horizon(&self) -> usize;

    /// Default discount factor.
    fn gamma(&self) -> f64;

    /// Bound on |reward| per step.
    fn r_max(&self) -> f64;
}

/// One transition: the state visited, the action taken there, the reward
/// received, and the behavior policy's log-probability of that action.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S, A> {
    pub state: S,
    pub action: A,
    pub reward: f64,
    pub log_prob: f64,
}

/// A finite trajectory. `final_state` is the state reached after the last
/// action; tabular enumeration branches on it so that trajectory
/// probabilities are exactly the product of reset, policy, and transition
/// terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S, A> {
    pub steps: Vec<Step<S, A>>,
    pub final_state: Option<S>,
}

impl<S, A> Trajectory<S, A> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Sum of rewards without discounting.
    pub fn undiscounted_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        discounted_return(&self.rewards(), gamma)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Log-probability the behavior policy assigned to the action sequence.
    pub fn behavior_log_prob(&self) -> f64 {
        self.steps.iter().map(|s| s.log_prob).sum()
    }
}

/// `sum_h gamma^h r_h` for `0 <= gamma <= 1`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    assert!((0.0..=1.0).contains(&gamma), "gamma out of range: {gamma}");
    let mut total = 0.0;
    let mut scale = 1.0;
    for r in rewards {
        total += scale * r;
        scale *= gamma;
    }
    total
}

/// Sample one episode of at most `horizon` steps under `policy(theta)`.
///
/// RNG consumption order is fixed (reset draw, then one action draw and one
/// transition draw per step), so equal seeds give equal trajectories.
pub fn rollout<E, P, R>(
    env: &E,
    policy: &P,
    theta: &ParamVector,
    rng: &mut R,
    horizon: usize,
) -> Result<Trajectory<E::State, E::Action>>
where
    E: Environment,
    P: Policy<State = E::State, Action = E::Action>,
    R: Rng + ?Sized,
{
    assert!(horizon >= 1, "horizon must be at least 1");
    policy.validate_theta(theta)?;
    let mut state = env.reset(rng);
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (action, log_prob) = policy.sample_action(theta, &state, rng)?;
        let (next, reward, done) = env.step(&state, &action, rng)?;
        steps.push(Step {
            state,
            action,
            reward,
            log_prob,
        });
        state = next;
        if done {
            break;
        }
    }
    Ok(Trajectory {
        steps,
        final_state: Some(state),
    })
}

/// Inverse-CDF draw from a finite distribution. Consumes exactly one `f64`.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave acc marginally below 1; attribute the tail to the
    // last outcome with positive mass.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("categorical distribution with no mass")
}
