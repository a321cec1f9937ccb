//! Momentum-based variance-reduced policy gradient methods.
//!
//! The crate implements three single-trajectory momentum optimizers (IS-MBPG,
//! HA-MBPG, and the parameter-free variant IS-MBPG*), a vanilla policy
//! gradient baseline, the trajectory gradient estimators they share
//! (REINFORCE, PGT, GPOMDP), and an exact enumeration oracle on small tabular
//! MDPs that every stochastic piece is tested against.
//!
//! ```
//! use mbpg::env::tabular::TabularMdp;
//! use mbpg::policy::{softmax::TabularSoftmax, Policy};
//! use mbpg::oracle;
//!
//! let mdp = TabularMdp::two_state_example();
//! let policy = TabularSoftmax::new(mdp.num_states, mdp.num_actions);
//! let theta = mbpg::linalg::ParamVector::zeros(policy.param_dim());
//! let j = oracle::exact_j(&mdp, &policy, &theta).unwrap();
//! assert!(j.is_finite());
//! ```

pub mod env;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod optimizers;
pub mod oracle;
pub mod policy;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter vector's length does not match the policy architecture.
    #[error("parameter shape mismatch: expected {expected}, got {got}")]
    ParamShape { expected: usize, got: usize },

    /// A parameter vector or intermediate quantity contains NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// An action is outside the space the policy or environment defines.
    #[error("invalid action {action}: {context}")]
    InvalidAction {
        action: usize,
        context: &'static str,
    },

    /// A model or configuration value violates a documented invariant.
    #[error("invalid {what}: {why}")]
    Invalid { what: String, why: String },

    /// Exhaustive enumeration would exceed the configured trajectory cap.
    #[error("enumeration of {count} trajectories exceeds cap {cap} (set MBPG_ENUM_CAP to raise)")]
    EnumerationTooLarge { count: u128, cap: u64 },

    /// Dense Hessian machinery is restricted to small parameter counts.
    #[error("dense Hessian requested for d={dim}, cap is {cap}")]
    HessianDimCap { dim: usize, cap: usize },

    /// A training run hit the numeric guard rails and stopped.
    #[error(
        "training aborted at iteration {iteration}: {reason} \
         (|theta|={theta_norm:.3e}, eta={eta:.3e}, beta={beta:.3e}, \
         saturated importance weights={saturated_weights})"
    )]
    TrainAbort {
        iteration: u64,
        reason: &'static str,
        theta_norm: f64,
        eta: f64,
        beta: f64,
        saturated_weights: u64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

// Book chapters double as doc-tests so the guide can never drift from the API.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(environments, "../../../book/src/environments.md");
    chapter!(policies, "../../../book/src/policies.md");
    chapter!(estimators, "../../../book/src/estimators.md");
    chapter!(optimizers, "../../../book/src/optimizers.md");
    chapter!(oracle, "../../../book/src/oracle.md");
    chapter!(cli, "../../../book/src/cli.md");
}
