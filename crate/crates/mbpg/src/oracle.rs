//! Exact ground truth on enumerable tabular MDPs.
//!
//! Everything here is computed by exhaustive trajectory enumeration (or
//! finite differences of enumerated quantities), independent of any sampling.
//! The unbiasedness, variance, and momentum-recursion tests all reduce to
//! comparisons against these values.

use crate::env::{TabularMdp, Trajectory};
use crate::linalg::{Matrix, ParamVector};
use crate::policy::Policy;
use crate::{Error, Result};

/// Expectation under `p(tau | theta)` of an arbitrary per-trajectory vector.
pub fn enumeration_mean<P, F>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &ParamVector,
    mut f: F,
) -> Result<ParamVector>
where
    P: Policy<State = usize, Action = usize>,
    F: FnMut(&Trajectory<usize, usize>) -> Result<ParamVector>,
{
    let trajectories = mdp.enumerate_trajectories(policy, theta)?;
    let mut mean: Option<ParamVector> = None;
    for (traj, prob) in &trajectories {
        let value = f(traj)?;
        match &mut mean {
            Some(m) => m.add_scaled(*prob, &value),
            None => mean = Some(value.scaled(*prob)),
        }
    }
    mean.ok_or_else(|| Error::Invalid {
        what: "enumeration".to_string(),
        why: "no trajectory has positive probability".to_string(),
    })
}

/// Exact objective `J(theta) = E[sum_h gamma^h r_h]`.
pub fn exact_j<P>(mdp: &TabularMdp, policy: &P, theta: &ParamVector) -> Result<f64>
where
    P: Policy<State = usize, Action = usize>,
{
    let trajectories = mdp.enumerate_trajectories(policy, theta)?;
    Ok(trajectories
        .iter()
        .map(|(traj, prob)| prob * traj.discounted_return(mdp.gamma))
        .sum())
}

/// Exact gradient via the likelihood-ratio identity
/// `grad J = E[trajectory_score * discounted return]`, which enumeration
/// makes exact rather than an estimate.
pub fn exact_grad_j<P>(mdp: &TabularMdp, policy: &P, theta: &ParamVector) -> Result<ParamVector>
where
    P: Policy<State = usize, Action = usize>,
{
    enumeration_mean(mdp, policy, theta, |traj| {
        Ok(policy
            .trajectory_score(theta, traj)?
            .scaled(traj.discounted_return(mdp.gamma)))
    })
}

/// Exact-to-FD Hessian: column-wise central differences of [`exact_grad_j`]
/// with step `delta` (default `1e-4 * (1 + |theta|)`), symmetrized. Also
/// returns the pre-symmetrization asymmetry as a quality check.
pub fn exact_hessian_j<P>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &ParamVector,
    delta: Option<f64>,
) -> Result<(Matrix, f64)>
where
    P: Policy<State = usize, Action = usize>,
{
    let d = policy.param_dim();
    let delta = delta.unwrap_or_else(|| 1e-4 * (1.0 + theta.norm()));
    let mut h = Matrix::zeros(d, d);
    for j in 0..d {
        let mut plus = theta.clone();
        plus[j] += delta;
        let mut minus = theta.clone();
        minus[j] -= delta;
        let gp = exact_grad_j(mdp, policy, &plus)?;
        let gm = exact_grad_j(mdp, policy, &minus)?;
        for i in 0..d {
            h.set(i, j, (gp[i] - gm[i]) / (2.0 * delta));
        }
    }
    let asymmetry = h.max_asymmetry();
    Ok((h.symmetrized(), asymmetry))
}

/// First and second moments of a vector estimator under enumeration.
#[derive(Debug, Clone)]
pub struct OracleReport {
    /// Reference value the mean is compared against.
    pub exact: ParamVector,
    /// Exact expectation of the estimator.
    pub mean: ParamVector,
    /// `max_i |mean_i - exact_i|`.
    pub abs_error: f64,
    /// Total variance `E |f - mean|^2` (trace of the covariance).
    pub variance: f64,
}

/// Evaluate an estimator's exact mean and variance against a reference.
pub fn estimator_moments<P, F>(
    mdp: &TabularMdp,
    policy: &P,
    theta: &ParamVector,
    exact: &ParamVector,
    mut f: F,
) -> Result<OracleReport>
where
    P: Policy<State = usize, Action = usize>,
    F: FnMut(&Trajectory<usize, usize>) -> Result<ParamVector>,
{
    let trajectories = mdp.enumerate_trajectories(policy, theta)?;
    let mut samples = Vec::with_capacity(trajectories.len());
    let mut mean = ParamVector::zeros(exact.len());
    for (traj, prob) in &trajectories {
        let value = f(traj)?;
        if value.len() != exact.len() {
            return Err(Error::ParamShape {
                expected: exact.len(),
                got: value.len(),
            });
        }
        mean.add_scaled(*prob, &value);
        samples.push((value, *prob));
    }
    let mut variance = 0.0;
    for (value, prob) in &samples {
        let dev = value.sub(&mean);
        variance += prob * dev.dot(&dev);
    }
    Ok(OracleReport {
        exact: exact.clone(),
        mean: mean.clone(),
        abs_error: mean.max_abs_diff(exact),
        variance,
    })
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence. Exact for polynomials of degree <= 2n-1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-based initial guess for the i-th positive root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) by upward recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped to [0, 1].
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights) = gauss_legendre(n);
    (
        nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        weights.iter().map(|w| 0.5 * w).collect(),
    )
}
