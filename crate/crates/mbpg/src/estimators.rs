//! Trajectory-level gradient estimators and the correction terms the
//! momentum optimizers combine: step-reweighted policy gradients (PGT /
//! GPOMDP / REINFORCE), trajectory importance weights, and
//! finite-difference curvature pieces.

use serde::{Deserialize, Serialize};

use crate::env::{discounted_return, Trajectory};
use crate::linalg::{Matrix, ParamVector};
use crate::policy::Policy;
use crate::{Error, Result};

/// Largest parameter count for which dense per-sample Hessians are allowed.
pub const HESSIAN_DIM_CAP: usize = 64;

/// `exp` overflows past this; weights beyond it saturate instead.
const MAX_EXP_ARG: f64 = 709.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    Reinforce,
    Pgt,
    Gpomdp,
}

/// A policy-gradient sample and the estimator that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub vector: ParamVector,
    pub kind: EstimatorKind,
}

/// Reward baseline for the step-reweighted estimators.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    Zero,
    Constant(f64),
    /// One value per step index; must cover the trajectory length.
    PerStep(Vec<f64>),
}

impl Baseline {
    fn at(&self, j: usize) -> f64 {
        match self {
            Baseline::Zero => 0.0,
            Baseline::Constant(b) => *b,
            Baseline::PerStep(bs) => bs[j],
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if let Baseline::PerStep(bs) = self {
            if bs.len() < len {
                return Err(Error::Invalid {
                    what: "per-step baseline".to_string(),
                    why: format!("length {} shorter than trajectory {len}", bs.len()),
                });
            }
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Invalid {
            what: "gamma".to_string(),
            why: format!("{gamma} outside [0, 1]"),
        });
    }
    Ok(())
}

/// Policy-gradient-theorem estimator:
/// `sum_h [sum_{j>=h} (gamma^j r_j - b_j)] * score(s_h, a_h)`.
///
/// Note the discount is `gamma^j` with the absolute step index, not
/// `gamma^{j-h}`: later steps contribute less everywhere.
pub fn pgt<P: Policy>(
    traj: &Trajectory<P::State, P::Action>,
    policy: &P,
    theta: &ParamVector,
    gamma: f64,
    baseline: &Baseline,
) -> Result<GradEstimate> {
    check_gamma(gamma)?;
    policy.validate_theta(theta)?;
    baseline.check_len(traj.len())?;

    // Suffix sums of gamma^j r_j - b_j, with gamma^j built by forward
    // multiplication exactly as in gpomdp so the two stay in lockstep.
    let len = traj.len();
    let pows = gamma_powers(gamma, len);
    let mut coeff = vec![0.0; len];
    let mut acc = 0.0;
    for h in (0..len).rev() {
        acc += pows[h] * traj.steps[h].reward - baseline.at(h);
        coeff[h] = acc;
    }

    let mut g = ParamVector::zeros(policy.param_dim());
    for (h, step) in traj.steps.iter().enumerate() {
        let s = policy.score(theta, &step.state, &step.action)?;
        g.add_scaled(coeff[h], &s);
    }
    Ok(GradEstimate {
        vector: g,
        kind: EstimatorKind::Pgt,
    })
}

/// Score sum with one explicit weight per step:
/// `sum_h coeff[h] * score(s_h, a_h)`.
///
/// Every step-reweighted estimator in this module is an instance of this
/// with a particular coefficient choice; the training loop calls it directly
/// with batch-whitened return-to-go coefficients. `coeff` must cover the
/// trajectory.
pub fn score_weighted_gradient<P: Policy>(
    traj: &Trajectory<P::State, P::Action>,
    policy: &P,
    theta: &ParamVector,
    coeff: &[f64],
) -> Result<ParamVector> {
    policy.validate_theta(theta)?;
    if coeff.len() < traj.len() {
        return Err(Error::Invalid {
            what: "per-step coefficients".to_string(),
            why: format!(
                "length {} shorter than trajectory {}",
                coeff.len(),
                traj.len()
            ),
        });
    }
    let mut g = ParamVector::zeros(policy.param_dim());
    for (h, step) in traj.steps.iter().enumerate() {
        g.add_scaled(coeff[h], &policy.score(theta, &step.state, &step.action)?);
    }
    Ok(g)
}

fn gamma_powers(gamma: f64, len: usize) -> Vec<f64> {
    let mut pows = Vec::with_capacity(len);
    let mut scale = 1.0;
    for _ in 0..len {
        pows.push(scale);
        scale *= gamma;
    }
    pows
}

/// GPOMDP estimator:
/// `sum_h [sum_{j<=h} score(s_j, a_j)] * (gamma^h r_h - b_h)`.
/// Algebraically identical to [`pgt`] term by term (swap the summation
/// order), so the two must agree to rounding error on every trajectory.
pub fn gpomdp<P: Policy>(
    traj: &Trajectory<P::State, P::Action>,
    policy: &P,
    theta: &ParamVector,
    gamma: f64,
    baseline: &Baseline,
) -> Result<GradEstimate> {
    check_gamma(gamma)?;
    policy.validate_theta(theta)?;
    baseline.check_len(traj.len())?;

    let d = policy.param_dim();
    let mut prefix = ParamVector::zeros(d);
    let mut g = ParamVector::zeros(d);
    let mut scale = 1.0;
    for (h, step) in traj.steps.iter().enumerate() {
        prefix.add_scaled(1.0, &policy.score(theta, &step.state, &step.action)?);
        g.add_scaled(scale * step.reward - baseline.at(h), &prefix);
        scale *= gamma;
    }
    Ok(GradEstimate {
        vector: g,
        kind: EstimatorKind::Gpomdp,
    })
}

/// Whole-trajectory REINFORCE:
/// `[sum_h score(s_h, a_h)] * (discounted return - b)`.
pub fn reinforce<P: Policy>(
    traj: &Trajectory<P::State, P::Action>,
    policy: &P,
    theta: &ParamVector,
    gamma: f64,
    baseline: f64,
) -> Result<GradEstimate> {
    check_gamma(gamma)?;
    policy.validate_theta(theta)?;
    let total = policy.trajectory_score(theta, traj)?;
    let weight = discounted_return(&traj.rewards(), gamma) - baseline;
    Ok(GradEstimate {
        vector: total.scaled(weight),
        kind: EstimatorKind::Reinforce,
    })
}

/// Trajectory likelihood ratio `p(tau | theta_num) / p(tau | theta_den)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceWeight {
    /// Exact log of the ratio; reset and transition factors cancel.
    pub log_raw: f64,
    /// `exp(log_raw)`, saturated instead of overflowing.
    pub raw: f64,
    /// `raw` clamped into the clip window (equal to `raw` without one).
    pub clipped: f64,
    /// True when `exp` would have overflowed.
    pub saturated: bool,
}

/// Compute the importance weight of `traj` between two parameter vectors.
/// The trajectory is assumed to have been sampled under `theta_den`.
pub fn importance_weight<P: Policy>(
    traj: &Trajectory<P::State, P::Action>,
    policy: &P,
    theta_num: &ParamVector,
    theta_den: &ParamVector,
    clip: Option<(f64, f64)>,
) -> Result<ImportanceWeight> {
    if let Some((lo, hi)) = clip {
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Invalid {
                what: "clip window".to_string(),
                why: format!("[{lo}, {hi}] must satisfy 0 < lo <= hi"),
            });
        }
    }
    let log_num = policy.trajectory_log_prob(theta_num, traj)?;
    let log_den = policy.trajectory_log_prob(theta_den, traj)?;
    let log_raw = log_num - log_den;
    let saturated = log_raw > MAX_EXP_ARG;
    let raw = if saturated { f64::MAX } else { log_raw.exp() };
    let clipped = match clip {
        Some((lo, hi)) => raw.clamp(lo, hi),
        None => raw,
    };
    Ok(ImportanceWeight {
        log_raw,
        raw,
        clipped,
        saturated,
    })
}

/// Finite-difference step size for Hessian-vector products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvpConfig {
    pub delta: f64,
}

impl HvpConfig {
    pub const MIN_DELTA: f64 = 1e-8;
    pub const MAX_DELTA: f64 = 1e-2;

    pub fn new(delta: f64) -> Result<Self> {
        if !(Self::MIN_DELTA..=Self::MAX_DELTA).contains(&delta) {
            return Err(Error::Invalid {
                what: "hvp delta".to_string(),
                why: format!("{delta} outside [{}, {}]", Self::MIN_DELTA, Self::MAX_DELTA),
            });
        }
        Ok(HvpConfig { delta })
    }
}

impl Default for HvpConfig {
    fn default() -> Self {
        HvpConfig { delta: 1e-4 }
    }
}

/// Gradient of the reward-weighted log-likelihood
/// `Phi(tau|theta) = sum_h [sum_{j>=h} gamma^j r_j] log pi(a_h|s_h)`.
/// Identical to [`pgt`] with a zero baseline; shared implementation.
pub fn phi_grad<P: Policy>(
    traj: &Trajectory<P::State, P::Action>,
    policy: &P,
    theta: &ParamVector,
    gamma: f64,
) -> Result<ParamVector> {
    Ok(pgt(traj, policy, theta, gamma, &Baseline::Zero)?.vector)
}

/// Central-difference Hessian-vector product of Phi:
/// `[phi_grad(theta + delta v) - phi_grad(theta - delta v)] / (2 delta)`.
pub fn hvp_phi_fd<P: Policy>(
    traj: &Trajectory<P::State, P::Action>,
    policy: &P,
    theta: &ParamVector,
    v: &ParamVector,
    cfg: HvpConfig,
    gamma: f64,
) -> Result<ParamVector> {
    HvpConfig::new(cfg.delta)?;
    policy.validate_theta(theta)?;
    if v.len() != theta.len() {
        return Err(Error::ParamShape {
            expected: theta.len(),
            got: v.len(),
        });
    }
    v.check_finite("hvp direction")?;
    if v.iter().all(|x| *x == 0.0) {
        return Ok(ParamVector::zeros(theta.len()));
    }
    let plus = theta.affine(1.0, cfg.delta, v);
    let minus = theta.affine(1.0, -cfg.delta, v);
    let g_plus = phi_grad(traj, policy, &plus, gamma)?;
    let g_minus = phi_grad(traj, policy, &minus, gamma)?;
    Ok(g_plus.sub(&g_minus).scaled(1.0 / (2.0 * cfg.delta)))
}

/// Per-trajectory estimate of the objective's Hessian:
/// `phi_grad * trajectory_score^T + hessian(Phi)`.
///
/// `hessian(Phi)` uses the policy's closed form when one exists and
/// column-by-column central differences of `phi_grad` otherwise. Dense in
/// the parameter dimension, so capped at [`HESSIAN_DIM_CAP`].
pub fn hessian_estimate<P: Policy>(
    traj: &Trajectory<P::State, P::Action>,
    policy: &P,
    theta: &ParamVector,
    gamma: f64,
) -> Result<Matrix> {
    check_gamma(gamma)?;
    policy.validate_theta(theta)?;
    let d = policy.param_dim();
    if d > HESSIAN_DIM_CAP {
        return Err(Error::HessianDimCap {
            dim: d,
            cap: HESSIAN_DIM_CAP,
        });
    }

    let grad_phi = phi_grad(traj, policy, theta, gamma)?;
    let score = policy.trajectory_score(theta, traj)?;
    let mut total = Matrix::zeros(d, d);
    total.add_outer(1.0, &grad_phi, &score);

    let hess_phi = match phi_hessian_analytic(traj, policy, theta, gamma)? {
        Some(h) => h,
        None => phi_hessian_fd(traj, policy, theta, gamma)?,
    };
    total.add_scaled(1.0, &hess_phi);
    Ok(total)
}

/// `hessian(Phi) = sum_h c_h hessian(log pi(a_h|s_h))` when the policy has a
/// closed-form log-density Hessian; `None` if any step lacks one. Exact (no
/// finite differences), so it doubles as the reference the FD paths are
/// measured against.
pub fn phi_hessian_analytic<P: Policy>(
    traj: &Trajectory<P::State, P::Action>,
    policy: &P,
    theta: &ParamVector,
    gamma: f64,
) -> Result<Option<Matrix>> {
    let len = traj.len();
    let d = policy.param_dim();
    // Suffix reward sums c_h = sum_{j>=h} gamma^j r_j.
    let pows = gamma_powers(gamma, len);
    let mut coeff = vec![0.0; len];
    let mut acc = 0.0;
    for h in (0..len).rev() {
        acc += pows[h] * traj.steps[h].reward;
        coeff[h] = acc;
    }
    let mut total = Matrix::zeros(d, d);
    for (h, step) in traj.steps.iter().enumerate() {
        match policy.log_prob_hessian(theta, &step.state, &step.action) {
            Some(h_step) => total.add_scaled(coeff[h], &h_step?),
            None => return Ok(None),
        }
    }
    Ok(Some(total))
}

fn phi_hessian_fd<P: Policy>(
    traj: &Trajectory<P::State, P::Action>,
    policy: &P,
    theta: &ParamVector,
    gamma: f64,
) -> Result<Matrix> {
    let d = policy.param_dim();
    let delta = 1e-4 * (1.0 + theta.norm());
    let mut h = Matrix::zeros(d, d);
    for j in 0..d {
        let mut plus = theta.clone();
        plus[j] += delta;
        let mut minus = theta.clone();
        minus[j] -= delta;
        let gp = phi_grad(traj, policy, &plus, gamma)?;
        let gm = phi_grad(traj, policy, &minus, gamma)?;
        for i in 0..d {
            h.set(i, j, (gp[i] - gm[i]) / (2.0 * delta));
        }
    }
    // The exact Hessian is symmetric; average out FD asymmetry.
    Ok(h.symmetrized())
}

/// Curvature correction used between consecutive iterates:
/// with `v = theta_t - theta_prev` and the mixture point
/// `theta(alpha) = alpha theta_t + (1-alpha) theta_prev`,
///
/// `delta = [trajectory_score(theta(alpha)) . v] * phi_grad(theta(alpha))
///          + hvp_phi(theta(alpha), v)`.
///
/// The trajectory must have been sampled at `theta(alpha)`; its enumeration
/// mean is then the exact Hessian-vector product of the objective at the
/// mixture point (up to the finite-difference error in the second term).
pub fn delta_t<P: Policy>(
    traj: &Trajectory<P::State, P::Action>,
    policy: &P,
    theta_t: &ParamVector,
    theta_prev: &ParamVector,
    alpha: f64,
    cfg: HvpConfig,
    gamma: f64,
) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Invalid {
            what: "alpha".to_string(),
            why: format!("{alpha} outside [0, 1]"),
        });
    }
    policy.validate_theta(theta_t)?;
    policy.validate_theta(theta_prev)?;
    let v = theta_t.sub(theta_prev);
    if v.iter().all(|x| *x == 0.0) {
        return Ok(ParamVector::zeros(theta_t.len()));
    }
    let theta_alpha = theta_t.affine(alpha, 1.0 - alpha, theta_prev);
    let score = policy.trajectory_score(&theta_alpha, traj)?;
    let grad_phi = phi_grad(traj, policy, &theta_alpha, gamma)?;
    let mut out = hvp_phi_fd(traj, policy, &theta_alpha, &v, cfg, gamma)?;
    out.add_scaled(score.dot(&v), &grad_phi);
    Ok(out)
}
