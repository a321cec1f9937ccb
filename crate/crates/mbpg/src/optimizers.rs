//! Momentum-based variance-reduced policy gradient optimizers.
//!
//! All three momentum variants share one recursion: the new direction is a
//! convex mix of a fresh gradient sample and the previous direction plus a
//! correction term that estimates how the gradient changed between iterates.
//! IS-MBPG and IS-MBPG* build that correction from an importance-weighted
//! re-evaluation of the same trajectory at the previous parameters; HA-MBPG
//! builds it from a Hessian-vector product at a random point between the
//! iterates. A single trajectory (or small batch) per iteration suffices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{rollout, Environment, Trajectory};
use crate::estimators::{
    delta_t, importance_weight, pgt, score_weighted_gradient, Baseline, HvpConfig,
};
use crate::linalg::ParamVector;
use crate::policy::Policy;
use crate::{Error, Result};

/// Abort threshold on the parameter norm.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    IsMbpg,
    HaMbpg,
    IsMbpgStar,
    VanillaPg,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::IsMbpg => "is-mbpg",
            Algorithm::HaMbpg => "ha-mbpg",
            Algorithm::IsMbpgStar => "is-mbpg-star",
            Algorithm::VanillaPg => "vanilla-pg",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "is-mbpg" => Ok(Algorithm::IsMbpg),
            "ha-mbpg" => Ok(Algorithm::HaMbpg),
            "is-mbpg-star" => Ok(Algorithm::IsMbpgStar),
            "vanilla-pg" => Ok(Algorithm::VanillaPg),
            other => Err(Error::Invalid {
                what: "algo".to_string(),
                why: format!(
                    "unknown algorithm {other:?}; expected is-mbpg, ha-mbpg, is-mbpg-star, or vanilla-pg"
                ),
            }),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Step-size schedule constants. All three must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub k: f64,
    pub m: f64,
    pub c: f64,
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k", self.k), ("m", self.m), ("c", self.c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid {
                    what: format!("schedule parameter {name}"),
                    why: format!("{v} must be positive and finite"),
                });
            }
        }
        Ok(())
    }
}

/// Adaptive step size `k / (m + sum_i G_i^2)^(1/3)`; the sum includes the
/// current iteration's gradient norm.
pub fn eta_adaptive(sp: &ScheduleParams, sum_grad_norm_sq: f64) -> f64 {
    debug_assert!(sum_grad_norm_sq >= 0.0);
    sp.k / (sp.m + sum_grad_norm_sq).cbrt()
}

/// Horizon-count step size `k / (m + t)^(1/3)` for `t >= 1`.
pub fn eta_nonadaptive(sp: &ScheduleParams, t: u64) -> f64 {
    debug_assert!(t >= 1);
    sp.k / (sp.m + t as f64).cbrt()
}

/// Momentum coefficient for the next iteration, `min(c eta^2, 1)`.
pub fn beta_next(sp: &ScheduleParams, eta: f64) -> f64 {
    (sp.c * eta * eta).min(1.0)
}

/// `beta g_new + (1 - beta) (u_prev + g_new - w g_old)`.
///
/// With `beta = 1` this is plain SGD on the fresh sample; with `beta = 0` it
/// is the pure recursive variance-reduced correction.
pub fn is_mbpg_combine(
    u_prev: &ParamVector,
    g_new: &ParamVector,
    g_old: &ParamVector,
    w: f64,
    beta: f64,
) -> ParamVector {
    let mut inner = u_prev.add(g_new);
    inner.add_scaled(-w, g_old);
    let mut out = g_new.scaled(beta);
    out.add_scaled(1.0 - beta, &inner);
    out
}

/// `beta w g_t + (1 - beta) (u_prev + delta)`.
pub fn ha_mbpg_combine(
    u_prev: &ParamVector,
    g_t: &ParamVector,
    w: f64,
    delta: &ParamVector,
    beta: f64,
) -> ParamVector {
    let mut out = g_t.scaled(beta * w);
    out.add_scaled(1.0 - beta, &u_prev.add(delta));
    out
}

/// Per-step advantage coefficients for a batch of trajectories.
///
/// Each step's raw value is the within-episode discounted return-to-go
/// `sum_{j>=h} gamma^{j-h} r_j`. From it the scheme subtracts the best
/// baseline the batch can offer:
///
/// - with two or more episodes, the mean return-to-go of the episodes still
///   running at that step index — so any structure shared by every episode
///   (in particular the falling tail every fixed-horizon task shows once all
///   episodes run to the limit) cancels exactly, and a batch of identical
///   episodes produces all-zero coefficients: uniform success is a fixed
///   point of training rather than a state the parameters keep drifting
///   through;
/// - with a single episode, the episode's own mean — within-episode contrast
///   is all there is.
///
/// The residuals are then divided by the population standard deviation of
/// the *raw* pooled return-to-go values (plus a small epsilon). Dividing by
/// the raw spread pins the coefficient scale near one regardless of reward
/// scale or episode length without re-amplifying vanishing residuals the way
/// dividing by the residuals' own spread would.
pub fn whitened_advantages<S, A>(batch: &[Trajectory<S, A>], gamma: f64) -> Vec<Vec<f64>> {
    let rtg: Vec<Vec<f64>> = batch
        .iter()
        .map(|traj| {
            let mut acc = 0.0;
            let mut vals = vec![0.0; traj.len()];
            for h in (0..traj.len()).rev() {
                acc = traj.steps[h].reward + gamma * acc;
                vals[h] = acc;
            }
            vals
        })
        .collect();
    let n: usize = rtg.iter().map(Vec::len).sum();
    if n == 0 {
        return rtg;
    }
    let mean = rtg.iter().flatten().sum::<f64>() / n as f64;
    let var = rtg
        .iter()
        .flatten()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / n as f64;
    let inv_spread = 1.0 / (var.sqrt() + 1e-8);

    if rtg.len() == 1 {
        return rtg
            .into_iter()
            .map(|vals| vals.into_iter().map(|a| (a - mean) * inv_spread).collect())
            .collect();
    }

    let longest = rtg.iter().map(Vec::len).max().unwrap_or(0);
    let mut index_mean = vec![0.0; longest];
    for (h, slot) in index_mean.iter_mut().enumerate() {
        let alive: Vec<f64> = rtg.iter().filter_map(|vals| vals.get(h)).copied().collect();
        *slot = alive.iter().sum::<f64>() / alive.len() as f64;
    }
    rtg.into_iter()
        .map(|vals| {
            vals.into_iter()
                .enumerate()
                .map(|(h, a)| (a - index_mean[h]) * inv_spread)
                .collect()
        })
        .collect()
}

/// Everything a training run needs to know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Episodes sampled per iteration.
    pub batch_size: usize,
    /// Total environment transitions before the run stops. The iteration
    /// that crosses the budget completes and is recorded.
    pub probe_budget: u64,
    pub horizon: usize,
    pub gamma: f64,
    pub schedule: ScheduleParams,
    /// Constant step size for the vanilla baseline.
    pub learning_rate: f64,
    /// Importance-weight clip window `(low, high)`; `None` disables.
    pub clip: Option<(f64, f64)>,
    /// Base step for finite-difference Hessian-vector products.
    pub hvp_delta: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |what: &str, why: String| Error::Invalid {
            what: what.to_string(),
            why,
        };
        if self.batch_size == 0 {
            return Err(invalid("batch", "must be at least 1".to_string()));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1".to_string()));
        }
        if self.probe_budget < self.horizon as u64 {
            return Err(invalid(
                "probes",
                format!(
                    "budget {} cannot fit one episode of horizon {}",
                    self.probe_budget, self.horizon
                ),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("gamma", format!("{} outside (0, 1]", self.gamma)));
        }
        self.schedule.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(
                "lr",
                format!("{} must be positive and finite", self.learning_rate),
            ));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(invalid(
                    "clip window",
                    format!("[{lo}, {hi}] must satisfy 0 < low <= high < inf"),
                ));
            }
        }
        HvpConfig::new(self.hvp_delta)?;
        Ok(())
    }
}

/// One logged iteration. `wall_ms` is fixed at zero: exports must be
/// byte-identical across runs of the same config and seed, which rules out
/// recording real wall-clock time here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub iteration: u64,
    pub system_probes: u64,
    pub avg_return: f64,
    pub grad_norm: f64,
    pub eta: f64,
    pub beta: f64,
    pub wall_ms: u64,
}

/// Mutable state the momentum loop carries between iterations.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub t: u64,
    pub theta: ParamVector,
    pub theta_prev: Option<ParamVector>,
    pub u: ParamVector,
    pub sum_grad_norm_sq: f64,
    pub beta: f64,
    /// Reservoir sample of past iterates: every theta_t is the final choice
    /// with probability 1/T without storing the history.
    pub chosen: ParamVector,
}

impl OptimizerState {
    fn new(theta: ParamVector) -> Self {
        let d = theta.len();
        OptimizerState {
            t: 0,
            chosen: theta.clone(),
            theta,
            theta_prev: None,
            u: ParamVector::zeros(d),
            sum_grad_norm_sq: 0.0,
            beta: 1.0,
        }
    }
}

/// Result of a training run: the uniformly chosen output iterate, the
/// per-iteration log, and the count of saturated importance weights.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub theta_out: ParamVector,
    pub rows: Vec<RunRow>,
    pub saturated_weights: u64,
}

/// Run the configured algorithm from a fresh policy initialization.
///
/// RNG consumption order per iteration is fixed: one reservoir draw, then
/// (HA-MBPG only, from the second iteration) one mixing draw, then the batch
/// rollouts. Identical seeds therefore reproduce runs bit for bit.
pub fn train<E, P, R>(cfg: &TrainConfig, env: &E, policy: &P, rng: &mut R) -> Result<TrainOutput>
where
    E: Environment,
    P: Policy<State = E::State, Action = E::Action>,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if cfg.algorithm == Algorithm::VanillaPg {
        return vanilla_pg_train(cfg, env, policy, rng);
    }

    let mut state = OptimizerState::new(policy.init_theta(rng));
    let mut rows: Vec<RunRow> = Vec::new();
    let mut probes: u64 = 0;
    let mut saturated: u64 = 0;
    let d = policy.param_dim();

    loop {
        state.t += 1;
        let t = state.t;
        if rng.gen_range(0..t) == 0 {
            state.chosen = state.theta.clone();
        }

        // Mixture point the batch is sampled from: theta_t itself except for
        // HA-MBPG past the first iteration, which draws alpha ~ U[0,1) and
        // samples from theta(alpha) = alpha theta_t + (1-alpha) theta_prev.
        let (alpha, theta_sample) = if cfg.algorithm == Algorithm::HaMbpg && t > 1 {
            let alpha: f64 = rng.gen();
            let prev = state.theta_prev.as_ref().expect("t > 1 has a predecessor");
            (alpha, state.theta.affine(alpha, 1.0 - alpha, prev))
        } else {
            (1.0, state.theta.clone())
        };

        let mut batch = Vec::with_capacity(cfg.batch_size);
        let mut return_sum = 0.0;
        let mut batch_steps: u64 = 0;
        for _ in 0..cfg.batch_size {
            let traj = rollout(env, policy, &theta_sample, rng, cfg.horizon)?;
            batch_steps += traj.len() as u64;
            return_sum += traj.undiscounted_return();
            batch.push(traj);
        }
        probes += batch_steps;
        let avg_return = return_sum / batch.len() as f64;
        // Batch gradients are averaged per collected step, not per episode.
        // Step counts grow with episode length, so this keeps the gradient
        // scale roughly constant as returns improve — the scale the k/m/c
        // schedule constants are sized for. Per-episode averaging would let
        // the gradient norm track the return and blow up the early steps.
        let inv_steps = 1.0 / batch_steps as f64;

        // Fresh gradient estimate at theta_t (also the G_t that feeds the
        // adaptive step size, always unweighted). The likelihood-ratio
        // variants use whitened advantage coefficients; the curvature
        // variant differentiates the exact discounted objective instead,
        // because its correction term is a Hessian-vector product of that
        // objective and the two must talk about the same function. (The
        // whitened coefficients are unused on that arm.)
        let advantages = whitened_advantages(&batch, cfg.gamma);
        let mut g_new = ParamVector::zeros(d);
        for (traj, coeff) in batch.iter().zip(&advantages) {
            let g = match cfg.algorithm {
                Algorithm::HaMbpg => {
                    pgt(traj, policy, &state.theta, cfg.gamma, &Baseline::Zero)?.vector
                }
                _ => score_weighted_gradient(traj, policy, &state.theta, coeff)?,
            };
            g_new.add_scaled(1.0, &g);
        }
        let g_new = g_new.scaled(inv_steps);
        let g_norm = g_new.norm();

        let beta_used = state.beta;
        let u = if t == 1 {
            g_new
        } else {
            let prev = state.theta_prev.as_ref().expect("t > 1 has a predecessor");
            match cfg.algorithm {
                Algorithm::IsMbpg | Algorithm::IsMbpgStar => {
                    // Importance-weighted re-evaluation of the same batch at
                    // the previous parameters, with the same coefficients:
                    // the likelihood ratio alone carries the parameter shift.
                    let mut corr = ParamVector::zeros(d);
                    for (traj, coeff) in batch.iter().zip(&advantages) {
                        let w = importance_weight(traj, policy, prev, &state.theta, cfg.clip)?;
                        saturated += w.saturated as u64;
                        let g_old = score_weighted_gradient(traj, policy, prev, coeff)?;
                        corr.add_scaled(w.clipped, &g_old);
                    }
                    let corr = corr.scaled(inv_steps);
                    is_mbpg_combine(&state.u, &g_new, &corr, 1.0, beta_used)
                }
                Algorithm::HaMbpg => {
                    let v = state.theta.sub(prev);
                    let hvp_cfg = HvpConfig {
                        delta: effective_hvp_delta(cfg.hvp_delta, theta_sample.norm(), v.norm()),
                    };
                    let mut weighted_g = ParamVector::zeros(d);
                    let mut delta_mean = ParamVector::zeros(d);
                    for traj in &batch {
                        let w =
                            importance_weight(traj, policy, &state.theta, &theta_sample, cfg.clip)?;
                        saturated += w.saturated as u64;
                        weighted_g.add_scaled(
                            w.clipped,
                            &pgt(traj, policy, &state.theta, cfg.gamma, &Baseline::Zero)?.vector,
                        );
                        delta_mean.add_scaled(
                            1.0,
                            &delta_t(traj, policy, &state.theta, prev, alpha, hvp_cfg, cfg.gamma)?,
                        );
                    }
                    let weighted_g = weighted_g.scaled(inv_steps);
                    let delta_mean = delta_mean.scaled(inv_steps);
                    ha_mbpg_combine(&state.u, &weighted_g, 1.0, &delta_mean, beta_used)
                }
                Algorithm::VanillaPg => unreachable!("dispatched above"),
            }
        };

        state.sum_grad_norm_sq += g_norm * g_norm;
        let eta = match cfg.algorithm {
            Algorithm::IsMbpgStar => eta_nonadaptive(&cfg.schedule, t),
            _ => eta_adaptive(&cfg.schedule, state.sum_grad_norm_sq),
        };

        let abort = |reason: &'static str| Error::TrainAbort {
            iteration: t,
            reason,
            theta_norm: state.theta.norm(),
            eta,
            beta: beta_used,
            saturated_weights: saturated,
        };
        if u.check_finite("momentum direction").is_err() {
            return Err(abort("non-finite momentum direction"));
        }

        rows.push(RunRow {
            iteration: t,
            system_probes: probes,
            avg_return,
            grad_norm: g_norm,
            eta,
            beta: beta_used,
            wall_ms: 0,
        });

        let theta_next = state.theta.affine(1.0, eta, &u);
        if theta_next.norm() > DIVERGENCE_NORM {
            return Err(abort("parameter norm diverged"));
        }
        state.beta = beta_next(&cfg.schedule, eta);
        state.theta_prev = Some(std::mem::replace(&mut state.theta, theta_next));
        state.u = u;

        if probes >= cfg.probe_budget {
            break;
        }
    }

    Ok(TrainOutput {
        theta_out: state.chosen,
        rows,
        saturated_weights: saturated,
    })
}

/// Plain policy gradient: batch-averaged fresh gradient, constant step size,
/// uniformly chosen output iterate. The baseline the momentum methods are
/// judged against.
pub fn vanilla_pg_train<E, P, R>(
    cfg: &TrainConfig,
    env: &E,
    policy: &P,
    rng: &mut R,
) -> Result<TrainOutput>
where
    E: Environment,
    P: Policy<State = E::State, Action = E::Action>,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let mut state = OptimizerState::new(policy.init_theta(rng));
    let mut rows: Vec<RunRow> = Vec::new();
    let mut probes: u64 = 0;
    let d = policy.param_dim();

    loop {
        state.t += 1;
        let t = state.t;
        if rng.gen_range(0..t) == 0 {
            state.chosen = state.theta.clone();
        }

        let mut batch = Vec::with_capacity(cfg.batch_size);
        let mut return_sum = 0.0;
        let mut batch_steps: u64 = 0;
        for _ in 0..cfg.batch_size {
            let traj = rollout(env, policy, &state.theta, rng, cfg.horizon)?;
            batch_steps += traj.len() as u64;
            return_sum += traj.undiscounted_return();
            batch.push(traj);
        }
        probes += batch_steps;
        // Same whitened coefficients and per-step averaging as the momentum
        // loop: the baseline must be compared on identical gradient scaling.
        let advantages = whitened_advantages(&batch, cfg.gamma);
        let mut g = ParamVector::zeros(d);
        for (traj, coeff) in batch.iter().zip(&advantages) {
            g.add_scaled(
                1.0,
                &score_weighted_gradient(traj, policy, &state.theta, coeff)?,
            );
        }
        let g = g.scaled(1.0 / batch_steps as f64);
        let eta = cfg.learning_rate;

        let abort = |reason: &'static str| Error::TrainAbort {
            iteration: t,
            reason,
            theta_norm: state.theta.norm(),
            eta,
            beta: 1.0,
            saturated_weights: 0,
        };
        if g.check_finite("gradient").is_err() {
            return Err(abort("non-finite gradient"));
        }

        rows.push(RunRow {
            iteration: t,
            system_probes: probes,
            avg_return: return_sum / batch.len() as f64,
            grad_norm: g.norm(),
            eta,
            beta: 1.0,
            wall_ms: 0,
        });

        let theta_next = state.theta.affine(1.0, eta, &g);
        if theta_next.norm() > DIVERGENCE_NORM {
            return Err(abort("parameter norm diverged"));
        }
        state.theta_prev = Some(std::mem::replace(&mut state.theta, theta_next));
        state.u = g;

        if probes >= cfg.probe_budget {
            break;
        }
    }

    Ok(TrainOutput {
        theta_out: state.chosen,
        rows,
        saturated_weights: 0,
    })
}

/// Scale the finite-difference step so the actual perturbation magnitude
/// `delta |v|` tracks `base (1 + |theta|)`, clamped into the valid window.
fn effective_hvp_delta(base: f64, theta_norm: f64, v_norm: f64) -> f64 {
    if v_norm == 0.0 {
        return base;
    }
    (base * (1.0 + theta_norm) / v_norm).clamp(HvpConfig::MIN_DELTA, HvpConfig::MAX_DELTA)
}
