//! Cart-pole balancing with the standard classic-control physics: a cart on
//! a frictionless track, a pole hinged on top, and a fixed-magnitude force
//! applied left or right each step. Explicit Euler integration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::{Error, Result};

/// Cart-pole dynamics and episode settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartPole {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    /// Half the pole's length.
    pub half_length: f64,
    pub force_mag: f64,
    /// Integration step in seconds.
    pub tau: f64,
    pub x_threshold: f64,
    pub theta_threshold: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        CartPole {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0f64.to_radians(),
            horizon: 100,
            gamma: 0.99,
        }
    }
}

impl CartPole {
    pub fn with_horizon(horizon: usize, gamma: f64) -> Self {
        CartPole {
            horizon,
            gamma,
            ..CartPole::default()
        }
    }

    /// Observation dimension (x, x_dot, theta, theta_dot).
    pub const STATE_DIM: usize = 4;
    /// Push left or push right.
    pub const NUM_ACTIONS: usize = 2;
}

impl Environment for CartPole {
    type State = Vec<f64>;
    type Action = usize;

    /// All four state components start uniform in [-0.05, 0.05].
    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..Self::STATE_DIM)
            .map(|_| rng.gen_range(-0.05..0.05))
            .collect()
    }

    fn step<R: Rng + ?Sized>(
        &self,
        state: &Vec<f64>,
        action: &usize,
        _rng: &mut R,
    ) -> Result<(Vec<f64>, f64, bool)> {
        if *action >= Self::NUM_ACTIONS {
            return Err(Error::InvalidAction {
                action: *action,
                context: "cart-pole step",
            });
        }
        let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
        let force = if *action == 1 {
            self.force_mag
        } else {
            -self.force_mag
        };
        let total_mass = self.mass_cart + self.mass_pole;
        let pole_mass_length = self.mass_pole * self.half_length;
        let cos_t = theta.cos();
        let sin_t = theta.sin();

        let temp = (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass;
        let theta_acc = (self.gravity * sin_t - cos_t * temp)
            / (self.half_length * (4.0 / 3.0 - self.mass_pole * cos_t * cos_t / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;

        let next = vec![
            x + self.tau * x_dot,
            x_dot + self.tau * x_acc,
            theta + self.tau * theta_dot,
            theta_dot + self.tau * theta_acc,
        ];
        let done = next[0].abs() > self.x_threshold || next[2].abs() > self.theta_threshold;
        Ok((next, 1.0, done))
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn r_max(&self) -> f64 {
        1.0
    }
}
