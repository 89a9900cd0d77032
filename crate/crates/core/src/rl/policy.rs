//! Diagonal-Gaussian actor with a state-independent log-stddev, a separate
//! critic, and tanh squashing into the valid action ranges.

use std::f64::consts::FRAC_PI_2;

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gait::AdjustAction;
use crate::rl::mlp::Mlp;
use crate::rl::observation::{Observation, OBS_DIM};
use crate::sim::{AdjustPolicy, Simulator};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Squashing half-ranges for `(f̂, r̂, θ)`.
pub const ACTION_SCALE: [f64; 3] = [1.0, 0.25, FRAC_PI_2];

/// Observation scaling applied before the networks: DCM errors are a few
/// centimetres, everything else is of order one.
pub fn default_obs_scale() -> Vec<f64> {
    let mut s = vec![1.0; OBS_DIM];
    s[0..6].iter_mut().for_each(|v| *v = 10.0);
    s[9..12].iter_mut().for_each(|v| *v = 3.0);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Array1<f64>,
    pub action_scale: Vec<f64>,
    pub obs_scale: Vec<f64>,
}

/// One stochastic draw: the pre-squash sample, its log-density and the
/// critic's value.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub u: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

impl PolicyParams {
    pub fn new<R: Rng>(
        obs_scale: Vec<f64>,
        action_scale: Vec<f64>,
        hidden: &[usize],
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let obs_dim = obs_scale.len();
        let act_dim = action_scale.len();
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        let mut actor_sizes = sizes.clone();
        actor_sizes.push(act_dim);
        sizes.push(1);
        Self {
            actor: Mlp::new(&actor_sizes, 0.01, rng),
            critic: Mlp::new(&sizes, 1.0, rng),
            log_std: Array1::from_elem(act_dim, init_log_std),
            action_scale,
            obs_scale,
        }
    }

    /// Adjustment policy with two hidden layers of `hidden` units.
    pub fn for_adjustment<R: Rng>(hidden: usize, init_log_std: f64, rng: &mut R) -> Self {
        Self::new(default_obs_scale(), ACTION_SCALE.to_vec(), &[hidden, hidden], init_log_std, rng)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_scale.len()
    }

    pub fn act_dim(&self) -> usize {
        self.action_scale.len()
    }

    pub fn layers_consistent(&self) -> bool {
        self.actor.is_consistent() && self.critic.is_consistent()
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.log_std.iter().all(|v| v.is_finite())
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter().zip(&self.obs_scale).map(|(o, s)| o * s).collect()
    }

    /// Pre-squash mean for a normalized observation.
    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        self.actor.forward_one(x)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.critic.forward_one(x)[0]
    }

    pub fn log_prob(&self, u: &[f64], mean: &[f64]) -> f64 {
        u.iter()
            .zip(mean)
            .zip(self.log_std.iter())
            .map(|((u, m), ls)| {
                let z = (u - m) * (-ls).exp();
                -0.5 * z * z - ls - 0.5 * LN_2PI
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 * (1.0 + LN_2PI)).sum()
    }

    pub fn sample<R: Rng>(&self, x: &[f64], rng: &mut R) -> PolicySample {
        let mean = self.mean(x);
        let u: Vec<f64> = mean
            .iter()
            .zip(self.log_std.iter())
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        PolicySample {
            log_prob: self.log_prob(&u, &mean),
            value: self.value(x),
            u,
        }
    }

    pub fn squash(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.action_scale).map(|(u, s)| s * u.tanh()).collect()
    }

    /// Maps a squashed 3-vector to an adjustment.
    pub fn to_action(a: &[f64]) -> AdjustAction {
        AdjustAction {
            f_hat: a[0],
            r_hat: a[1],
            theta: a[2].clamp(-FRAC_PI_2, FRAC_PI_2),
        }
    }

    /// Deterministic mode returns the squashed mean; stochastic mode samples.
    pub fn act<R: Rng>(&self, obs: &Observation, rng: Option<&mut R>) -> AdjustAction {
        let x = self.normalize(&obs.to_array());
        let u = match rng {
            Some(rng) => self.sample(&x, rng).u,
            None => self.mean(&x),
        };
        Self::to_action(&self.squash(&u))
    }
}

/// A trained policy driving the simulator.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub params: PolicyParams,
    rng: Option<ChaCha8Rng>,
}

impl LearnedPolicy {
    pub fn deterministic(params: PolicyParams) -> Self {
        Self { params, rng: None }
    }

    pub fn stochastic(params: PolicyParams, seed: u64) -> Self {
        Self {
            params,
            rng: Some(<ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed)),
        }
    }
}

impl AdjustPolicy for LearnedPolicy {
    fn act(&mut self, obs: &Observation, _sim: &Simulator) -> Result<AdjustAction> {
        Ok(self.params.act(obs, self.rng.as_mut()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn obs(seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || crate::geometry::Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0);
        Observation {
            dcm_error_ankle: v(),
            dcm_error_step: v(),
            t_rem_norm: 0.5,
            phase_flag: 1.0,
            swing_foot_flag: -1.0,
            swing_foot_rel: v(),
            com_vel: v(),
            v_ref: v(),
        }
    }

    #[test]
    fn zero_network_gives_zero_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = PolicyParams::for_adjustment(16, -1.0, &mut rng);
        p.actor = p.actor.zeros_like();
        assert_eq!(p.act::<ChaCha8Rng>(&obs(1), None), AdjustAction::default());
    }

    #[test]
    fn actions_stay_in_range_and_are_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = PolicyParams::for_adjustment(16, 2.0, &mut rng);
        // Inflate the head so tanh saturates.
        for l in &mut p.actor.layers {
            l.w.mapv_inplace(|w| w * 50.0);
        }
        for s in 0..50 {
            let o = obs(s);
            let a = p.act(&o, Some(&mut rng));
            assert!(a.theta.abs() <= FRAC_PI_2);
            assert!(a.f_hat.abs() <= 1.0 && a.r_hat.abs() <= 0.25);
            let d1 = p.act::<ChaCha8Rng>(&o, None);
            let d2 = p.act::<ChaCha8Rng>(&o, None);
            assert_eq!(d1.theta.to_bits(), d2.theta.to_bits());
        }
    }
}
