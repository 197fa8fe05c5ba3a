//! Scripted behavior policies used to generate offline data.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::env::{wrap_angle, Dynamics, EnvSpec, PendulumParams};
use super::rollout::Policy;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Deterministic state-feedback law with outputs in `[-1, 1]`.
pub trait Controller: Send + Sync {
    fn control(&self, state: &[f64]) -> Vec<f64>;
}

/// Saturated PD toward the point-mass target.
#[derive(Debug, Clone)]
pub struct PointMassPd {
    pub kp: f64,
    pub kd: f64,
    pub target: [f64; 2],
}

impl Controller for PointMassPd {
    fn control(&self, s: &[f64]) -> Vec<f64> {
        (0..2)
            .map(|i| (-self.kp * (s[i] - self.target[i]) - self.kd * s[2 + i]).clamp(-1.0, 1.0))
            .collect()
    }
}

/// Energy-shaping swing-up with a PD capture region around upright.
#[derive(Debug, Clone)]
pub struct PendulumSwingUp {
    pub params: PendulumParams,
    pub energy_gain: f64,
    pub kp: f64,
    pub kd: f64,
    /// Switch to PD when `|theta|` is below this angle.
    pub capture_angle: f64,
}

impl Controller for PendulumSwingUp {
    fn control(&self, s: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let theta = wrap_angle(s[1].atan2(s[0]));
        let speed = s[2];
        let torque = if theta.abs() < self.capture_angle {
            -(self.kp * theta + self.kd * speed)
        } else {
            let inertia = p.mass * p.length * p.length / 3.0;
            // zero at upright rest, negative below
            let energy = 0.5 * inertia * speed * speed
                + p.mass * p.gravity * p.length / 2.0 * (theta.cos() - 1.0);
            if speed.abs() < 1e-3 {
                p.torque_limit
            } else {
                -self.energy_gain * energy * speed
            }
        };
        vec![(torque / p.torque_limit).clamp(-1.0, 1.0)]
    }
}

/// Tuned controller for the environment.
pub fn expert_controller(spec: &EnvSpec) -> Box<dyn Controller> {
    match &spec.dynamics {
        Dynamics::Pointmass(p) => Box::new(PointMassPd {
            kp: 4.0 + p.hill_stiffness * p.mass,
            kd: 3.0,
            target: p.target,
        }),
        Dynamics::Pendulum(p) => Box::new(PendulumSwingUp {
            params: p.clone(),
            energy_gain: 1.0,
            kp: 10.0,
            kd: 2.0,
            capture_angle: 0.6,
        }),
    }
}

/// Detuned version of [`expert_controller`].
pub fn medium_controller(spec: &EnvSpec) -> Box<dyn Controller> {
    match &spec.dynamics {
        Dynamics::Pointmass(p) => Box::new(PointMassPd {
            kp: 1.5 + p.hill_stiffness * p.mass,
            kd: 0.8,
            target: p.target,
        }),
        Dynamics::Pendulum(p) => Box::new(PendulumSwingUp {
            params: p.clone(),
            energy_gain: 0.3,
            kp: 7.0,
            kd: 1.0,
            capture_angle: 0.4,
        }),
    }
}

/// A [`Controller`] plus clipped Gaussian action noise of std `sigma`.
pub struct ScriptedPolicy {
    controller: Box<dyn Controller>,
    pub sigma: f64,
    rng: ChaCha8Rng,
}

impl ScriptedPolicy {
    pub fn new(controller: Box<dyn Controller>, sigma: f64, rng: ChaCha8Rng) -> Self {
        Self {
            controller,
            sigma,
            rng,
        }
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, obs: &Tensor) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(obs.rows());
        let normal = if self.sigma > 0.0 {
            Some(Normal::new(0.0, self.sigma).map_err(|e| Error::invalid(e.to_string()))?)
        } else {
            None
        };
        for i in 0..obs.rows() {
            let mut a = self.controller.control(obs.row_slice(i));
            if let Some(n) = &normal {
                for v in &mut a {
                    *v = (*v + n.sample(&mut self.rng)).clamp(-1.0, 1.0);
                }
            }
            rows.push(a);
        }
        Tensor::from_rows(&rows)
    }
}

/// Uniform random actions in `[-1, 1]`.
pub struct RandomPolicy {
    action_dim: usize,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(action_dim: usize, rng: ChaCha8Rng) -> Self {
        Self { action_dim, rng }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, obs: &Tensor) -> Result<Tensor> {
        let n = obs.rows() * self.action_dim;
        let data = (0..n).map(|_| self.rng.random_range(-1.0..=1.0)).collect();
        Tensor::new(vec![obs.rows(), self.action_dim], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pd_pushes_toward_target() {
        let c = PointMassPd {
            kp: 4.0,
            kd: 3.0,
            target: [0.0, 0.0],
        };
        let a = c.control(&[0.1, -0.1, 0.0, 0.0]);
        assert!(a[0] < 0.0 && a[1] > 0.0);
        let sat = c.control(&[10.0, 0.0, 0.0, 0.0]);
        assert_eq!(sat[0], -1.0);
    }

    #[test]
    fn swing_up_holds_upright() {
        let spec = EnvSpec::pendulum();
        let c = expert_controller(&spec);
        assert_eq!(c.control(&[1.0, 0.0, 0.0]), vec![0.0]);
        // small positive tilt -> negative torque
        let t: f64 = 0.1;
        assert!(c.control(&[t.cos(), t.sin(), 0.0])[0] < 0.0);
    }
}
