use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Planar point mass pushed by a bounded 2-d force.
///
/// State `[px, py, vx, vy]`, action `[fx, fy]` scaled by `force_limit`.
/// Explicit Euler with step `dt`:
///
/// ```text
/// pos' = pos + dt * vel
/// vel' = vel + dt * (force / mass + hill_stiffness * (pos - target))
/// r    = -|pos - target|^2 - 0.01 |a|^2          (a = clipped action)
/// ```
///
/// A positive `hill_stiffness` makes the target an unstable equilibrium
/// (a hilltop the controller has to balance on). When `arena` is set, each
/// position coordinate is clamped to `target ± arena` and the velocity
/// component pushing into the wall is zeroed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointMassParams {
    pub mass: f64,
    pub dt: f64,
    pub force_limit: f64,
    pub target: [f64; 2],
    pub hill_stiffness: f64,
    pub arena: Option<f64>,
    /// Initial position offset from the target is uniform in `±init_pos`.
    pub init_pos: f64,
    /// Initial velocity components are uniform in `±init_vel`.
    pub init_vel: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            dt: 0.05,
            force_limit: 1.0,
            target: [0.0, 0.0],
            hill_stiffness: 0.0,
            arena: None,
            init_pos: 1.0,
            init_vel: 0.2,
        }
    }
}

/// Torque-limited pendulum; `theta = 0` is upright.
///
/// State `[cos(theta), sin(theta), theta_dot]`, action a torque in `[-1, 1]`
/// scaled by `torque_limit`. Semi-implicit Euler:
///
/// ```text
/// theta_ddot = 3 g / (2 l) * sin(theta) + 3 / (m l^2) * torque
/// theta_dot' = clip(theta_dot + dt * theta_ddot, ±max_speed)
/// theta'     = theta + dt * theta_dot'
/// r          = -(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 torque^2)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub torque_limit: f64,
    pub max_speed: f64,
    /// Initial angle is uniform in `±init_angle`, angular speed in `±init_speed`.
    pub init_angle: f64,
    pub init_speed: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 10.0,
            dt: 0.05,
            torque_limit: 2.0,
            max_speed: 8.0,
            init_angle: std::f64::consts::PI,
            init_speed: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dynamics {
    Pointmass(PointMassParams),
    Pendulum(PendulumParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub dynamics: Dynamics,
}

fn default_horizon() -> usize {
    200
}

impl EnvSpec {
    pub fn pointmass() -> Self {
        Self {
            horizon: 200,
            dynamics: Dynamics::Pointmass(PointMassParams::default()),
        }
    }

    pub fn pendulum() -> Self {
        Self {
            horizon: 200,
            dynamics: Dynamics::Pendulum(PendulumParams::default()),
        }
    }

    /// Default spec for a registered environment name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "pointmass" => Ok(Self::pointmass()),
            "pendulum" => Ok(Self::pendulum()),
            other => Err(Error::invalid(format!(
                "unknown environment '{other}' (expected pointmass or pendulum)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.dynamics {
            Dynamics::Pointmass(_) => "pointmass",
            Dynamics::Pendulum(_) => "pendulum",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::Pointmass(_) => 4,
            Dynamics::Pendulum(_) => 3,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::Pointmass(_) => 2,
            Dynamics::Pendulum(_) => 1,
        }
    }

    /// Draw an initial state from the documented box.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.dynamics {
            Dynamics::Pointmass(p) => {
                let mut s = vec![0.0; 4];
                for i in 0..2 {
                    s[i] = p.target[i] + uniform(rng, p.init_pos);
                }
                for v in &mut s[2..] {
                    *v = uniform(rng, p.init_vel);
                }
                s
            }
            Dynamics::Pendulum(p) => {
                let theta = uniform(rng, p.init_angle);
                let speed = uniform(rng, p.init_speed);
                vec![theta.cos(), theta.sin(), speed]
            }
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// One deterministic transition. Actions are clipped to `[-1, 1]` first.
pub fn env_step(spec: &EnvSpec, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, f64)> {
    if state.len() != spec.state_dim() || action.len() != spec.action_dim() {
        return Err(Error::shape(format!(
            "{} expects state {} / action {}, got {} / {}",
            spec.name(),
            spec.state_dim(),
            spec.action_dim(),
            state.len(),
            action.len()
        )));
    }
    if state.iter().chain(action).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "env_step input state={state:?} action={action:?}"
        )));
    }
    let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let (next, reward) = match &spec.dynamics {
        Dynamics::Pointmass(p) => pointmass_step(p, state, &a),
        Dynamics::Pendulum(p) => pendulum_step(p, state, &a),
    };
    if !reward.is_finite() || next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{} step diverged from state={state:?}",
            spec.name()
        )));
    }
    Ok((next, reward))
}

fn pointmass_step(p: &PointMassParams, s: &[f64], a: &[f64]) -> (Vec<f64>, f64) {
    let err = [s[0] - p.target[0], s[1] - p.target[1]];
    let reward = -(err[0] * err[0] + err[1] * err[1]) - 0.01 * (a[0] * a[0] + a[1] * a[1]);
    let mut next = vec![0.0; 4];
    for i in 0..2 {
        let acc = p.force_limit * a[i] / p.mass + p.hill_stiffness * err[i];
        next[i] = s[i] + p.dt * s[2 + i];
        next[2 + i] = s[2 + i] + p.dt * acc;
        if let Some(half) = p.arena {
            let lo = p.target[i] - half;
            let hi = p.target[i] + half;
            if next[i] > hi {
                next[i] = hi;
                next[2 + i] = next[2 + i].min(0.0);
            } else if next[i] < lo {
                next[i] = lo;
                next[2 + i] = next[2 + i].max(0.0);
            }
        }
    }
    (next, reward)
}

fn pendulum_step(p: &PendulumParams, s: &[f64], a: &[f64]) -> (Vec<f64>, f64) {
    let theta = s[1].atan2(s[0]);
    let speed = s[2];
    let torque = p.torque_limit * a[0];
    let err = wrap_angle(theta);
    let reward = -(err * err + 0.1 * speed * speed + 0.001 * torque * torque);
    let acc = 3.0 * p.gravity / (2.0 * p.length) * theta.sin()
        + 3.0 / (p.mass * p.length * p.length) * torque;
    let speed2 = (speed + p.dt * acc).clamp(-p.max_speed, p.max_speed);
    let theta2 = theta + p.dt * speed2;
    (vec![theta2.cos(), theta2.sin(), speed2], reward)
}

/// Row-wise [`env_step`] over a batch of states.
pub fn env_step_batch(spec: &EnvSpec, states: &Tensor, actions: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    if states.rows() != actions.rows() {
        return Err(Error::shape("state and action batches differ in length"));
    }
    let mut next = Vec::with_capacity(states.len());
    let mut rewards = Vec::with_capacity(states.rows());
    for i in 0..states.rows() {
        let (s, r) = env_step(spec, states.row_slice(i), actions.row_slice(i))?;
        next.extend(s);
        rewards.push(r);
    }
    Ok((Tensor::new(vec![states.rows(), spec.state_dim()], next)?, rewards))
}
