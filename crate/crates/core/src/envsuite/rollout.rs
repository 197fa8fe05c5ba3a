use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::env::{env_step_batch, EnvSpec};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Maps a batch of observations to a batch of actions.
///
/// `observe` turns true simulator states into what the policy consumes
/// (identity for scripted controllers, dataset normalization for learned
/// agents). Observation filters act between `observe` and `act`.
pub trait Policy {
    fn observe(&self, states: &Tensor) -> Result<Tensor> {
        Ok(states.clone())
    }

    fn act(&mut self, observations: &Tensor) -> Result<Tensor>;
}

/// Perturbs the policy's observation. Never sees or alters simulator state.
pub trait ObservationFilter {
    fn filter(&mut self, observations: &Tensor) -> Result<Tensor>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Undiscounted sum of rewards over the horizon.
    pub ret: f64,
    pub trajectory: Trajectory,
}

/// Run one episode per row of `initial` in lockstep for `spec.horizon` steps.
pub fn rollout_batch(
    spec: &EnvSpec,
    policy: &mut dyn Policy,
    initial: &Tensor,
    mut filter: Option<&mut dyn ObservationFilter>,
) -> Result<Vec<Rollout>> {
    if initial.cols() != spec.state_dim() {
        return Err(Error::shape(format!(
            "initial states have width {}, env state dim is {}",
            initial.cols(),
            spec.state_dim()
        )));
    }
    let n = initial.rows();
    let mut out: Vec<Rollout> = (0..n)
        .map(|_| Rollout {
            ret: 0.0,
            trajectory: Trajectory::default(),
        })
        .collect();
    let mut states = initial.clone();
    for _ in 0..spec.horizon {
        let mut obs = policy.observe(&states)?;
        if let Some(f) = filter.as_deref_mut() {
            obs = f.filter(&obs)?;
        }
        let actions = policy.act(&obs)?;
        if actions.rows() != n || actions.cols() != spec.action_dim() {
            return Err(Error::shape(format!(
                "policy returned {:?}, expected [{n}, {}]",
                actions.shape(),
                spec.action_dim()
            )));
        }
        let (next, rewards) = env_step_batch(spec, &states, &actions)?;
        for (i, r) in out.iter_mut().enumerate() {
            r.ret += rewards[i];
            let t = &mut r.trajectory;
            t.states.push(states.row_slice(i).to_vec());
            t.actions.push(actions.row_slice(i).to_vec());
            t.rewards.push(rewards[i]);
            t.next_states.push(next.row_slice(i).to_vec());
        }
        states = next;
    }
    Ok(out)
}

/// One episode whose initial state is drawn from `seed`.
pub fn rollout(
    spec: &EnvSpec,
    policy: &mut dyn Policy,
    seed: u64,
    filter: Option<&mut dyn ObservationFilter>,
) -> Result<Rollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Tensor::row(&spec.initial_state(&mut rng));
    Ok(rollout_batch(spec, policy, &init, filter)?.remove(0))
}

/// `count` initial states drawn from one seeded stream.
pub fn initial_states(spec: &EnvSpec, seed: u64, count: usize) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..count).map(|_| spec.initial_state(&mut rng)).collect();
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, spec.state_dim()]));
    }
    Tensor::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsuite::env::env_step;

    struct Constant(Vec<f64>);
    impl Policy for Constant {
        fn act(&mut self, obs: &Tensor) -> Result<Tensor> {
            let rows: Vec<Vec<f64>> = (0..obs.rows()).map(|_| self.0.clone()).collect();
            Tensor::from_rows(&rows)
        }
    }

    struct Shift(f64);
    impl ObservationFilter for Shift {
        fn filter(&mut self, obs: &Tensor) -> Result<Tensor> {
            Ok(obs.map(|v| v + self.0))
        }
    }

    #[test]
    fn zero_horizon_gives_empty_episode() {
        let mut spec = EnvSpec::pointmass();
        spec.horizon = 0;
        let r = rollout(&spec, &mut Constant(vec![0.0, 0.0]), 3, None).unwrap();
        assert_eq!(r.ret, 0.0);
        assert!(r.trajectory.states.is_empty());
    }

    #[test]
    fn rollout_is_deterministic() {
        let spec = EnvSpec::pendulum();
        let a = rollout(&spec, &mut Constant(vec![0.3]), 9, None).unwrap();
        let b = rollout(&spec, &mut Constant(vec![0.3]), 9, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_policy_at_rest_collects_horizon_times_rest_reward() {
        let mut spec = EnvSpec::pointmass();
        if let crate::envsuite::env::Dynamics::Pointmass(p) = &mut spec.dynamics {
            p.target = [0.3, -0.4];
        }
        // at rest at the origin, target at distance 0.5: reward -0.25 per step
        let init = Tensor::row(&[0.0; 4]);
        let r = rollout_batch(&spec, &mut Constant(vec![0.0, 0.0]), &init, None)
            .unwrap()
            .remove(0);
        let (_, per_step) = env_step(&spec, &[0.0; 4], &[0.0, 0.0]).unwrap();
        assert!((per_step + 0.25).abs() < 1e-15);
        assert!((r.ret - spec.horizon as f64 * per_step).abs() < 1e-9);
    }

    #[test]
    fn filter_does_not_touch_simulator_state() {
        let spec = EnvSpec::pointmass();
        let init = initial_states(&spec, 4, 3).unwrap();
        let clean = rollout_batch(&spec, &mut Constant(vec![0.2, -0.1]), &init, None).unwrap();
        let mut shift = Shift(0.5);
        let filtered =
            rollout_batch(&spec, &mut Constant(vec![0.2, -0.1]), &init, Some(&mut shift)).unwrap();
        assert_eq!(clean, filtered);
    }

    #[test]
    fn wrong_action_width_is_an_error() {
        let spec = EnvSpec::pointmass();
        assert!(matches!(
            rollout(&spec, &mut Constant(vec![0.0]), 0, None),
            Err(Error::Shape(_))
        ));
    }
}
