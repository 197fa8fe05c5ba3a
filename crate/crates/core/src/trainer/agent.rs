use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::defenses::{actor_smoothness, critic_smoothness, DefenseKind, DefenseSpec};
use crate::diffcore::{Activation, MlpNet, MomentOptimizer, NetGrads, Tape, Tensor};
use crate::envsuite::{Normalizer, Policy};
use crate::error::{Error, Result};

/// TD3+BC constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Td3BcHyper {
    pub gamma: f64,
    pub tau: f64,
    pub bc_alpha: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
}

impl Default for Td3BcHyper {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            bc_alpha: 2.5,
            policy_noise: 0.2,
            noise_clip: 0.5,
        }
    }
}

/// Live networks, their targets and optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub actor: MlpNet,
    pub critic1: MlpNet,
    pub critic2: MlpNet,
    pub target_actor: MlpNet,
    pub target_critic1: MlpNet,
    pub target_critic2: MlpNet,
    pub actor_opt: MomentOptimizer,
    pub critic1_opt: MomentOptimizer,
    pub critic2_opt: MomentOptimizer,
    /// Critic updates performed so far.
    pub iteration: u64,
    pub actor_updates: u64,
}

pub fn actor_dims(state_dim: usize, hidden: &[usize], action_dim: usize) -> Vec<usize> {
    let mut d = vec![state_dim];
    d.extend_from_slice(hidden);
    d.push(action_dim);
    d
}

pub fn critic_dims(state_dim: usize, hidden: &[usize], action_dim: usize) -> Vec<usize> {
    let mut d = vec![state_dim + action_dim];
    d.extend_from_slice(hidden);
    d.push(1);
    d
}

/// Fresh twin critic with target copy and optimizer, as used by both the
/// trainer and the robust-Q fit.
pub(crate) fn new_critic(dims: &[usize], lr: f64, rng: &mut ChaCha8Rng) -> Result<(MlpNet, MomentOptimizer)> {
    let c = MlpNet::new(dims, Activation::None, rng)?;
    let opt = MomentOptimizer::new(&c, lr);
    Ok((c, opt))
}

impl AgentState {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        actor_lr: f64,
        critic_lr: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = MlpNet::new(&actor_dims(state_dim, hidden, action_dim), Activation::Tanh, &mut rng)?;
        let cd = critic_dims(state_dim, hidden, action_dim);
        let (critic1, critic1_opt) = new_critic(&cd, critic_lr, &mut rng)?;
        let (critic2, critic2_opt) = new_critic(&cd, critic_lr, &mut rng)?;
        Ok(Self {
            actor_opt: MomentOptimizer::new(&actor, actor_lr),
            target_actor: actor.clone(),
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            actor,
            critic1,
            critic2,
            critic1_opt,
            critic2_opt,
            iteration: 0,
            actor_updates: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// `target <- tau * live + (1 - tau) * target` for all three pairs.
    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        self.target_actor.soft_update_from(&self.actor, tau)?;
        self.target_critic1.soft_update_from(&self.critic1, tau)?;
        self.target_critic2.soft_update_from(&self.critic2, tau)
    }

    pub fn q1(&self, s: &Tensor, a: &Tensor) -> Result<Tensor> {
        self.critic1.forward(&s.concat_cols(a)?)
    }
}

/// Normalized training batch. `reward` is `[n, 1]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub next_states: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn check(&self, agent: &AgentState) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let n = self.len();
        let ok = self.states.shape() == [n, agent.state_dim()]
            && self.next_states.shape() == [n, agent.state_dim()]
            && self.actions.shape() == [n, agent.action_dim()]
            && self.rewards.shape() == [n, 1];
        if !ok {
            return Err(Error::shape("batch tensors do not match the agent"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CriticReport {
    /// `mean (Q_i(s, a) - y)^2`, per critic.
    pub td: [f64; 2],
    /// Unweighted smoothness penalty, per critic (0 without a critic defense).
    pub defense: [f64; 2],
}

impl CriticReport {
    pub fn loss(&self) -> f64 {
        self.td[0] + self.td[1]
    }

    pub fn defense_term(&self) -> f64 {
        self.defense[0] + self.defense[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActorReport {
    /// Full actor objective including the defense term.
    pub loss: f64,
    pub q_term: f64,
    pub bc_term: f64,
    pub lambda_bc: f64,
    /// Unweighted smoothness penalty (0 without an actor defense).
    pub defense: f64,
}

/// Clipped double-Q regression step for both critics.
///
/// `y = r + gamma * min(Q'_1, Q'_2)(s', clip(pi'(s') + clip(noise)))`. Episode
/// ends in the data are time limits, so the target always bootstraps.
pub fn policy_evaluation(
    agent: &mut AgentState,
    batch: &Batch,
    hyper: &Td3BcHyper,
    defense: &DefenseSpec,
    noise_rng: &mut ChaCha8Rng,
) -> Result<CriticReport> {
    batch.check(agent)?;
    let n = batch.len();
    let m = agent.action_dim();
    let mut next_a = agent.target_actor.forward(&batch.next_states)?;
    if hyper.policy_noise > 0.0 {
        let normal = Normal::new(0.0, hyper.policy_noise).map_err(|e| Error::invalid(e.to_string()))?;
        for v in next_a.data_mut() {
            let eps = normal.sample(noise_rng).clamp(-hyper.noise_clip, hyper.noise_clip);
            *v = (*v + eps).clamp(-1.0, 1.0);
        }
    }
    let sa_next = batch.next_states.concat_cols(&next_a)?;
    let tq1 = agent.target_critic1.forward(&sa_next)?;
    let tq2 = agent.target_critic2.forward(&sa_next)?;
    let mut y = Tensor::zeros(&[n, 1]);
    for i in 0..n {
        let q = tq1.get(i, 0).min(tq2.get(i, 0));
        y.set(i, 0, batch.rewards.get(i, 0) + hyper.gamma * q);
    }
    debug_assert_eq!(next_a.cols(), m);

    let perturbed = if defense.kind == DefenseKind::CriticDefense && defense.lambda > 0.0 {
        defense.generate(&batch.states, &agent.actor, &agent.critic1)?
    } else {
        None
    };

    let mut report = CriticReport::default();
    for which in 0..2 {
        let (critic, opt) = if which == 0 {
            (&mut agent.critic1, &mut agent.critic1_opt)
        } else {
            (&mut agent.critic2, &mut agent.critic2_opt)
        };
        let mut tape = Tape::new();
        let vars = critic.bind(&mut tape, true);
        let s = tape.constant(batch.states.clone());
        let a = tape.constant(batch.actions.clone());
        let sa = tape.concat_cols(s, a)?;
        let q = critic.apply(&mut tape, &vars, sa)?;
        let yv = tape.constant(y.clone());
        let err = tape.sub(q, yv)?;
        let sq = tape.square(err);
        let td = tape.mean_all(sq);
        report.td[which] = tape.value(td).item()?;
        let mut total = td;
        if let Some(sp) = &perturbed {
            let pen = critic_smoothness(&mut tape, critic, &vars, sp, a, q)?;
            report.defense[which] = tape.value(pen).item()?;
            let weighted = tape.scale(pen, defense.lambda);
            total = tape.add(total, weighted)?;
        }
        let loss = tape.value(total).item()?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "critic {} loss is {loss} (td {}, defense {})",
                which + 1,
                report.td[which],
                report.defense[which]
            )));
        }
        let mut grads = tape.backward(total)?;
        let g = NetGrads::collect(&mut grads, critic, &vars);
        opt.step(critic, &g)?;
    }
    agent.iteration += 1;
    Ok(report)
}

/// Behavior-regularized deterministic policy step on the actor only.
///
/// `loss = -lambda_bc * mean Q_1(s, pi(s)) + mean ||pi(s) - a||^2`, with
/// `lambda_bc = alpha / mean |Q_1(s, pi(s))|` treated as a constant.
pub fn policy_improvement(
    agent: &mut AgentState,
    batch: &Batch,
    hyper: &Td3BcHyper,
    defense: &DefenseSpec,
) -> Result<ActorReport> {
    batch.check(agent)?;
    let perturbed = if defense.kind == DefenseKind::ActorDefense && defense.lambda > 0.0 {
        defense.generate(&batch.states, &agent.actor, &agent.critic1)?
    } else {
        None
    };
    let mut tape = Tape::new();
    let pv = agent.actor.bind(&mut tape, true);
    let s = tape.constant(batch.states.clone());
    let pi = agent.actor.apply(&mut tape, &pv, s)?;
    let cv = agent.critic1.bind(&mut tape, false);
    let spi = tape.concat_cols(s, pi)?;
    let q = agent.critic1.apply(&mut tape, &cv, spi)?;
    let mean_abs_q = tape.value(q).data().iter().map(|v| v.abs()).sum::<f64>() / batch.len() as f64;
    let lambda_bc = hyper.bc_alpha / mean_abs_q.max(1e-12);
    let q_mean = tape.mean_all(q);
    let q_term = tape.scale(q_mean, -lambda_bc);
    let a = tape.constant(batch.actions.clone());
    let diff = tape.sub(pi, a)?;
    let sq = tape.square(diff);
    let per_row = tape.sum_cols(sq);
    let bc = tape.mean_all(per_row);
    let mut total = tape.add(q_term, bc)?;
    let mut report = ActorReport {
        q_term: tape.value(q_term).item()?,
        bc_term: tape.value(bc).item()?,
        lambda_bc,
        ..ActorReport::default()
    };
    if let Some(sp) = &perturbed {
        let pen = actor_smoothness(&mut tape, &agent.actor, &pv, sp, pi)?;
        report.defense = tape.value(pen).item()?;
        let weighted = tape.scale(pen, defense.lambda);
        total = tape.add(total, weighted)?;
    }
    report.loss = tape.value(total).item()?;
    if !report.loss.is_finite() {
        return Err(Error::Numerical(format!(
            "actor loss is {} (q term {}, bc {}, lambda_bc {}, defense {})",
            report.loss, report.q_term, report.bc_term, report.lambda_bc, report.defense
        )));
    }
    let mut grads = tape.backward(total)?;
    let g = NetGrads::collect(&mut grads, &agent.actor, &pv);
    agent.actor_opt.step(&mut agent.actor, &g)?;
    agent.actor_updates += 1;
    Ok(report)
}

/// Deterministic learned policy acting on normalized observations.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub actor: MlpNet,
    pub normalizer: Normalizer,
}

impl Policy for LearnedPolicy {
    fn observe(&self, states: &Tensor) -> Result<Tensor> {
        self.normalizer.normalize(states)
    }

    fn act(&mut self, observations: &Tensor) -> Result<Tensor> {
        self.actor.forward(observations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent() -> AgentState {
        AgentState::new(3, 2, &[8, 8], 3e-4, 3e-4, 11).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut t = |r: usize, c: usize| {
            Tensor::new(vec![r, c], (0..r * c).map(|_| normal.sample(&mut rng)).collect()).unwrap()
        };
        let actions = t(n, 2).map(|v| v.clamp(-1.0, 1.0));
        Batch {
            indices: (0..n).collect(),
            states: t(n, 3),
            actions,
            rewards: t(n, 1),
            next_states: t(n, 3),
        }
    }

    #[test]
    fn zero_weight_critic_defense_matches_baseline() {
        let b = batch(16, 1);
        let h = Td3BcHyper::default();
        let mut a1 = agent();
        let mut a2 = agent();
        let r1 = policy_evaluation(&mut a1, &b, &h, &DefenseSpec::none(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let r2 = policy_evaluation(&mut a2, &b, &h, &DefenseSpec::critic(0.0), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(r1.td, r2.td);
        assert_eq!(a1, a2);
    }

    #[test]
    fn zero_budget_generator_gives_zero_defense_term() {
        let b = batch(16, 2);
        let h = Td3BcHyper::default();
        let mut d = DefenseSpec::critic(1.0);
        d.generator.epsilon = 0.0;
        let r = policy_evaluation(&mut agent(), &b, &h, &d, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.defense, [0.0, 0.0]);
        let mut d = DefenseSpec::actor(1.0);
        d.generator.epsilon = 0.0;
        let r = policy_improvement(&mut agent(), &b, &h, &d).unwrap();
        assert_eq!(r.defense, 0.0);
    }

    #[test]
    fn single_transition_regression_loss() {
        let b = batch(1, 3);
        let h = Td3BcHyper {
            gamma: 0.0,
            ..Td3BcHyper::default()
        };
        let mut ag = agent();
        let q1 = ag.q1(&b.states, &b.actions).unwrap().get(0, 0);
        let q2 = ag
            .critic2
            .forward(&b.states.concat_cols(&b.actions).unwrap())
            .unwrap()
            .get(0, 0);
        let r = b.rewards.get(0, 0);
        let rep = policy_evaluation(&mut ag, &b, &h, &DefenseSpec::none(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((rep.td[0] - (q1 - r).powi(2)).abs() < 1e-12);
        assert!((rep.td[1] - (q2 - r).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn critic_step_touches_only_critics() {
        let b = batch(8, 4);
        let mut ag = agent();
        let before = ag.clone();
        policy_evaluation(&mut ag, &b, &Td3BcHyper::default(), &DefenseSpec::critic(1.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ag.actor, before.actor);
        assert_eq!(ag.target_critic1, before.target_critic1);
        assert_ne!(ag.critic1, before.critic1);
        assert_ne!(ag.critic2, before.critic2);
        assert_eq!(ag.iteration, 1);
    }

    #[test]
    fn constant_critic_leaves_pure_behavior_cloning() {
        let b = batch(8, 5);
        let mut ag = agent();
        // zero the last critic layer and set its bias: Q is a constant
        let mut params: Vec<Tensor> = ag.critic1.params().cloned().collect();
        let k = params.len();
        params[k - 2] = Tensor::zeros(params[k - 2].shape());
        params[k - 1] = Tensor::full(&[1, 1], 7.0);
        for (p, v) in ag.critic1.params_mut().zip(params) {
            *p = v;
        }
        let mut bc_only = ag.clone();
        bc_only.critic1 = MlpNet::zeros(ag.critic1.layer_dims(), Activation::None).unwrap();
        let h = Td3BcHyper::default();
        let rep = policy_improvement(&mut ag, &b, &h, &DefenseSpec::none()).unwrap();
        policy_improvement(&mut bc_only, &b, &h, &DefenseSpec::none()).unwrap();
        assert!((rep.lambda_bc - 2.5 / 7.0).abs() < 1e-12);
        assert_eq!(ag.actor, bc_only.actor);
        assert_eq!(ag.critic1_opt, bc_only.critic1_opt);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let b = Batch {
            indices: vec![],
            states: Tensor::zeros(&[0, 3]),
            actions: Tensor::zeros(&[0, 2]),
            rewards: Tensor::zeros(&[0, 1]),
            next_states: Tensor::zeros(&[0, 3]),
        };
        let mut ag = agent();
        let h = Td3BcHyper::default();
        assert!(policy_evaluation(&mut ag, &b, &h, &DefenseSpec::none(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(policy_improvement(&mut ag, &b, &h, &DefenseSpec::none()).is_err());
    }

    #[test]
    fn soft_update_blends_elementwise() {
        let mut ag = agent();
        let b = batch(8, 6);
        policy_evaluation(&mut ag, &b, &Td3BcHyper::default(), &DefenseSpec::none(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let old = ag.target_critic1.clone();
        ag.soft_update_targets(0.25).unwrap();
        for ((t, o), l) in ag.target_critic1.params().zip(old.params()).zip(ag.critic1.params()) {
            for ((tv, ov), lv) in t.data().iter().zip(o.data()).zip(l.data()) {
                assert_eq!(*tv, 0.25 * lv + 0.75 * ov);
            }
        }
    }
}
