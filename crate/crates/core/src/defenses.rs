//! Smoothness regularizers added to the critic or actor objective.

use serde::{Deserialize, Serialize};

use crate::attacks::{attack_actor, attack_critic, PerturbationBudget};
use crate::diffcore::{MlpNet, NetVars, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LAMBDA_GRID: [f64; 5] = [0.1, 0.5, 1.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    None,
    CriticDefense,
    ActorDefense,
}

impl DefenseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DefenseKind::None => "none",
            DefenseKind::CriticDefense => "critic_defense",
            DefenseKind::ActorDefense => "actor_defense",
        }
    }
}

/// Which regularizer to add, its weight, and the budget of the attack that
/// crafts `s~` for it. The critic defense is fed by the critic attack, the
/// actor defense by the actor attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseSpec {
    pub kind: DefenseKind,
    pub lambda: f64,
    pub generator: PerturbationBudget,
}

impl Default for DefenseSpec {
    fn default() -> Self {
        Self {
            kind: DefenseKind::None,
            lambda: 1.0,
            generator: PerturbationBudget::default(),
        }
    }
}

impl DefenseSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn critic(lambda: f64) -> Self {
        Self {
            kind: DefenseKind::CriticDefense,
            lambda,
            ..Self::default()
        }
    }

    pub fn actor(lambda: f64) -> Self {
        Self {
            kind: DefenseKind::ActorDefense,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("defense weight must be >= 0, got {}", self.lambda)));
        }
        self.generator.validate()
    }

    /// Label used in run databases and reports.
    pub fn method_label(&self) -> String {
        match self.kind {
            DefenseKind::None => "TD3BC".to_string(),
            DefenseKind::CriticDefense => format!("TD3BC+CD(l={})", self.lambda),
            DefenseKind::ActorDefense => format!("TD3BC+AD(l={})", self.lambda),
        }
    }

    /// Perturbed states for this defense, or `None` when it is off.
    pub fn generate(&self, s: &Tensor, actor: &MlpNet, critic1: &MlpNet) -> Result<Option<Tensor>> {
        match self.kind {
            DefenseKind::None => Ok(None),
            DefenseKind::CriticDefense => Ok(Some(attack_critic(s, actor, critic1, &self.generator)?)),
            DefenseKind::ActorDefense => Ok(Some(attack_actor(s, actor, &self.generator)?)),
        }
    }
}

/// `mean[(Q(s~, a) - Q(s, a))^2]` on the tape, through parameters bound
/// with [`MlpNet::bind`]. `q_clean` is the node for `Q(s, a)`.
pub fn critic_smoothness(
    tape: &mut Tape,
    critic: &MlpNet,
    vars: &NetVars,
    perturbed: &Tensor,
    actions: Var,
    q_clean: Var,
) -> Result<Var> {
    let sp = tape.constant(perturbed.clone());
    let input = tape.concat_cols(sp, actions)?;
    let q_adv = critic.apply(tape, vars, input)?;
    let diff = tape.sub(q_adv, q_clean)?;
    let sq = tape.square(diff);
    Ok(tape.mean_all(sq))
}

/// `mean ||pi(s~) - pi(s)||^2` over rows. `pi_clean` is the node for `pi(s)`.
pub fn actor_smoothness(
    tape: &mut Tape,
    actor: &MlpNet,
    vars: &NetVars,
    perturbed: &Tensor,
    pi_clean: Var,
) -> Result<Var> {
    let sp = tape.constant(perturbed.clone());
    let pi_adv = actor.apply(tape, vars, sp)?;
    let diff = tape.sub(pi_adv, pi_clean)?;
    let sq = tape.square(diff);
    let per_row = tape.sum_cols(sq);
    Ok(tape.mean_all(per_row))
}

/// Held-out estimate of `E ||pi(s~) - pi(s)||^2` with `s~` from the actor attack.
pub fn actor_sensitivity(actor: &MlpNet, states: &Tensor, budget: &PerturbationBudget) -> Result<f64> {
    let adv = attack_actor(states, actor, budget)?;
    let a = actor.forward(states)?;
    let b = actor.forward(&adv)?;
    let total: f64 = a.zip_map(&b, |x, y| (x - y) * (x - y))?.sum();
    Ok(total / states.rows().max(1) as f64)
}

/// Held-out estimate of `E[(Q(s~, a) - Q(s, a))^2]` with `s~` from the
/// critic attack against `(actor, critic)`.
pub fn critic_sensitivity(
    actor: &MlpNet,
    critic: &MlpNet,
    states: &Tensor,
    actions: &Tensor,
    budget: &PerturbationBudget,
) -> Result<f64> {
    let adv = attack_critic(states, actor, critic, budget)?;
    let q = critic.forward(&states.concat_cols(actions)?)?;
    let qa = critic.forward(&adv.concat_cols(actions)?)?;
    Ok(q.zip_map(&qa, |x, y| (x - y) * (x - y))?.mean())
}
