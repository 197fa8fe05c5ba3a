use serde::{Deserialize, Serialize};

use super::stats::normalize_score;
use crate::attacks::{AttackKind, AttackSpec, Attacker};
use crate::diffcore::MlpNet;
use crate::envsuite::{initial_states, rollout_batch, ObservationFilter, Tier};
use crate::error::{Error, Result};
use crate::trainer::AgentCheckpoint;

/// Evaluation seed `k` draws its start states from `EVAL_SEED_BASE + k`,
/// keeping them apart from the seeds used for data generation.
pub const EVAL_SEED_BASE: u64 = 0x5eed_0000;

/// One (checkpoint, attack, evaluation seed) record of the run database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunScores {
    pub task: String,
    pub tier: Tier,
    pub method: String,
    pub attack: AttackKind,
    pub epsilon: f64,
    pub seed: u64,
    pub train_seed: u64,
    /// Content hash of the evaluated checkpoint.
    pub checkpoint: String,
    pub returns: Vec<f64>,
    /// Mean return over episodes, normalized with the dataset references.
    pub normalized: f64,
}

impl RunScores {
    pub fn validate(&self) -> Result<()> {
        if self.returns.is_empty() {
            return Err(Error::invalid("run has no episodes"));
        }
        if !self.normalized.is_finite() {
            return Err(Error::Numerical(format!("normalized score is {}", self.normalized)));
        }
        Ok(())
    }

    pub fn key(&self) -> (&str, AttackKind, u64) {
        (&self.checkpoint, self.attack, self.seed)
    }
}

/// Roll the agent out under `attack` for `episodes` episodes on each of
/// `seeds` evaluation seeds. `robust_q` is required for the robust-critic
/// attack and ignored otherwise.
pub fn evaluate(
    ckpt: &AgentCheckpoint,
    attack: &AttackSpec,
    robust_q: Option<&MlpNet>,
    episodes: usize,
    seeds: usize,
) -> Result<Vec<RunScores>> {
    if episodes == 0 || seeds == 0 {
        return Err(Error::invalid("evaluation needs at least one episode and one seed"));
    }
    let info = &ckpt.info;
    let critic = match attack.kind {
        AttackKind::Critic => Some(ckpt.agent.critic1.clone()),
        AttackKind::RobustCritic => match robust_q {
            Some(q) => Some(q.clone()),
            None => {
                return Err(Error::invalid(
                    "robust_critic needs a robust Q; run prepare-robust-q (train_robust_q) first",
                ))
            }
        },
        _ => None,
    };
    let hash = ckpt.content_hash();
    let mut out = Vec::with_capacity(seeds);
    for seed in 0..seeds as u64 {
        let inits = initial_states(&info.env, EVAL_SEED_BASE + seed, episodes)?;
        let mut attacker = Attacker::new(*attack, ckpt.agent.actor.clone(), critic.clone(), seed)?;
        let mut policy = ckpt.policy();
        let filter: Option<&mut dyn ObservationFilter> = match attack.kind {
            AttackKind::None => None,
            _ => Some(&mut attacker),
        };
        let rolls = rollout_batch(&info.env, &mut policy, &inits, filter)?;
        let returns: Vec<f64> = rolls.iter().map(|r| r.ret).collect();
        let raw = returns.iter().sum::<f64>() / returns.len() as f64;
        let run = RunScores {
            task: info.env.name().to_string(),
            tier: info.tier,
            method: info.method.clone(),
            attack: attack.kind,
            epsilon: attack.budget.epsilon,
            seed,
            train_seed: info.train_seed,
            checkpoint: hash.clone(),
            normalized: normalize_score(raw, info.ref_random_score, info.ref_expert_score)?,
            returns,
        };
        run.validate()?;
        out.push(run);
    }
    Ok(out)
}
