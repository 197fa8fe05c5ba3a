use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{policy_evaluation, policy_improvement, AgentState, Batch, LearnedPolicy};
use super::checkpoint::{AgentCheckpoint, AgentInfo, FORMAT_VERSION};
use super::config::TrainConfig;
use crate::defenses::DefenseKind;
use crate::diffcore::Tensor;
use crate::envsuite::{initial_states, rollout_batch, Dataset, EnvSpec, Normalizer};
use crate::error::{Error, Result};

/// Dataset columns in the form the networks consume.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub next_states: Tensor,
}

impl PreparedData {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let t = &dataset.transitions;
        let norm = &dataset.normalizer;
        Ok(Self {
            states: norm.normalize(&t.states_tensor())?,
            actions: t.actions_tensor(),
            rewards: Tensor::new(vec![t.len(), 1], t.rewards.clone())?,
            next_states: norm.normalize(&t.next_states_tensor())?,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, indices: Vec<usize>) -> Batch {
        Batch {
            states: self.states.gather_rows(&indices),
            actions: self.actions.gather_rows(&indices),
            rewards: self.rewards.gather_rows(&indices),
            next_states: self.next_states.gather_rows(&indices),
            indices,
        }
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, size: usize, rng: &mut ChaCha8Rng) -> Batch {
        let n = self.len();
        self.batch((0..size).map(|_| rng.random_range(0..n)).collect())
    }
}

/// One line of the JSON-lines training log. Losses are averaged over the
/// updates since the previous record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: u64,
    pub critic_loss: f64,
    /// `None` when no actor update happened in the interval.
    pub actor_loss: Option<f64>,
    /// Unweighted penalty of the active defense (0 when off).
    pub defense_term: f64,
    pub clean_eval_return: f64,
}

/// Mean clean return of `episodes` rollouts of `actor` from seeded starts.
pub fn clean_return(spec: &EnvSpec, policy: &LearnedPolicy, seed: u64, episodes: usize) -> Result<f64> {
    if episodes == 0 {
        return Ok(0.0);
    }
    let inits = initial_states(spec, seed, episodes)?;
    let mut p = policy.clone();
    let rolls = rollout_batch(spec, &mut p, &inits, None)?;
    Ok(rolls.iter().map(|r| r.ret).sum::<f64>() / episodes as f64)
}

pub(crate) fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Default)]
struct Window {
    critic: f64,
    critic_n: u64,
    actor: f64,
    actor_n: u64,
    defense: f64,
    defense_n: u64,
}

/// Run the TD3+BC loop: `K` critic updates, and an actor update plus soft
/// target update after every `policy_period`-th critic update. Each log
/// record goes to `log` as it is produced.
pub fn train(config: &TrainConfig, dataset: &Dataset, log: &mut dyn FnMut(&LogRecord) -> Result<()>) -> Result<AgentCheckpoint> {
    config.validate()?;
    if dataset.env != config.env {
        return Err(Error::Config(format!(
            "dataset was generated for {:?}, config describes {:?}",
            dataset.env, config.env
        )));
    }
    let t = &config.train;
    let hyper = t.hyper();
    let defense = config.defense.spec();
    let data = PreparedData::new(dataset)?;
    let mut agent = AgentState::new(
        dataset.env.state_dim(),
        dataset.env.action_dim(),
        &t.hidden,
        t.actor_lr,
        t.critic_lr,
        t.seed,
    )?;
    let mut batch_rng = seeded_stream(t.seed, 1);
    let mut noise_rng = seeded_stream(t.seed, 2);
    let eval_seed = t.seed ^ 0xe7a1_0000;
    let mut window = Window::default();

    for k in 1..=t.max_iterations {
        let batch = data.sample(t.batch_size, &mut batch_rng);
        let crep = policy_evaluation(&mut agent, &batch, &hyper, &defense, &mut noise_rng)
            .map_err(|e| diagnose(e, k, &batch, "policy evaluation"))?;
        window.critic += crep.loss();
        window.critic_n += 1;
        if defense.kind == DefenseKind::CriticDefense {
            window.defense += crep.defense_term();
            window.defense_n += 1;
        }
        if k % t.policy_period == 0 {
            let arep = policy_improvement(&mut agent, &batch, &hyper, &defense)
                .map_err(|e| diagnose(e, k, &batch, "policy improvement"))?;
            agent.soft_update_targets(hyper.tau)?;
            window.actor += arep.loss;
            window.actor_n += 1;
            if defense.kind == DefenseKind::ActorDefense {
                window.defense += arep.defense;
                window.defense_n += 1;
            }
        }
        let due = (t.log_interval > 0 && k % t.log_interval == 0) || k == t.max_iterations;
        if due {
            let policy = LearnedPolicy {
                actor: agent.actor.clone(),
                normalizer: dataset.normalizer.clone(),
            };
            let rec = LogRecord {
                iter: k,
                critic_loss: window.critic / window.critic_n.max(1) as f64,
                actor_loss: (window.actor_n > 0).then(|| window.actor / window.actor_n as f64),
                defense_term: if window.defense_n > 0 {
                    window.defense / window.defense_n as f64
                } else {
                    0.0
                },
                clean_eval_return: clean_return(&dataset.env, &policy, eval_seed, t.eval_episodes)?,
            };
            log(&rec)?;
            window = Window::default();
        }
    }

    let info = AgentInfo {
        format_version: FORMAT_VERSION,
        method: defense.method_label(),
        env: dataset.env.clone(),
        tier: dataset.tier,
        normalizer: dataset.normalizer.clone(),
        ref_random_score: dataset.ref_random_score,
        ref_expert_score: dataset.ref_expert_score,
        train_seed: t.seed,
        dataset_seed: dataset.seed,
        defense,
        hidden: t.hidden.clone(),
    };
    Ok(AgentCheckpoint { agent, info })
}

/// Train and collect the log in memory.
pub fn train_collect(config: &TrainConfig, dataset: &Dataset) -> Result<(AgentCheckpoint, Vec<LogRecord>)> {
    let mut records = Vec::new();
    let ckpt = train(config, dataset, &mut |r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok((ckpt, records))
}

/// Log sink writing one JSON object per line.
pub fn json_lines_sink<W: Write>(w: &mut W) -> impl FnMut(&LogRecord) -> Result<()> + '_ {
    move |r| {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

fn diagnose(e: Error, iteration: u64, batch: &Batch, phase: &str) -> Error {
    match e {
        Error::Numerical(msg) => {
            let shown: Vec<usize> = batch.indices.iter().copied().take(32).collect();
            Error::Numerical(format!(
                "{phase} at iteration {iteration}: {msg}; batch ids (first {} of {}): {shown:?}",
                shown.len(),
                batch.len()
            ))
        }
        other => other,
    }
}

/// Normalizer-aware policy for a trained checkpoint.
pub fn policy_of(ckpt: &AgentCheckpoint) -> LearnedPolicy {
    LearnedPolicy {
        actor: ckpt.agent.actor.clone(),
        normalizer: ckpt.info.normalizer.clone(),
    }
}

/// Rows of `normalizer`-space states drawn from held-out starts and clean
/// rollouts of `policy`; used for sensitivity measurements.
pub fn held_out_states(spec: &EnvSpec, policy: &LearnedPolicy, normalizer: &Normalizer, seed: u64, episodes: usize, stride: usize) -> Result<Tensor> {
    let inits = initial_states(spec, seed, episodes)?;
    let mut p = policy.clone();
    let rolls = rollout_batch(spec, &mut p, &inits, None)?;
    let mut rows = Vec::new();
    for r in &rolls {
        for s in r.trajectory.states.iter().step_by(stride.max(1)) {
            rows.push(s.clone());
        }
    }
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, spec.state_dim()]));
    }
    normalizer.normalize(&Tensor::from_rows(&rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsuite::{generate_dataset_with, GeneratorConfig, Tier};

    fn tiny() -> (TrainConfig, Dataset) {
        let mut cfg = TrainConfig::default();
        cfg.env.horizon = 20;
        cfg.train.max_iterations = 6;
        cfg.train.batch_size = 8;
        cfg.train.hidden = vec![8];
        cfg.train.log_interval = 3;
        cfg.train.eval_episodes = 2;
        let gen = GeneratorConfig {
            reference_episodes: 5,
            ..GeneratorConfig::default()
        };
        let ds = generate_dataset_with(&cfg.env, Tier::Expert, 100, 0, &gen).unwrap();
        (cfg, ds)
    }

    #[test]
    fn schedule_counts_updates() {
        let (mut cfg, ds) = tiny();
        let (ck, log) = train_collect(&cfg, &ds).unwrap();
        assert_eq!(ck.agent.iteration, 6);
        assert_eq!(ck.agent.actor_updates, 3);
        assert_eq!(log.len(), 2);
        assert_eq!(log[1].iter, 6);

        cfg.train.max_iterations = 1;
        let one = generate_dataset_with(&cfg.env, Tier::Expert, 1, 0, &GeneratorConfig {
            reference_episodes: 2,
            ..GeneratorConfig::default()
        })
        .unwrap();
        cfg.train.batch_size = 1;
        let (ck, log) = train_collect(&cfg, &one).unwrap();
        assert_eq!(ck.agent.iteration, 1);
        assert_eq!(ck.agent.actor_updates, 0);
        assert_eq!(ck.agent.actor_opt.step_count(), 0);
        assert_eq!(log[0].actor_loss, None);
    }

    #[test]
    fn training_is_deterministic() {
        let (mut cfg, ds) = tiny();
        cfg.defense.kind = DefenseKind::ActorDefense;
        let (a, la) = train_collect(&cfg, &ds).unwrap();
        let (b, lb) = train_collect(&cfg, &ds).unwrap();
        assert_eq!(a.agent, b.agent);
        assert_eq!(la, lb);
        assert!(la.iter().all(|r| r.defense_term >= 0.0));
    }

    #[test]
    fn env_mismatch_is_rejected() {
        let (mut cfg, ds) = tiny();
        cfg.env.horizon = 21;
        assert!(matches!(train_collect(&cfg, &ds), Err(Error::Config(_))));
    }

    #[test]
    fn nan_loss_aborts_with_diagnostics() {
        let (cfg, mut ds) = tiny();
        for r in &mut ds.transitions.rewards {
            *r = f64::NAN;
        }
        match train_collect(&cfg, &ds) {
            Err(Error::Numerical(msg)) => {
                assert!(msg.contains("iteration 1"), "{msg}");
                assert!(msg.contains("batch ids"), "{msg}");
            }
            other => panic!("expected a numerical failure, got {other:?}"),
        }
    }
}
