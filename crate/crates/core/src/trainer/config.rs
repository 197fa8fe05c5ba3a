use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::agent::Td3BcHyper;
use crate::attacks::{AttackKind, PerturbationBudget, RobustQConfig};
use crate::defenses::{DefenseKind, DefenseSpec, LAMBDA_GRID};
use crate::envsuite::{EnvSpec, GeneratorConfig, Tier};
use crate::error::{Error, Result};

/// Dataset to train on: either an existing directory or generation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub tier: Tier,
    pub size: usize,
    pub seed: u64,
    /// Load `data.csv` + `meta.json` from here instead of generating.
    pub path: Option<PathBuf>,
    pub generator: GeneratorConfig,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            tier: Tier::Expert,
            size: 20_000,
            seed: 0,
            path: None,
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub max_iterations: u64,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    /// Critic updates per actor (and target) update.
    pub policy_period: u64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub bc_alpha: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Iterations between log records; 0 logs only the final iteration.
    pub log_interval: u64,
    pub eval_episodes: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            batch_size: 256,
            gamma: 0.99,
            tau: 0.005,
            policy_period: 2,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            bc_alpha: 2.5,
            policy_noise: 0.2,
            noise_clip: 0.5,
            hidden: vec![64, 64],
            seed: 0,
            log_interval: 5_000,
            eval_episodes: 3,
        }
    }
}

impl TrainSection {
    pub fn hyper(&self) -> Td3BcHyper {
        Td3BcHyper {
            gamma: self.gamma,
            tau: self.tau,
            bc_alpha: self.bc_alpha,
            policy_noise: self.policy_noise,
            noise_clip: self.noise_clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseSection {
    pub kind: DefenseKind,
    pub lambda: f64,
    /// Budget of the attack that crafts training-time perturbations.
    pub generator: PerturbationBudget,
    /// Weights tried by a sweep.
    pub lambda_grid: Vec<f64>,
}

impl Default for DefenseSection {
    fn default() -> Self {
        let spec = DefenseSpec::default();
        Self {
            kind: spec.kind,
            lambda: spec.lambda,
            generator: spec.generator,
            lambda_grid: LAMBDA_GRID.to_vec(),
        }
    }
}

impl DefenseSection {
    pub fn spec(&self) -> DefenseSpec {
        DefenseSpec {
            kind: self.kind,
            lambda: self.lambda,
            generator: self.generator,
        }
    }
}

/// Evaluation protocol and robust-Q preparation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackEvalSection {
    pub attacks: Vec<AttackKind>,
    pub epsilon: f64,
    pub step_size: f64,
    pub num_steps: usize,
    pub episodes: usize,
    pub seeds: usize,
    pub examination_budget: usize,
    /// Action noise the attacker adds while probing the victim.
    pub probe_noise: f64,
    pub robust_q_steps: u64,
    pub robust_q_batch: usize,
    pub robust_q_lambda: f64,
    pub bootstrap: usize,
}

impl AttackEvalSection {
    pub fn budget(&self) -> PerturbationBudget {
        PerturbationBudget {
            epsilon: self.epsilon,
            step_size: self.step_size,
            num_steps: self.num_steps,
        }
    }
}

impl Default for AttackEvalSection {
    fn default() -> Self {
        Self {
            attacks: AttackKind::ALL.to_vec(),
            epsilon: 0.05,
            step_size: 0.01,
            num_steps: 5,
            episodes: 10,
            seeds: 5,
            examination_budget: 10_000,
            probe_noise: 0.3,
            robust_q_steps: 20_000,
            robust_q_batch: 256,
            robust_q_lambda: 1.0,
            bootstrap: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub env: EnvSpec,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub defense: DefenseSection,
    pub attack_eval: AttackEvalSection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::pointmass(),
            dataset: DatasetSection::default(),
            train: TrainSection::default(),
            defense: DefenseSection::default(),
            attack_eval: AttackEvalSection::default(),
        }
    }
}

impl TrainConfig {
    /// Robust-Q settings from `[attack_eval]`; the attacker's critic uses the
    /// same architecture as the victim's.
    pub fn robust_q_config(&self, seed: u64) -> RobustQConfig {
        let ae = &self.attack_eval;
        RobustQConfig {
            steps: ae.robust_q_steps,
            batch_size: ae.robust_q_batch,
            lambda: ae.robust_q_lambda,
            gamma: self.train.gamma,
            tau: self.train.tau,
            lr: self.train.critic_lr,
            hidden: self.train.hidden.clone(),
            action_budget: ae.budget(),
            seed,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "config file not found".into(),
            },
            _ => Error::Io(e),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let bad = |m: String| Err(Error::Config(m));
        if t.max_iterations < 1 {
            return bad("train.max_iterations must be >= 1".into());
        }
        if t.batch_size < 1 {
            return bad("train.batch_size must be >= 1".into());
        }
        if !(t.gamma > 0.0 && t.gamma < 1.0) {
            return bad(format!("train.gamma must be in (0, 1), got {}", t.gamma));
        }
        if !(t.tau > 0.0 && t.tau <= 1.0) {
            return bad(format!("train.tau must be in (0, 1], got {}", t.tau));
        }
        if t.policy_period < 1 {
            return bad("train.policy_period must be >= 1".into());
        }
        if !(t.actor_lr > 0.0 && t.critic_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if t.bc_alpha < 0.0 || t.policy_noise < 0.0 || t.noise_clip < 0.0 {
            return bad("bc_alpha, policy_noise and noise_clip must be >= 0".into());
        }
        if t.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive".into());
        }
        if self.dataset.size < 1 {
            return bad("dataset.size must be >= 1".into());
        }
        self.defense
            .spec()
            .validate()
            .map_err(|e| Error::Config(format!("defense: {e}")))?;
        if self.defense.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return bad("defense.lambda_grid entries must be >= 0".into());
        }
        let ae = &self.attack_eval;
        ae.budget()
            .validate()
            .map_err(|e| Error::Config(format!("attack_eval: {e}")))?;
        if ae.episodes < 1 || ae.seeds < 1 {
            return bad("attack_eval.episodes and attack_eval.seeds must be >= 1".into());
        }
        if !(ae.probe_noise >= 0.0 && ae.probe_noise.is_finite()) {
            return bad("attack_eval.probe_noise must be finite and >= 0".into());
        }
        if ae.examination_budget < 1 || ae.robust_q_batch < 1 || ae.robust_q_steps < 1 {
            return bad("robust-Q budget, batch and steps must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = TrainConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = TrainConfig::from_toml_str(
            r#"
            [env]
            horizon = 100
            [env.dynamics]
            name = "pendulum"
            gravity = 9.8

            [train]
            max_iterations = 10
            hidden = [16]

            [defense]
            kind = "actor_defense"
            lambda = 5.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.env.horizon, 100);
        assert_eq!(cfg.env.name(), "pendulum");
        assert_eq!(cfg.train.max_iterations, 10);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.defense.kind, DefenseKind::ActorDefense);
        assert_eq!(cfg.defense.generator.epsilon, 0.05);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "[train]\nmax_iter = 5\n",
            "[bogus]\nx = 1\n",
            "[defense]\nweight = 1.0\n",
            "[attack_eval]\neps = 0.1\n",
            "[defense.generator]\nsteps = 3\n",
            "[env.dynamics]\nname = \"pointmass\"\nfriction = 1.0\n",
        ] {
            assert!(TrainConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "[train]\nmax_iterations = 0\n",
            "[train]\nbatch_size = 0\n",
            "[train]\ngamma = 1.0\n",
            "[train]\npolicy_period = 0\n",
            "[defense]\nlambda = -1.0\n",
        ] {
            assert!(TrainConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
