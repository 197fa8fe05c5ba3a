use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::agent::{AgentState, LearnedPolicy};
use crate::defenses::DefenseSpec;
use crate::diffcore::checkpoint::{encode_floats, load_optimizer, save_optimizer};
use crate::diffcore::{load_net, save_net, MlpNet, NetRole};
use crate::envsuite::{EnvSpec, Normalizer, Tier};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Everything besides network weights needed to evaluate an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentInfo {
    pub format_version: u32,
    pub method: String,
    pub env: EnvSpec,
    pub tier: Tier,
    pub normalizer: Normalizer,
    pub ref_random_score: f64,
    pub ref_expert_score: f64,
    pub train_seed: u64,
    pub dataset_seed: u64,
    pub defense: DefenseSpec,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Counters {
    iteration: u64,
    actor_updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentCheckpoint {
    pub agent: AgentState,
    pub info: AgentInfo,
}

const NETS: [NetRole; 6] = [
    NetRole::Actor,
    NetRole::Critic1,
    NetRole::Critic2,
    NetRole::TargetActor,
    NetRole::TargetCritic1,
    NetRole::TargetCritic2,
];

fn net_of(agent: &AgentState, role: NetRole) -> &MlpNet {
    match role {
        NetRole::Actor => &agent.actor,
        NetRole::Critic1 => &agent.critic1,
        NetRole::Critic2 => &agent.critic2,
        NetRole::TargetActor => &agent.target_actor,
        NetRole::TargetCritic1 => &agent.target_critic1,
        NetRole::TargetCritic2 => &agent.target_critic2,
        NetRole::RobustQ => unreachable!("not part of an agent"),
    }
}

impl AgentCheckpoint {
    /// Directory layout: one `<role>.{bin,json}` pair per network,
    /// `<net>_opt.{bin,json}` per optimizer, and `agent.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for role in NETS {
            save_net(&dir.join(role.file_stem()), net_of(&self.agent, role), role)?;
        }
        save_optimizer(&dir.join("actor_opt"), &self.agent.actor_opt, "actor")?;
        save_optimizer(&dir.join("critic1_opt"), &self.agent.critic1_opt, "critic1")?;
        save_optimizer(&dir.join("critic2_opt"), &self.agent.critic2_opt, "critic2")?;
        fs::write(dir.join("agent.json"), serde_json::to_string_pretty(&self.info)?)?;
        fs::write(
            dir.join("counters.json"),
            serde_json::to_string(&Counters {
                iteration: self.agent.iteration,
                actor_updates: self.agent.actor_updates,
            })?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let agent_json = dir.join("agent.json");
        let text = fs::read(&agent_json).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: agent_json.clone(),
                hint: "no agent checkpoint here; run train first".into(),
            },
            _ => Error::Io(e),
        })?;
        let info: AgentInfo = serde_json::from_slice(&text)?;
        if info.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                info.format_version
            )));
        }
        let load = |role: NetRole| -> Result<MlpNet> {
            let (net, manifest) = load_net(&dir.join(role.file_stem()))?;
            if manifest.role != role {
                return Err(Error::Format(format!(
                    "{} holds role {:?}",
                    role.file_stem(),
                    manifest.role
                )));
            }
            Ok(net)
        };
        let actor = load(NetRole::Actor)?;
        let critic1 = load(NetRole::Critic1)?;
        let critic2 = load(NetRole::Critic2)?;
        let counters: Counters = serde_json::from_slice(&fs::read(dir.join("counters.json"))?)?;
        let agent = AgentState {
            actor_opt: load_optimizer(&dir.join("actor_opt"), &actor)?,
            critic1_opt: load_optimizer(&dir.join("critic1_opt"), &critic1)?,
            critic2_opt: load_optimizer(&dir.join("critic2_opt"), &critic2)?,
            target_actor: load(NetRole::TargetActor)?,
            target_critic1: load(NetRole::TargetCritic1)?,
            target_critic2: load(NetRole::TargetCritic2)?,
            actor,
            critic1,
            critic2,
            iteration: counters.iteration,
            actor_updates: counters.actor_updates,
        };
        Ok(Self { agent, info })
    }

    /// SHA-256 over all network parameters and the agent metadata.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for role in NETS {
            h.update(role.file_stem().as_bytes());
            h.update(encode_floats(net_of(&self.agent, role).params()));
        }
        h.update(serde_json::to_vec(&self.info).expect("agent info serializes"));
        hex::encode(h.finalize())
    }

    pub fn policy(&self) -> LearnedPolicy {
        LearnedPolicy {
            actor: self.agent.actor.clone(),
            normalizer: self.info.normalizer.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{train_collect, TrainConfig};
    use crate::envsuite::{generate_dataset_with, GeneratorConfig};

    #[test]
    fn save_load_is_bit_exact() {
        let mut cfg = TrainConfig::default();
        cfg.env.horizon = 10;
        cfg.train.max_iterations = 4;
        cfg.train.batch_size = 4;
        cfg.train.hidden = vec![6];
        let gen = GeneratorConfig {
            reference_episodes: 3,
            ..GeneratorConfig::default()
        };
        let ds = generate_dataset_with(&cfg.env, Tier::Expert, 30, 1, &gen).unwrap();
        let (ck, _) = train_collect(&cfg, &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = AgentCheckpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.content_hash(), ck.content_hash());
        fs::remove_file(dir.path().join("critic2.bin")).unwrap();
        assert!(matches!(
            AgentCheckpoint::load(dir.path()),
            Err(Error::MissingArtifact { .. })
        ));
    }

    #[test]
    fn missing_directory_is_a_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            AgentCheckpoint::load(&dir.path().join("nope")),
            Err(Error::MissingArtifact { .. })
        ));
    }
}
