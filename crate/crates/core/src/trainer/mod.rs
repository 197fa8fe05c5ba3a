//! TD3+BC offline training with optional smoothness defenses.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod train;

pub use agent::{policy_evaluation, policy_improvement, ActorReport, AgentState, Batch, CriticReport, LearnedPolicy, Td3BcHyper};
pub use checkpoint::{AgentCheckpoint, AgentInfo};
pub use config::{AttackEvalSection, DatasetSection, DefenseSection, TrainConfig, TrainSection};
pub use train::{clean_return, held_out_states, json_lines_sink, train, train_collect, LogRecord, PreparedData};
