//! Analytic control environments, scripted behavior policies, and offline
//! dataset generation.

pub mod controllers;
pub mod dataset;
pub mod env;
pub mod rollout;

pub use controllers::{expert_controller, medium_controller, Controller, RandomPolicy, ScriptedPolicy};
pub use dataset::{
    generate_dataset, generate_dataset_with, reference_scores, Dataset, DatasetMeta, GeneratorConfig,
    Normalizer, Source, Tier, Transition, TransitionTable,
};
pub use env::{env_step, env_step_batch, Dynamics, EnvSpec, PendulumParams, PointMassParams};
pub use rollout::{initial_states, rollout, rollout_batch, ObservationFilter, Policy, Rollout, Trajectory};
