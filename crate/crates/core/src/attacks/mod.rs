//! Observation-space attacks on a trained agent: random noise, critic- and
//! robust-critic-guided PGD, and actor-deviation PGD.

pub mod methods;
pub mod pgd;
pub mod robust_q;

pub use methods::{
    actor_deviation, attack_actor, attack_critic, attack_random, attack_robust_critic, gaussian_noise,
    q_of_perturbed_action, AttackKind, AttackSpec, Attacker,
};
pub use pgd::{
    nonfinite_gradient_warnings, pgd_optimize, project_to_ball, rowwise_value_and_grad, PerturbationBudget,
    PgdOutcome, Sense,
};
pub use robust_q::{
    load_robust_q, save_robust_q, train_robust_q, worst_actions, ExaminationBuffer, RobustQConfig, RobustQFit,
    EXAMINATION_BUDGET,
};
