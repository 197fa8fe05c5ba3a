//! Train the same agent with no defense, the critic defense and the actor
//! defense, then compare sensitivities and attacked scores.
//!
//! `cargo run --release --example defenses [iterations]`

use robust_orl::attacks::{AttackKind, AttackSpec, PerturbationBudget};
use robust_orl::defenses::{actor_sensitivity, critic_sensitivity, DefenseSpec};
use robust_orl::envsuite::generate_dataset_with;
use robust_orl::evalkit::{evaluate, mean};
use robust_orl::trainer::{held_out_states, train_collect, TrainConfig};

fn main() -> robust_orl::Result<()> {
    let k: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6_000);
    let mut base = TrainConfig::default();
    base.dataset.size = 10_000;
    base.train.max_iterations = k;
    base.train.batch_size = 64;
    base.train.hidden = vec![32, 32];
    base.train.log_interval = 0;
    let d = &base.dataset;
    let ds = generate_dataset_with(&base.env, d.tier, d.size, d.seed, &d.generator)?;
    let budget = PerturbationBudget::default();

    println!("{:<18} {:>12} {:>12} {:>8} {:>8} {:>8}", "method", "actor sens", "critic sens", "clean", "critic", "actor");
    for spec in [DefenseSpec::none(), DefenseSpec::critic(1.0), DefenseSpec::actor(1.0)] {
        let mut cfg = base.clone();
        cfg.defense.kind = spec.kind;
        cfg.defense.lambda = spec.lambda;
        let (ck, _) = train_collect(&cfg, &ds)?;
        let states = held_out_states(&cfg.env, &ck.policy(), &ds.normalizer, 99, 5, 10)?;
        let actions = ck.agent.actor.forward(&states)?;
        let a_sens = actor_sensitivity(&ck.agent.actor, &states, &budget)?;
        let c_sens = critic_sensitivity(&ck.agent.actor, &ck.agent.critic1, &states, &actions, &budget)?;
        let mut scores = Vec::new();
        for kind in [AttackKind::None, AttackKind::Critic, AttackKind::Actor] {
            let runs = evaluate(&ck, &AttackSpec::new(kind, budget), None, 10, 2)?;
            scores.push(mean(&runs.iter().map(|r| r.normalized).collect::<Vec<_>>())?);
        }
        println!(
            "{:<18} {:>12.4e} {:>12.4e} {:>8.2} {:>8.2} {:>8.2}",
            spec.method_label(),
            a_sens,
            c_sens,
            scores[0],
            scores[1],
            scores[2]
        );
    }
    Ok(())
}
