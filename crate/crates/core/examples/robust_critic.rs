//! Profile a trained agent with a 10000-transition examination budget, fit
//! the attacker's own robust Q, and attack with it.
//!
//! `cargo run --release --example robust_critic [checkpoint_dir]`
//! With a checkpoint the robust Q is also saved to `<checkpoint>/robust_q`.

use std::path::Path;

use robust_orl::attacks::{
    save_robust_q, train_robust_q, AttackKind, AttackSpec, ExaminationBuffer, PerturbationBudget, RobustQConfig,
    EXAMINATION_BUDGET,
};
use robust_orl::envsuite::generate_dataset_with;
use robust_orl::evalkit::{evaluate, mean};
use robust_orl::trainer::{train_collect, AgentCheckpoint, TrainConfig};

fn main() -> robust_orl::Result<()> {
    let arg = std::env::args().nth(1);
    let ck = match &arg {
        Some(dir) => AgentCheckpoint::load(Path::new(dir))?,
        None => {
            let mut c = TrainConfig::default();
            c.dataset.size = 10_000;
            c.train.max_iterations = 6_000;
            c.train.batch_size = 64;
            c.train.hidden = vec![32, 32];
            c.train.log_interval = 0;
            let d = &c.dataset;
            let ds = generate_dataset_with(&c.env, d.tier, d.size, d.seed, &d.generator)?;
            train_collect(&c, &ds)?.0
        }
    };
    let victim = ck.policy();
    let buffer = ExaminationBuffer::collect(&ck.info.env, &victim, EXAMINATION_BUDGET, 0.3, 1)?;
    println!("examination buffer: {} transitions", buffer.len());

    let cfg = RobustQConfig {
        steps: 5_000,
        batch_size: 64,
        hidden: ck.info.hidden.clone(),
        ..RobustQConfig::default()
    };
    for lambda in [0.0, cfg.lambda] {
        let fit = train_robust_q(&victim, &buffer, &RobustQConfig { lambda, ..cfg.clone() })?;
        println!(
            "lambda {lambda}: loss {:.4} -> {:.4}, action smoothness gap {:.3e}",
            fit.initial_loss, fit.final_loss, fit.smoothness
        );
        if lambda == cfg.lambda {
            if let Some(dir) = &arg {
                save_robust_q(&Path::new(dir).join("robust_q"), &fit.q)?;
            }
            let budget = PerturbationBudget::default();
            for kind in [AttackKind::None, AttackKind::Critic, AttackKind::RobustCritic] {
                let runs = evaluate(&ck, &AttackSpec::new(kind, budget), Some(&fit.q), 10, 3)?;
                let scores: Vec<f64> = runs.iter().map(|r| r.normalized).collect();
                println!("{:<14} {:8.2}", kind.column(), mean(&scores)?);
            }
        }
    }
    Ok(())
}
