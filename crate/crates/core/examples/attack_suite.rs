//! Evaluate one trained agent under every observation attack.
//!
//! `cargo run --release --example attack_suite [checkpoint_dir]`
//! Without a checkpoint a small agent is trained first. The robust-critic
//! column is filled when `<checkpoint>/robust_q` exists (see the
//! `robust_critic` example).

use std::path::Path;

use robust_orl::attacks::{load_robust_q, AttackKind, AttackSpec, PerturbationBudget};
use robust_orl::envsuite::generate_dataset_with;
use robust_orl::evalkit::{evaluate, mean};
use robust_orl::trainer::{train_collect, AgentCheckpoint, TrainConfig};

fn small_agent() -> robust_orl::Result<AgentCheckpoint> {
    let mut c = TrainConfig::default();
    c.dataset.size = 10_000;
    c.train.max_iterations = 6_000;
    c.train.batch_size = 64;
    c.train.hidden = vec![32, 32];
    c.train.log_interval = 0;
    let d = &c.dataset;
    let ds = generate_dataset_with(&c.env, d.tier, d.size, d.seed, &d.generator)?;
    Ok(train_collect(&c, &ds)?.0)
}

fn main() -> robust_orl::Result<()> {
    let arg = std::env::args().nth(1);
    let ck = match &arg {
        Some(dir) => AgentCheckpoint::load(Path::new(dir))?,
        None => small_agent()?,
    };
    let robust_q = match &arg {
        Some(dir) => load_robust_q(&Path::new(dir).join("robust_q")).ok(),
        None => None,
    };
    let budget = PerturbationBudget::default();
    println!("{} ({}), eps {}", ck.info.method, ck.info.env.name(), budget.epsilon);
    let mut clean = None;
    for kind in AttackKind::ALL {
        if kind == AttackKind::RobustCritic && robust_q.is_none() {
            println!("{:<14} skipped (no robust Q)", kind.column());
            continue;
        }
        let runs = evaluate(&ck, &AttackSpec::new(kind, budget), robust_q.as_ref(), 10, 3)?;
        let scores: Vec<f64> = runs.iter().map(|r| r.normalized).collect();
        let m = mean(&scores)?;
        let base = *clean.get_or_insert(m);
        println!("{:<14} {m:8.2}  ({:+.1}% vs clean)", kind.column(), 100.0 * (m / base - 1.0));
    }
    Ok(())
}
