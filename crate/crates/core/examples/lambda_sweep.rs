//! Sweep the defense weight, evaluate every trained agent, keep the best
//! weight per method family and print the aggregated table.
//!
//! `cargo run --release --example lambda_sweep [iterations]`

use robust_orl::attacks::{AttackKind, AttackSpec, PerturbationBudget};
use robust_orl::defenses::{DefenseKind, LAMBDA_GRID};
use robust_orl::envsuite::generate_dataset_with;
use robust_orl::evalkit::{aggregate, evaluate, select_best_lambda, BootstrapSpec, GroupBy, Statistic};
use robust_orl::trainer::{train_collect, TrainConfig};

fn main() -> robust_orl::Result<()> {
    let k: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3_000);
    let mut base = TrainConfig::default();
    base.dataset.size = 10_000;
    base.train.max_iterations = k;
    base.train.batch_size = 64;
    base.train.hidden = vec![32, 32];
    base.train.log_interval = 0;
    let d = &base.dataset;
    let ds = generate_dataset_with(&base.env, d.tier, d.size, d.seed, &d.generator)?;
    let budget = PerturbationBudget::default();

    let mut jobs = vec![(DefenseKind::None, 0.0)];
    for kind in [DefenseKind::CriticDefense, DefenseKind::ActorDefense] {
        jobs.extend(LAMBDA_GRID.iter().map(|&l| (kind, l)));
    }
    let mut runs = Vec::new();
    for (kind, lambda) in jobs {
        let mut cfg = base.clone();
        cfg.defense.kind = kind;
        cfg.defense.lambda = lambda;
        let (ck, _) = train_collect(&cfg, &ds)?;
        for attack in [AttackKind::None, AttackKind::Random, AttackKind::Critic, AttackKind::Actor] {
            runs.extend(evaluate(&ck, &AttackSpec::new(attack, budget), None, 5, 2)?);
        }
        println!("trained {}", ck.info.method);
    }
    let (best, chosen) = select_best_lambda(&runs, Statistic::Iqm)?;
    println!("best weights: {}", chosen.join(", "));
    let report = aggregate(&best, GroupBy::Task, Statistic::Iqm, &BootstrapSpec::default())?;
    print!("{}", report.to_text());
    Ok(())
}
