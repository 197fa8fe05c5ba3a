//! Train an undefended TD3+BC agent and save the checkpoint.
//!
//! `cargo run --release --example train_td3bc [config.toml] [out_dir]`
//! Without a config, a short pointmass run is used.

use std::path::PathBuf;

use robust_orl::envsuite::generate_dataset_with;
use robust_orl::trainer::{train, TrainConfig};

fn main() -> robust_orl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cfg = match args.get(1) {
        Some(p) => TrainConfig::load(p.as_ref())?,
        None => {
            let mut c = TrainConfig::default();
            c.dataset.size = 10_000;
            c.train.max_iterations = 6_000;
            c.train.batch_size = 64;
            c.train.hidden = vec![32, 32];
            c.train.log_interval = 1_000;
            c
        }
    };
    let out = PathBuf::from(args.get(2).map(String::as_str).unwrap_or("target/example-runs/td3bc"));

    let d = &cfg.dataset;
    let ds = generate_dataset_with(&cfg.env, d.tier, d.size, d.seed, &d.generator)?;
    println!(
        "{} {} dataset: {} rows, references random {:.2} / expert {:.2}",
        cfg.env.name(),
        d.tier.as_str(),
        ds.transitions.len(),
        ds.ref_random_score,
        ds.ref_expert_score
    );
    let ck = train(&cfg, &ds, &mut |r| {
        println!(
            "iter {:>6}  critic {:10.4}  actor {:>10}  clean return {:9.2}",
            r.iter,
            r.critic_loss,
            r.actor_loss.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
            r.clean_eval_return
        );
        Ok(())
    })?;
    ck.save(&out)?;
    println!("checkpoint {} -> {}", &ck.content_hash()[..16], out.display());
    Ok(())
}
