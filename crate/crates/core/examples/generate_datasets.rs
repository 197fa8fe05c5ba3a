//! Generate every dataset tier for both environments and summarize them.
//!
//! `cargo run --release --example generate_datasets [size] [out_dir]`

use std::path::PathBuf;

use robust_orl::envsuite::{generate_dataset, EnvSpec, Source, Tier};

fn main() -> robust_orl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let size: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5_000);
    let out = args.get(2).map(PathBuf::from);

    for spec in [EnvSpec::pointmass(), EnvSpec::pendulum()] {
        for tier in Tier::ALL {
            let ds = generate_dataset(&spec, tier, size, 0)?;
            let returns = ds.transitions.episode_returns();
            let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
            let expert_rows = ds
                .sources
                .iter()
                .filter(|s| **s == Source::Expert)
                .count();
            println!(
                "{:<10} {:<14} {} rows, {} episodes, mean return {:9.2} (refs {:.2} / {:.2}), {} expert rows",
                spec.name(),
                tier.as_str(),
                ds.transitions.len(),
                returns.len(),
                mean,
                ds.ref_random_score,
                ds.ref_expert_score,
                expert_rows
            );
            if let Some(dir) = &out {
                ds.save(&dir.join(format!("{}_{}", spec.name(), tier.as_str())))?;
            }
        }
    }
    Ok(())
}
