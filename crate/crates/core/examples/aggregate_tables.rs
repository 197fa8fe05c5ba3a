//! Rebuild the MEAN rows of the published per-dataset tables from their
//! task rows, and recompute the published percent changes.

use std::path::Path;

use robust_orl::attacks::AttackKind;
use robust_orl::envsuite::Tier;
use robust_orl::evalkit::{aggregate, load_table, percent_change, BootstrapSpec, GroupBy, RunScores, Statistic};

fn main() -> robust_orl::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for (file, tier) in [
        ("expert.csv", Tier::Expert),
        ("medium_expert.csv", Tier::MediumExpert),
        ("medium_replay.csv", Tier::MediumReplay),
    ] {
        let table = load_table(&fixtures.join(file))?;
        // Each published task cell becomes one run; the MEAN row is then the
        // dataset-level mean over tasks.
        let mut runs = Vec::new();
        for row in table.iter().filter(|r| r.task != "MEAN") {
            for (kind, (m, _)) in AttackKind::ALL.iter().zip(row.cells) {
                runs.push(RunScores {
                    task: row.task.clone(),
                    tier,
                    method: row.method.clone(),
                    attack: *kind,
                    epsilon: 0.05,
                    seed: 0,
                    train_seed: 0,
                    checkpoint: String::new(),
                    returns: vec![m],
                    normalized: m,
                });
            }
        }
        let report = aggregate(&runs, GroupBy::Dataset, Statistic::Mean, &BootstrapSpec::default())?;
        println!("{}", tier.as_str());
        let mut worst = 0.0f64;
        for published in table.iter().filter(|r| r.task == "MEAN") {
            let row = report.rows.iter().find(|r| r.method == published.method).expect("method present");
            let ours: Vec<String> = row.cells.iter().map(|c| format!("{:7.2}", c.as_ref().unwrap().value)).collect();
            for (c, (m, _)) in row.cells.iter().zip(published.cells) {
                worst = worst.max((c.as_ref().unwrap().value - m).abs());
            }
            println!("  {:<10} {}", published.method, ours.join(" "));
        }
        println!("  largest deviation from the published MEAN row: {worst:.4}");
    }

    let mut r = csv::Reader::from_path(fixtures.join("iqm_summary.csv"))?;
    let mut matched = 0;
    let mut total = 0;
    for rec in r.records() {
        let rec = rec?;
        let clean: f64 = rec[2].parse().unwrap();
        let attacked: f64 = rec[3].parse().unwrap();
        let published: i64 = rec[4].parse().unwrap();
        let ours = percent_change(attacked, clean)?;
        total += 1;
        matched += usize::from(ours == published);
        println!("{:<7} {:<14} {attacked:6.2} vs {clean:6.2}: {ours:+}% (published {published:+}%)", &rec[0], &rec[1]);
    }
    println!("{matched}/{total} percent changes reproduced");
    Ok(())
}
