//! The `robust-orl` command line: dataset generation, training, sweeps,
//! robust-Q preparation, attack evaluation and reporting.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{
    load_robust_q, save_robust_q, train_robust_q, AttackKind, AttackSpec, ExaminationBuffer, PerturbationBudget,
};
use crate::defenses::DefenseKind;
use crate::envsuite::{generate_dataset_with, Dataset, EnvSpec, Tier};
use crate::error::{Error, Result};
use crate::evalkit::{aggregate, append_runs, evaluate, load_runs, select_best_lambda, BootstrapSpec, GroupBy, Statistic};
use crate::trainer::checkpoint::FORMAT_VERSION;
use crate::trainer::{json_lines_sink, train, AgentCheckpoint, TrainConfig};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (checkpoint format 1, dataset generator 1)");

#[derive(Debug, Parser)]
#[command(name = "robust-orl", version = VERSION, about = "Attack and defend offline TD3+BC agents on analytic control tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an offline dataset and print its reference scores.
    GenData {
        #[arg(long, default_value = "pointmass")]
        env: String,
        /// Take env parameters and generator knobs from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "expert")]
        tier: Tier,
        #[arg(long, default_value_t = 20_000)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one agent from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one agent per defense weight, each in its own directory.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated weights; defaults to the config's grid.
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probe a trained agent and fit the attacker's robust Q.
    PrepareRobustQ {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Expected environment name; checked against the checkpoint.
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
        /// Robust-Q settings come from `[attack_eval]` of this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        probe_noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `<checkpoint>/robust_q`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate an agent under attacks and append the runs to a database.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "none,random,critic,actor,robust_critic")]
        attacks: Vec<AttackKind>,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 0.01)]
        step_size: f64,
        #[arg(long, default_value_t = 5)]
        num_steps: usize,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// Defaults to `<checkpoint>/robust_q`.
        #[arg(long)]
        robust_q: Option<PathBuf>,
        /// JSON-lines run database to append to.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a run database into CSV and text tables.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value = "task")]
        group_by: GroupBy,
        #[arg(long, default_value = "iqm")]
        metric: Statistic,
        #[arg(long, default_value_t = 2000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep only the best defense weight per task and dataset.
        #[arg(long)]
        best_lambda: bool,
        /// Output directory; defaults to the database's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Provenance of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub experiment_id: String,
    /// SHA-256 of `config.toml` as stored next to the manifest.
    pub config_hash: String,
    pub tool_version: String,
    pub format_version: u32,
    pub train_seed: u64,
    pub dataset_seed: u64,
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    fn save(&self, path: &Path) -> Result<()> {
        for (name, p) in &self.artifacts {
            if !p.exists() {
                return Err(Error::Format(format!("manifest artifact {name} is missing at {}", p.display())));
            }
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Exit status for an error: 2 usage or config, 3 missing artifact,
/// 4 numerical failure, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::MissingArtifact { .. } => 3,
        Error::Numerical(_) | Error::NonFinite(_) => 4,
        _ => 1,
    }
}

/// Parse `args` (program name first) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            env,
            config,
            tier,
            size,
            seed,
            out,
        } => gen_data(&env, config.as_deref(), tier, size, seed, &out),
        Command::Train { config, out } => {
            let bytes = read_config(&config)?;
            let cfg = TrainConfig::from_toml_str(&bytes)?;
            let m = train_job(&cfg, bytes.as_bytes(), &out)?;
            println!("trained {} -> {}", m.experiment_id, out.display());
            Ok(())
        }
        Command::Sweep {
            config,
            lambda_grid,
            out,
        } => sweep(&config, lambda_grid, &out),
        Command::PrepareRobustQ {
            checkpoint,
            env,
            budget,
            config,
            steps,
            lambda,
            probe_noise,
            seed,
            out,
        } => {
            let dir = resolve_checkpoint(&checkpoint);
            let ck = AgentCheckpoint::load(&dir)?;
            if let Some(name) = env {
                if name != ck.info.env.name() {
                    return Err(Error::Config(format!(
                        "checkpoint was trained on {}, not {name}",
                        ck.info.env.name()
                    )));
                }
            }
            let cfg = match config {
                Some(p) => TrainConfig::from_toml_str(&read_config(&p)?)?,
                None => TrainConfig {
                    train: crate::trainer::TrainSection {
                        hidden: ck.info.hidden.clone(),
                        ..Default::default()
                    },
                    ..Default::default()
                },
            };
            let mut rq = cfg.robust_q_config(seed);
            if let Some(s) = steps {
                rq.steps = s;
            }
            if let Some(l) = lambda {
                rq.lambda = l;
            }
            let noise = probe_noise.unwrap_or(cfg.attack_eval.probe_noise);
            let out = out.unwrap_or_else(|| dir.join("robust_q"));
            let buffer = ExaminationBuffer::collect(&ck.info.env, &ck.policy(), budget, noise, seed)?;
            buffer.save(&out.join("examination"))?;
            let fit = train_robust_q(&ck.policy(), &buffer, &rq)?;
            save_robust_q(&out, &fit.q)?;
            println!(
                "robust Q from {} transitions: loss {:.4} -> {:.4}, smoothness {:.3e} -> {}",
                buffer.len(),
                fit.initial_loss,
                fit.final_loss,
                fit.smoothness,
                out.display()
            );
            register_artifact(&dir, "robust_q", &out)
        }
        Command::Eval {
            checkpoint,
            attacks,
            eps,
            step_size,
            num_steps,
            episodes,
            seeds,
            robust_q,
            out,
        } => {
            let dir = resolve_checkpoint(&checkpoint);
            let ck = AgentCheckpoint::load(&dir)?;
            let budget = PerturbationBudget {
                epsilon: eps,
                step_size,
                num_steps,
            };
            budget.validate()?;
            let rq = if attacks.contains(&AttackKind::RobustCritic) {
                Some(load_robust_q(&robust_q.unwrap_or_else(|| dir.join("robust_q")))?)
            } else {
                None
            };
            let mut written = 0;
            for kind in attacks {
                let runs = evaluate(&ck, &AttackSpec::new(kind, budget), rq.as_ref(), episodes, seeds)?;
                let mean = runs.iter().map(|r| r.normalized).sum::<f64>() / runs.len() as f64;
                println!("{:<14} mean normalized score {mean:8.2}", kind.as_str());
                written += append_runs(&out, &runs)?;
            }
            println!("{written} new runs -> {}", out.display());
            register_artifact(&dir, "run_db", &out)
        }
        Command::Report {
            runs,
            group_by,
            metric,
            bootstrap,
            seed,
            best_lambda,
            out,
        } => {
            let mut all = load_runs(&runs)?;
            if best_lambda {
                let (kept, chosen) = select_best_lambda(&all, metric)?;
                println!("selected: {}", chosen.join(", "));
                all = kept;
            }
            let boot = BootstrapSpec {
                resamples: bootstrap,
                level: 0.95,
                seed,
            };
            let report = aggregate(&all, group_by, metric, &boot)?;
            let out = out.unwrap_or_else(|| runs.parent().map(Path::to_path_buf).unwrap_or_default());
            if !out.as_os_str().is_empty() {
                fs::create_dir_all(&out)?;
            }
            report.write_csv(&out.join("report.csv"))?;
            report.write_long_csv(&out.join("report_long.csv"))?;
            let text = report.to_text();
            fs::write(out.join("report.txt"), &text)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "config file not found".into(),
        },
        _ => Error::Io(e),
    })
}

/// Accept either a checkpoint directory or a training output directory.
fn resolve_checkpoint(p: &Path) -> PathBuf {
    let nested = p.join("checkpoint");
    if !p.join("agent.json").exists() && nested.join("agent.json").exists() {
        nested
    } else {
        p.to_path_buf()
    }
}

/// Record `path` in the manifest of the training run owning `checkpoint`,
/// if there is one.
fn register_artifact(checkpoint: &Path, name: &str, path: &Path) -> Result<()> {
    let Some(manifest) = checkpoint.parent().map(|d| d.join("manifest.json")) else {
        return Ok(());
    };
    if !manifest.exists() {
        return Ok(());
    }
    let mut m = ExperimentManifest::load(&manifest)?;
    m.artifacts.insert(name.to_string(), path.to_path_buf());
    m.save(&manifest)
}

fn gen_data(env: &str, config: Option<&Path>, tier: Tier, size: usize, seed: u64, out: &Path) -> Result<()> {
    let (spec, generator) = match config {
        Some(p) => {
            let cfg = TrainConfig::from_toml_str(&read_config(p)?)?;
            if cfg.env.name() != env {
                return Err(Error::Config(format!("config describes {}, not {env}", cfg.env.name())));
            }
            (cfg.env, cfg.dataset.generator)
        }
        None => (
            match env {
                "pointmass" => EnvSpec::pointmass(),
                "pendulum" => EnvSpec::pendulum(),
                other => return Err(Error::Config(format!("unknown env {other:?} (pointmass, pendulum)"))),
            },
            Default::default(),
        ),
    };
    let ds = generate_dataset_with(&spec, tier, size, seed, &generator)?;
    ds.save(out)?;
    println!(
        "{} {} x{}: ref_random_score {:.4}, ref_expert_score {:.4} -> {}",
        spec.name(),
        tier.as_str(),
        ds.transitions.len(),
        ds.ref_random_score,
        ds.ref_expert_score,
        out.display()
    );
    Ok(())
}

/// Train from `cfg` into `out`. `config_bytes` is stored verbatim as
/// `config.toml` and hashed into the manifest.
pub fn train_job(cfg: &TrainConfig, config_bytes: &[u8], out: &Path) -> Result<ExperimentManifest> {
    fs::create_dir_all(out)?;
    let config_path = out.join("config.toml");
    fs::write(&config_path, config_bytes)?;
    let config_hash = sha256_hex(config_bytes);
    let mut artifacts = BTreeMap::new();

    let ds = match &cfg.dataset.path {
        Some(p) => {
            let ds = Dataset::load(p)?;
            if ds.tier != cfg.dataset.tier {
                return Err(Error::Config(format!(
                    "dataset at {} is {}, config asks for {}",
                    p.display(),
                    ds.tier.as_str(),
                    cfg.dataset.tier.as_str()
                )));
            }
            artifacts.insert("dataset".to_string(), p.clone());
            ds
        }
        None => {
            let d = &cfg.dataset;
            let ds = generate_dataset_with(&cfg.env, d.tier, d.size, d.seed, &d.generator)?;
            let dir = out.join("dataset");
            ds.save(&dir)?;
            artifacts.insert("dataset".to_string(), dir);
            ds
        }
    };

    let log_path = out.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path)?;
    let ck = train(cfg, &ds, &mut json_lines_sink(&mut log))?;
    let ck_dir = out.join("checkpoint");
    ck.save(&ck_dir)?;

    artifacts.insert("config".to_string(), config_path);
    artifacts.insert("train_log".to_string(), log_path);
    artifacts.insert("checkpoint".to_string(), ck_dir);
    let manifest = ExperimentManifest {
        experiment_id: config_hash[..12].to_string(),
        config_hash,
        tool_version: VERSION.to_string(),
        format_version: FORMAT_VERSION,
        train_seed: cfg.train.seed,
        dataset_seed: ds.seed,
        artifacts,
    };
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

fn sweep(config: &Path, grid: Option<Vec<f64>>, out: &Path) -> Result<()> {
    let base = TrainConfig::from_toml_str(&read_config(config)?)?;
    let grid = grid.unwrap_or_else(|| base.defense.lambda_grid.clone());
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    let kinds = match base.defense.kind {
        DefenseKind::None => vec![DefenseKind::CriticDefense, DefenseKind::ActorDefense],
        k => vec![k],
    };
    for kind in kinds {
        for &lambda in &grid {
            let mut cfg = base.clone();
            cfg.defense.kind = kind;
            cfg.defense.lambda = lambda;
            cfg.validate()?;
            let text = cfg.to_toml_string()?;
            let dir = out.join(format!("{}_l{lambda}", kind_slug(kind)));
            let m = train_job(&cfg, text.as_bytes(), &dir)?;
            println!("{} -> {} ({})", cfg.defense.spec().method_label(), dir.display(), m.experiment_id);
        }
    }
    Ok(())
}

fn kind_slug(kind: DefenseKind) -> &'static str {
    match kind {
        DefenseKind::None => "none",
        DefenseKind::CriticDefense => "critic_defense",
        DefenseKind::ActorDefense => "actor_defense",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_text_names_the_formats() {
        assert!(VERSION.contains(&format!("checkpoint format {FORMAT_VERSION}")));
        assert!(VERSION.contains("dataset generator 1"));
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["robust-orl", "train", "--bogus"]), 2);
        assert_eq!(run(["robust-orl", "frobnicate"]), 2);
        assert_eq!(run(["robust-orl", "gen-data", "--tier", "legendary", "--out", "x"]), 2);
    }

    #[test]
    fn missing_artifacts_exit_with_three() {
        let dir = tempfile::tempdir().unwrap();
        let nothing = dir.path().join("nothing");
        let s = nothing.to_str().unwrap();
        assert_eq!(run(["robust-orl", "train", "--config", s, "--out", s]), 3);
        assert_eq!(run(["robust-orl", "eval", "--checkpoint", s, "--out", s]), 3);
        assert_eq!(run(["robust-orl", "report", "--runs", s]), 3);
    }

    #[test]
    fn error_classes_map_to_codes() {
        assert_eq!(exit_code(&Error::Numerical("nan".into())), 4);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Format("x".into())), 1);
    }

    #[test]
    fn gen_data_writes_the_requested_rows() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d");
        let o = out.to_str().unwrap();
        assert_eq!(run(["robust-orl", "gen-data", "--size", "1", "--seed", "3", "--out", o]), 0);
        let text = fs::read_to_string(out.join("data.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
