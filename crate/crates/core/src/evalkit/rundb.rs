use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::evaluate::RunScores;
use crate::error::{Error, Result};

/// Read a JSON-lines run database. Blank lines are skipped.
pub fn load_runs(path: &Path) -> Result<Vec<RunScores>> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "no run database here; run eval first".into(),
        },
        _ => Error::Io(e),
    })?;
    let mut runs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let run: RunScores = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        runs.push(run);
    }
    Ok(runs)
}

/// Append the runs whose (checkpoint, attack, seed) key is not yet in the
/// database. Returns how many were written.
pub fn append_runs(path: &Path, runs: &[RunScores]) -> Result<usize> {
    let existing = if path.exists() { load_runs(path)? } else { Vec::new() };
    let mut seen: HashSet<(String, _, u64)> =
        existing.iter().map(|r| (r.checkpoint.clone(), r.attack, r.seed)).collect();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut written = 0;
    for run in runs {
        run.validate()?;
        if seen.insert((run.checkpoint.clone(), run.attack, run.seed)) {
            serde_json::to_writer(&mut file, run)?;
            file.write_all(b"\n")?;
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackKind;
    use crate::envsuite::Tier;

    fn run(attack: AttackKind, seed: u64, score: f64) -> RunScores {
        RunScores {
            task: "pointmass".into(),
            tier: Tier::Expert,
            method: "TD3BC".into(),
            attack,
            epsilon: 0.05,
            seed,
            train_seed: 0,
            checkpoint: "abc".into(),
            returns: vec![score, score + 0.1],
            normalized: score,
        }
    }

    #[test]
    fn append_deduplicates_by_key() {
        let dir = tempfile::tempdir().unwrap();
        let db = dir.path().join("runs/runs.jsonl");
        let a = [run(AttackKind::None, 0, 1.0), run(AttackKind::None, 1, 2.0)];
        assert_eq!(append_runs(&db, &a).unwrap(), 2);
        let b = [run(AttackKind::None, 1, 9.0), run(AttackKind::Actor, 1, 3.0)];
        assert_eq!(append_runs(&db, &b).unwrap(), 1);
        let all = load_runs(&db).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[1].normalized, 2.0);
        assert_eq!(all[2].attack, AttackKind::Actor);
    }

    #[test]
    fn missing_database_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_runs(&dir.path().join("none.jsonl")), Err(Error::MissingArtifact { .. })));
    }
}
