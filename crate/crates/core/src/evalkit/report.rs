use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::evaluate::RunScores;
use super::stats::{bootstrap_ci, percent_change, BootstrapSpec, Statistic};
use crate::attacks::AttackKind;
use crate::error::{Error, Result};

/// Level of aggregation. `Dataset` pools the tasks of one dataset tier,
/// `Overall` pools every (task, tier) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Task,
    Dataset,
    Overall,
}

impl FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task" => Ok(GroupBy::Task),
            "dataset" => Ok(GroupBy::Dataset),
            "overall" => Ok(GroupBy::Overall),
            other => Err(Error::invalid(format!("unknown grouping {other:?} (task, dataset, overall)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub n: usize,
    pub value: f64,
    pub ci: (f64, f64),
    /// Whole-percent change against the row's clean value.
    pub change: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    /// Task name, or `MEAN` for pooled rows.
    pub task: String,
    /// Dataset tier, or `all` for the overall level.
    pub dataset: String,
    pub method: String,
    /// Indexed like [`AttackKind::ALL`].
    pub cells: Vec<Option<Cell>>,
}

impl ReportRow {
    pub fn cell(&self, kind: AttackKind) -> Option<&Cell> {
        let i = AttackKind::ALL.iter().position(|k| *k == kind).expect("listed");
        self.cells[i].as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub statistic: Statistic,
    pub group_by: GroupBy,
    pub rows: Vec<ReportRow>,
}

type RowKey = (String, String, String);

/// Aggregate seed-level normalized scores. The point estimate is the
/// statistic over all pooled runs of a group; the interval is a stratified
/// bootstrap, widened if needed so that it contains the point estimate.
pub fn aggregate(runs: &[RunScores], group_by: GroupBy, statistic: Statistic, boot: &BootstrapSpec) -> Result<AggregateReport> {
    // row -> attack -> stratum -> values
    let mut groups: BTreeMap<RowKey, BTreeMap<AttackKind, BTreeMap<(String, String), Vec<f64>>>> = BTreeMap::new();
    for r in runs {
        r.validate()?;
        let tier = r.tier.as_str().to_string();
        let row = match group_by {
            GroupBy::Task => (r.task.clone(), tier.clone(), r.method.clone()),
            GroupBy::Dataset => ("MEAN".to_string(), tier.clone(), r.method.clone()),
            GroupBy::Overall => ("MEAN".to_string(), "all".to_string(), r.method.clone()),
        };
        groups
            .entry(row)
            .or_default()
            .entry(r.attack)
            .or_default()
            .entry((r.task.clone(), tier))
            .or_default()
            .push(r.normalized);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((task, dataset, method), by_attack) in groups {
        let mut cells: Vec<Option<Cell>> = vec![None; AttackKind::ALL.len()];
        for (i, kind) in AttackKind::ALL.iter().enumerate() {
            let Some(strata) = by_attack.get(kind) else { continue };
            // Sort within strata so the result does not depend on run order.
            let strata: Vec<Vec<f64>> = strata
                .values()
                .map(|v| {
                    let mut v = v.clone();
                    v.sort_by(f64::total_cmp);
                    v
                })
                .collect();
            let pooled: Vec<f64> = strata.iter().flatten().copied().collect();
            let value = statistic.apply(&pooled)?;
            let (lo, hi) = bootstrap_ci(&strata, statistic, boot)?;
            cells[i] = Some(Cell {
                n: pooled.len(),
                value,
                ci: (lo.min(value), hi.max(value)),
                change: None,
            });
        }
        if let Some(clean) = cells[0].as_ref().map(|c| c.value) {
            for c in cells.iter_mut().skip(1).flatten() {
                c.change = percent_change(c.value, clean).ok();
            }
        }
        rows.push(ReportRow {
            task,
            dataset,
            method,
            cells,
        });
    }
    Ok(AggregateReport {
        statistic,
        group_by,
        rows,
    })
}

/// Method family of a label, e.g. `TD3BC+CD` for `TD3BC+CD(l=0.5)`.
pub fn method_family(label: &str) -> &str {
    label.split('(').next().unwrap_or(label).trim()
}

/// Keep, per (task, tier, method family), only the weight whose pooled
/// runs over all attack columns score highest under `statistic`. Returns
/// the filtered runs and the chosen labels.
pub fn select_best_lambda(runs: &[RunScores], statistic: Statistic) -> Result<(Vec<RunScores>, Vec<String>)> {
    let mut by_label: BTreeMap<(String, String, String), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in runs {
        by_label
            .entry((r.task.clone(), r.tier.as_str().to_string(), method_family(&r.method).to_string()))
            .or_default()
            .entry(r.method.clone())
            .or_default()
            .push(r.normalized);
    }
    let mut chosen: BTreeMap<(String, String, String), String> = BTreeMap::new();
    for (key, labels) in by_label {
        let mut best: Option<(f64, String)> = None;
        for (label, values) in labels {
            let v = statistic.apply(&values)?;
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, label));
            }
        }
        chosen.insert(key, best.expect("non-empty").1);
    }
    let kept = runs
        .iter()
        .filter(|r| {
            let key = (r.task.clone(), r.tier.as_str().to_string(), method_family(&r.method).to_string());
            chosen.get(&key) == Some(&r.method)
        })
        .cloned()
        .collect();
    Ok((kept, chosen.into_values().collect()))
}

const HEADER: [&str; 7] = ["Task", "Method", "Clean", "Random", "Critic", "Actor", "RobustCritic"];

fn task_label(row: &ReportRow) -> String {
    format!("{} ({})", row.task, row.dataset)
}

impl AggregateReport {
    /// Wide table, one value per attack column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(HEADER)?;
        for row in &self.rows {
            let mut rec = vec![task_label(row), row.method.clone()];
            rec.extend(row.cells.iter().map(|c| c.as_ref().map(|c| c.value.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long form with intervals and counts, one line per cell.
    pub fn write_long_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "task", "dataset", "method", "attack", "statistic", "value", "ci_low", "ci_high", "n", "percent_change",
        ])?;
        for row in &self.rows {
            for (kind, cell) in AttackKind::ALL.iter().zip(&row.cells) {
                let Some(c) = cell else { continue };
                w.write_record([
                    row.task.clone(),
                    row.dataset.clone(),
                    row.method.clone(),
                    kind.as_str().to_string(),
                    self.statistic.to_string(),
                    c.value.to_string(),
                    c.ci.0.to_string(),
                    c.ci.1.to_string(),
                    c.n.to_string(),
                    c.change.map(|p| p.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned table; each cell reads `value [lo, hi]` with the percent
    /// change against clean in parentheses.
    pub fn to_text(&self) -> String {
        let mut table: Vec<Vec<String>> = vec![HEADER.iter().map(|s| s.to_string()).collect()];
        for row in &self.rows {
            let mut line = vec![task_label(row), row.method.clone()];
            for c in &row.cells {
                line.push(match c {
                    None => "-".into(),
                    Some(c) => {
                        let mut s = format!("{:.2} [{:.2}, {:.2}]", c.value, c.ci.0, c.ci.1);
                        if let Some(p) = c.change {
                            let _ = write!(s, " ({p:+}%)");
                        }
                        s
                    }
                });
            }
            table.push(line);
        }
        let widths: Vec<usize> = (0..HEADER.len())
            .map(|j| table.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{} over seed-level normalized scores\n", self.statistic.as_str().to_uppercase());
        for r in &table {
            let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// One row of a published results table: `(mean, std)` per attack column.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub task: String,
    pub method: String,
    pub cells: [(f64, f64); 5],
}

fn parse_mean_std(cell: &str) -> Result<(f64, f64)> {
    let (m, s) = cell
        .split_once('+')
        .ok_or_else(|| Error::Format(format!("expected mean+std, got {cell:?}")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("bad number {v:?}: {e}")))
    };
    Ok((parse(m)?, parse(s)?))
}

/// Read a table in report layout whose cells are `mean+std`.
pub fn load_table(path: &Path) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Format(format!("{}: unexpected header {headers:?}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut cells = [(0.0, 0.0); 5];
        for (j, c) in cells.iter_mut().enumerate() {
            *c = parse_mean_std(&rec[j + 2])?;
        }
        rows.push(TableRow {
            task: rec[0].to_string(),
            method: rec[1].to_string(),
            cells,
        });
    }
    Ok(rows)
}
