use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `100 * (raw - random) / (expert - random)`.
pub fn normalize_score(raw: f64, ref_random: f64, ref_expert: f64) -> Result<f64> {
    if ref_expert == ref_random {
        return Err(Error::invalid(format!(
            "expert and random reference scores are both {ref_expert}; cannot normalize"
        )));
    }
    Ok(100.0 * (raw - ref_random) / (ref_expert - ref_random))
}

fn non_empty(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid(format!("{what} of an empty sample")));
    }
    Ok(())
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(values: &[f64]) -> Result<f64> {
    non_empty(values, "mean")?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Midpoint of the central pair for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    non_empty(values, "median")?;
    let v = sorted(values);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Interquartile mean: drop `floor(n/4)` values from each end and average
/// the rest.
pub fn iqm(values: &[f64]) -> Result<f64> {
    non_empty(values, "iqm")?;
    let v = sorted(values);
    let cut = v.len() / 4;
    mean(&v[cut..v.len() - cut])
}

/// Sample standard deviation (n - 1); 0 for a single value.
pub fn std_dev(values: &[f64]) -> Result<f64> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Ok(0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Ok((ss / (values.len() - 1) as f64).sqrt())
}

/// Relative change in whole percent, rounded half away from zero.
pub fn percent_change(attacked: f64, clean: f64) -> Result<i64> {
    if clean == 0.0 || !clean.is_finite() || !attacked.is_finite() {
        return Err(Error::invalid(format!(
            "percent change of {attacked} against {clean} is undefined"
        )));
    }
    Ok((100.0 * (attacked / clean - 1.0)).round() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Iqm,
    Mean,
    Median,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [Statistic::Iqm, Statistic::Mean, Statistic::Median];

    pub fn apply(self, values: &[f64]) -> Result<f64> {
        match self {
            Statistic::Iqm => iqm(values),
            Statistic::Mean => mean(values),
            Statistic::Median => median(values),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Iqm => "iqm",
            Statistic::Mean => "mean",
            Statistic::Median => "median",
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iqm" => Ok(Statistic::Iqm),
            "mean" => Ok(Statistic::Mean),
            "median" => Ok(Statistic::Median),
            other => Err(Error::invalid(format!("unknown statistic {other:?} (iqm, mean, median)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSpec {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            resamples: 2000,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Stratified percentile bootstrap. Each resample draws, for every stratum
/// in order, as many runs as the stratum holds (with replacement), pools
/// them and applies `statistic`. Returns the `(1 - level) / 2` and
/// `(1 + level) / 2` quantiles of the resampled statistics.
pub fn bootstrap_ci(strata: &[Vec<f64>], statistic: Statistic, spec: &BootstrapSpec) -> Result<(f64, f64)> {
    if strata.is_empty() || strata.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("bootstrap needs at least one run in every stratum"));
    }
    if spec.resamples == 0 || !(spec.level > 0.0 && spec.level < 1.0) {
        return Err(Error::invalid("bootstrap needs resamples >= 1 and a level in (0, 1)"));
    }
    let total: usize = strata.iter().map(Vec::len).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pooled = Vec::with_capacity(total);
    let mut stats = Vec::with_capacity(spec.resamples);
    for _ in 0..spec.resamples {
        pooled.clear();
        for s in strata {
            for _ in 0..s.len() {
                pooled.push(s[rng.random_range(0..s.len())]);
            }
        }
        stats.push(statistic.apply(&pooled)?);
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - spec.level) / 2.0;
    Ok((quantile_sorted(&stats, tail), quantile_sorted(&stats, 1.0 - tail)))
}
