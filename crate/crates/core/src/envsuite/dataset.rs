use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::controllers::{expert_controller, medium_controller, RandomPolicy, ScriptedPolicy};
use super::env::EnvSpec;
use super::rollout::{initial_states, rollout_batch, Policy};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const GENERATOR_VERSION: &str = "1";
pub const STD_FLOOR: f64 = 1e-6;

/// Dataset quality tier, mirroring the D4RL naming.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Expert,
    MediumReplay,
    MediumExpert,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Expert, Tier::MediumExpert, Tier::MediumReplay];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Expert => "expert",
            Tier::MediumReplay => "medium-replay",
            Tier::MediumExpert => "medium-expert",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(Tier::Expert),
            "medium-replay" | "medium_replay" => Ok(Tier::MediumReplay),
            "medium-expert" | "medium_expert" => Ok(Tier::MediumExpert),
            other => Err(Error::invalid(format!(
                "unknown dataset tier '{other}' (expected expert, medium-replay or medium-expert)"
            ))),
        }
    }
}

/// Which behavior policy produced a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Expert,
    Medium,
    Replay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// Last transition of an episode. Episodes only end at the horizon, so
    /// this marks a time limit, not an absorbing state.
    pub done: bool,
}

/// Column store of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
}

impl TransitionTable {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.s.len() != self.state_dim || t.s_next.len() != self.state_dim || t.a.len() != self.action_dim {
            return Err(Error::shape("transition dims do not match table"));
        }
        if !t.r.is_finite() {
            return Err(Error::NonFinite("transition reward".into()));
        }
        self.states.extend_from_slice(&t.s);
        self.actions.extend_from_slice(&t.a);
        self.rewards.push(t.r);
        self.next_states.extend_from_slice(&t.s_next);
        self.dones.push(t.done);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Transition {
        let (n, m) = (self.state_dim, self.action_dim);
        Transition {
            s: self.states[i * n..(i + 1) * n].to_vec(),
            a: self.actions[i * m..(i + 1) * m].to_vec(),
            r: self.rewards[i],
            s_next: self.next_states[i * n..(i + 1) * n].to_vec(),
            done: self.dones[i],
        }
    }

    pub fn states_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.state_dim], self.states.clone()).expect("state column")
    }

    pub fn actions_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.action_dim], self.actions.clone()).expect("action column")
    }

    pub fn next_states_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.state_dim], self.next_states.clone()).expect("next-state column")
    }

    /// Undiscounted return of each episode, split at `done` flags. A trailing
    /// partial episode counts as one.
    pub fn episode_returns(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut acc = 0.0;
        let mut open = false;
        for (r, &d) in self.rewards.iter().zip(&self.dones) {
            acc += r;
            open = true;
            if d {
                out.push(acc);
                acc = 0.0;
                open = false;
            }
        }
        if open {
            out.push(acc);
        }
        out
    }

    pub fn extend_from(&mut self, other: &TransitionTable) -> Result<()> {
        if other.state_dim != self.state_dim || other.action_dim != self.action_dim {
            return Err(Error::shape("cannot concatenate tables of different dims"));
        }
        self.states.extend_from_slice(&other.states);
        self.actions.extend_from_slice(&other.actions);
        self.rewards.extend_from_slice(&other.rewards);
        self.next_states.extend_from_slice(&other.next_states);
        self.dones.extend_from_slice(&other.dones);
        Ok(())
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.state_dim).map(|i| format!("s{i}")).collect();
        h.extend((0..self.action_dim).map(|i| format!("a{i}")));
        h.push("r".into());
        h.extend((0..self.state_dim).map(|i| format!("sn{i}")));
        h.push("done".into());
        h
    }

    /// Write `s0..,a0..,r,sn0..,done`. Floats use the shortest
    /// representation that parses back to the identical value.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        let mut record: Vec<String> = Vec::with_capacity(2 * self.state_dim + self.action_dim + 2);
        for i in 0..self.len() {
            let t = self.get(i);
            record.clear();
            record.extend(t.s.iter().map(|v| v.to_string()));
            record.extend(t.a.iter().map(|v| v.to_string()));
            record.push(t.r.to_string());
            record.extend(t.s_next.iter().map(|v| v.to_string()));
            record.push(if t.done { "1" } else { "0" }.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, state_dim: usize, action_dim: usize) -> Result<Self> {
        let mut table = Self::new(state_dim, action_dim);
        let mut r = csv::Reader::from_path(path).map_err(|e| missing_or(path, e))?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != table.header() {
            return Err(Error::Format(format!(
                "{}: header {:?} does not match state dim {state_dim} / action dim {action_dim}",
                path.display(),
                header
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("bad float '{s}': {e}")))
        };
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<&str> = rec.iter().collect();
            let n = state_dim;
            let m = action_dim;
            let s = vals[..n].iter().map(|v| parse(v)).collect::<Result<Vec<_>>>()?;
            let a = vals[n..n + m].iter().map(|v| parse(v)).collect::<Result<Vec<_>>>()?;
            let rew = parse(vals[n + m])?;
            let sn = vals[n + m + 1..2 * n + m + 1]
                .iter()
                .map(|v| parse(v))
                .collect::<Result<Vec<_>>>()?;
            let done = match vals[2 * n + m + 1].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(Error::Format(format!("bad done flag '{other}'"))),
            };
            table.push(&Transition {
                s,
                a,
                r: rew,
                s_next: sn,
                done,
            })?;
        }
        Ok(table)
    }
}

fn missing_or(path: &Path, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(io) = e.kind() {
        if io.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "dataset file not found; run gen-data first".into(),
            };
        }
    }
    Error::Csv(e)
}

/// Per-dimension affine map `(s - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and std over rows of a flat `[n, dim]` buffer, with
    /// std floored at [`STD_FLOOR`].
    pub fn fit(states: &[f64], dim: usize) -> Self {
        let n = states.len() / dim.max(1);
        let mut mean = vec![0.0; dim];
        for row in states.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n.max(1) as f64;
        }
        let mut var = vec![0.0; dim];
        for row in states.chunks(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|v| (v / n.max(1) as f64).sqrt().max(STD_FLOOR))
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, states: &Tensor) -> Result<Tensor> {
        if states.cols() != self.mean.len() {
            return Err(Error::shape(format!(
                "normalizer of width {} applied to {:?}",
                self.mean.len(),
                states.shape()
            )));
        }
        let mut out = states.clone();
        let d = self.mean.len();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Knobs of the scripted data generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Action noise on the tuned controller for expert data.
    pub expert_noise: f64,
    /// Action noise on the detuned controller for medium data.
    pub medium_noise: f64,
    /// Medium-replay noise goes linearly from `replay_noise_start` to
    /// `replay_noise_end` across episodes.
    pub replay_noise_start: f64,
    pub replay_noise_end: f64,
    /// Rollouts per reference policy for score normalization.
    pub reference_episodes: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            expert_noise: 0.1,
            medium_noise: 0.3,
            replay_noise_start: 1.0,
            replay_noise_end: 0.3,
            reference_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub env: EnvSpec,
    pub tier: Tier,
    pub seed: u64,
    pub transitions: TransitionTable,
    /// Construction tag per transition.
    pub sources: Vec<Source>,
    pub normalizer: Normalizer,
    pub ref_random_score: f64,
    pub ref_expert_score: f64,
}

/// Sidecar written next to `data.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub env: String,
    pub env_spec: EnvSpec,
    pub tier: Tier,
    pub size: usize,
    pub seed: u64,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub ref_random_score: f64,
    pub ref_expert_score: f64,
    pub generator_version: String,
    /// Run-length encoding of construction tags, in row order.
    pub segments: Vec<(Source, usize)>,
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Roll out `policy` episode by episode until `size` transitions exist.
/// `sigma_for_episode` sets the policy noise before each episode.
fn collect(
    spec: &EnvSpec,
    policy: &mut ScriptedPolicy,
    size: usize,
    init_seed: u64,
    sigma_for_episode: impl Fn(usize, usize) -> f64,
) -> Result<TransitionTable> {
    let h = spec.horizon.max(1);
    let episodes = size.div_ceil(h);
    let inits = initial_states(spec, init_seed, episodes)?;
    let mut table = TransitionTable::new(spec.state_dim(), spec.action_dim());
    for e in 0..episodes {
        policy.sigma = sigma_for_episode(e, episodes);
        let init = Tensor::row(inits.row_slice(e));
        let ep = rollout_batch(spec, policy, &init, None)?.remove(0);
        let t = ep.trajectory;
        let steps = t.rewards.len();
        for k in 0..steps {
            if table.len() == size {
                break;
            }
            table.push(&Transition {
                s: t.states[k].clone(),
                a: t.actions[k].clone(),
                r: t.rewards[k],
                s_next: t.next_states[k].clone(),
                done: k + 1 == steps || table.len() + 1 == size,
            })?;
        }
    }
    Ok(table)
}

/// Mean undiscounted return of `episodes` rollouts.
pub fn mean_return(spec: &EnvSpec, policy: &mut dyn Policy, seed: u64, episodes: usize) -> Result<f64> {
    let inits = initial_states(spec, seed, episodes)?;
    let rolls = rollout_batch(spec, policy, &inits, None)?;
    Ok(rolls.iter().map(|r| r.ret).sum::<f64>() / episodes.max(1) as f64)
}

/// Reference scores `(random, expert)` for normalization.
pub fn reference_scores(spec: &EnvSpec, seed: u64, episodes: usize) -> Result<(f64, f64)> {
    let mut random = RandomPolicy::new(spec.action_dim(), stream(seed, 11));
    let random_score = mean_return(spec, &mut random, seed ^ 0x5eed_0001, episodes)?;
    let mut expert = ScriptedPolicy::new(expert_controller(spec), 0.0, stream(seed, 12));
    let expert_score = mean_return(spec, &mut expert, seed ^ 0x5eed_0002, episodes)?;
    Ok((random_score, expert_score))
}

pub fn generate_dataset(spec: &EnvSpec, tier: Tier, size: usize, seed: u64) -> Result<Dataset> {
    generate_dataset_with(spec, tier, size, seed, &GeneratorConfig::default())
}

pub fn generate_dataset_with(
    spec: &EnvSpec,
    tier: Tier,
    size: usize,
    seed: u64,
    cfg: &GeneratorConfig,
) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    if spec.horizon == 0 {
        return Err(Error::invalid("dataset generation needs a positive horizon"));
    }
    let expert_part = |n: usize, s: u64| -> Result<TransitionTable> {
        let mut p = ScriptedPolicy::new(expert_controller(spec), cfg.expert_noise, stream(s, 1));
        collect(spec, &mut p, n, s.wrapping_add(1), |_, _| cfg.expert_noise)
    };
    let medium_part = |n: usize, s: u64| -> Result<TransitionTable> {
        let mut p = ScriptedPolicy::new(medium_controller(spec), cfg.medium_noise, stream(s, 2));
        collect(spec, &mut p, n, s.wrapping_add(2), |_, _| cfg.medium_noise)
    };
    let (transitions, segments) = match tier {
        Tier::Expert => (expert_part(size, seed)?, vec![(Source::Expert, size)]),
        Tier::MediumReplay => {
            let mut p = ScriptedPolicy::new(medium_controller(spec), cfg.replay_noise_start, stream(seed, 3));
            let (a, b) = (cfg.replay_noise_start, cfg.replay_noise_end);
            let table = collect(spec, &mut p, size, seed.wrapping_add(3), |e, n| {
                if n <= 1 {
                    a
                } else {
                    a + (b - a) * e as f64 / (n - 1) as f64
                }
            })?;
            (table, vec![(Source::Replay, size)])
        }
        Tier::MediumExpert => {
            let n_expert = size / 2;
            let n_medium = size - n_expert;
            let mut table = if n_expert > 0 {
                expert_part(n_expert, seed)?
            } else {
                TransitionTable::new(spec.state_dim(), spec.action_dim())
            };
            table.extend_from(&medium_part(n_medium, seed.wrapping_add(1000))?)?;
            let mut segs = Vec::new();
            if n_expert > 0 {
                segs.push((Source::Expert, n_expert));
            }
            segs.push((Source::Medium, n_medium));
            (table, segs)
        }
    };
    let sources = expand_segments(&segments);
    let normalizer = Normalizer::fit(&transitions.states, spec.state_dim());
    let (ref_random_score, ref_expert_score) = reference_scores(spec, seed, cfg.reference_episodes)?;
    if ref_expert_score <= ref_random_score {
        return Err(Error::invalid(format!(
            "expert reference {ref_expert_score} is not above random reference {ref_random_score}"
        )));
    }
    Ok(Dataset {
        env: spec.clone(),
        tier,
        seed,
        transitions,
        sources,
        normalizer,
        ref_random_score,
        ref_expert_score,
    })
}

fn expand_segments(segments: &[(Source, usize)]) -> Vec<Source> {
    segments
        .iter()
        .flat_map(|&(s, n)| std::iter::repeat_n(s, n))
        .collect()
}

fn run_length(sources: &[Source]) -> Vec<(Source, usize)> {
    let mut out: Vec<(Source, usize)> = Vec::new();
    for &s in sources {
        match out.last_mut() {
            Some((last, n)) if *last == s => *n += 1,
            _ => out.push((s, 1)),
        }
    }
    out
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            env: self.env.name().to_string(),
            env_spec: self.env.clone(),
            tier: self.tier,
            size: self.len(),
            seed: self.seed,
            state_mean: self.normalizer.mean.clone(),
            state_std: self.normalizer.std.clone(),
            ref_random_score: self.ref_random_score,
            ref_expert_score: self.ref_expert_score,
            generator_version: GENERATOR_VERSION.to_string(),
            segments: run_length(&self.sources),
        }
    }

    /// Write `data.csv` and `meta.json` into `dir` (created if needed).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.transitions.write_csv(&dir.join("data.csv"))?;
        fs::write(
            dir.join("meta.json"),
            serde_json::to_string_pretty(&self.meta())?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let bytes = fs::read(&meta_path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: meta_path.clone(),
                hint: "dataset metadata not found; run gen-data first".into(),
            },
            _ => Error::Io(e),
        })?;
        let meta: DatasetMeta = serde_json::from_slice(&bytes)?;
        let spec = meta.env_spec.clone();
        let transitions =
            TransitionTable::read_csv(&dir.join("data.csv"), spec.state_dim(), spec.action_dim())?;
        if transitions.len() != meta.size {
            return Err(Error::Format(format!(
                "meta.json says {} rows, data.csv has {}",
                meta.size,
                transitions.len()
            )));
        }
        Ok(Self {
            env: spec,
            tier: meta.tier,
            seed: meta.seed,
            transitions,
            sources: expand_segments(&meta.segments),
            normalizer: Normalizer {
                mean: meta.state_mean,
                std: meta.state_std,
            },
            ref_random_score: meta.ref_random_score,
            ref_expert_score: meta.ref_expert_score,
        })
    }
}
