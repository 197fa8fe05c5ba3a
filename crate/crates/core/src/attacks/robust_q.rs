//! The attacker's own critic, fitted to the victim's behavior from a small
//! interaction budget.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pgd::{pgd_optimize, rowwise_value_and_grad, PerturbationBudget, Sense};
use crate::diffcore::{load_net, save_net, MlpNet, NetGrads, NetRole, Tape, Tensor, Var};
use crate::envsuite::{initial_states, rollout_batch, EnvSpec, Normalizer, Policy, Transition, TransitionTable};
use crate::error::{Error, Result};
use crate::trainer::agent::{critic_dims, new_critic, LearnedPolicy};
use crate::trainer::train::seeded_stream;

pub const EXAMINATION_BUDGET: usize = 10_000;

/// Transitions gathered by running the victim with clean observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExaminationBuffer {
    pub env: EnvSpec,
    pub capacity: usize,
    pub seed: u64,
    /// Std of the Gaussian noise added to the victim's actions while probing.
    pub probe_noise: f64,
    pub transitions: TransitionTable,
}

/// The victim with clipped Gaussian noise on its actions. A deterministic
/// victim never shows how other actions score, and the attacker's critic
/// needs that to rank actions.
struct Probing {
    victim: LearnedPolicy,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl Policy for Probing {
    fn observe(&self, states: &Tensor) -> Result<Tensor> {
        self.victim.observe(states)
    }

    fn act(&mut self, obs: &Tensor) -> Result<Tensor> {
        let mut a = self.victim.act(obs)?;
        if let Some(n) = &self.noise {
            for v in a.data_mut() {
                *v = (*v + n.sample(&mut self.rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferMeta {
    env: EnvSpec,
    capacity: usize,
    size: usize,
    seed: u64,
    probe_noise: f64,
}

impl ExaminationBuffer {
    /// Roll out `victim` until exactly `capacity` transitions are logged,
    /// perturbing its actions (never its observations) by `probe_noise`.
    pub fn collect(spec: &EnvSpec, victim: &LearnedPolicy, capacity: usize, probe_noise: f64, seed: u64) -> Result<Self> {
        if capacity == 0 || spec.horizon == 0 {
            return Err(Error::invalid("examination buffer needs a positive capacity and horizon"));
        }
        if !(probe_noise >= 0.0 && probe_noise.is_finite()) {
            return Err(Error::invalid(format!("probe noise must be finite and >= 0, got {probe_noise}")));
        }
        let episodes = capacity.div_ceil(spec.horizon);
        let inits = initial_states(spec, seed, episodes)?;
        let mut p = Probing {
            victim: victim.clone(),
            noise: (probe_noise > 0.0)
                .then(|| Normal::new(0.0, probe_noise).map_err(|e| Error::invalid(e.to_string())))
                .transpose()?,
            rng: seeded_stream(seed, 8),
        };
        let rolls = rollout_batch(spec, &mut p, &inits, None)?;
        let mut table = TransitionTable::new(spec.state_dim(), spec.action_dim());
        'outer: for r in &rolls {
            let t = &r.trajectory;
            for k in 0..t.rewards.len() {
                if table.len() == capacity {
                    break 'outer;
                }
                table.push(&Transition {
                    s: t.states[k].clone(),
                    a: t.actions[k].clone(),
                    r: t.rewards[k],
                    s_next: t.next_states[k].clone(),
                    done: k + 1 == t.rewards.len() || table.len() + 1 == capacity,
                })?;
            }
        }
        Ok(Self {
            env: spec.clone(),
            capacity,
            seed,
            probe_noise,
            transitions: table,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// `data.csv` in the dataset format plus `examination.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.transitions.write_csv(&dir.join("data.csv"))?;
        let meta = BufferMeta {
            env: self.env.clone(),
            capacity: self.capacity,
            size: self.len(),
            seed: self.seed,
            probe_noise: self.probe_noise,
        };
        fs::write(dir.join("examination.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("examination.json");
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.clone(),
                hint: "no examination buffer; run prepare-robust-q first".into(),
            },
            _ => Error::Io(e),
        })?;
        let meta: BufferMeta = serde_json::from_slice(&bytes)?;
        let transitions =
            TransitionTable::read_csv(&dir.join("data.csv"), meta.env.state_dim(), meta.env.action_dim())?;
        if transitions.len() != meta.size {
            return Err(Error::Format("examination buffer size does not match its metadata".into()));
        }
        Ok(Self {
            env: meta.env,
            capacity: meta.capacity,
            seed: meta.seed,
            probe_noise: meta.probe_noise,
            transitions,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustQConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Weight of the action-smoothness term.
    pub lambda: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Ball and PGD schedule for the inner max over actions.
    pub action_budget: PerturbationBudget,
    pub seed: u64,
}

impl Default for RobustQConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 256,
            lambda: 1.0,
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            hidden: vec![64, 64],
            action_budget: PerturbationBudget::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RobustQFit {
    /// The first of the twin critics; the attack uses this one.
    pub q: MlpNet,
    /// Full objective on a fixed evaluation slice, for the initial and the
    /// trained critic, both against the final bootstrap targets.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `mean max_{a^} (Q(s, a^) - Q(s, a))^2` on the evaluation slice at the end.
    pub smoothness: f64,
}

struct Columns {
    s: Tensor,
    a: Tensor,
    r: Tensor,
    s2: Tensor,
    a2: Tensor,
}

impl Columns {
    fn rows(&self, idx: &[usize]) -> Columns {
        Columns {
            s: self.s.gather_rows(idx),
            a: self.a.gather_rows(idx),
            r: self.r.gather_rows(idx),
            s2: self.s2.gather_rows(idx),
            a2: self.a2.gather_rows(idx),
        }
    }
}

/// `(Q(s, x) - q_clean)^2` per row, varying the action `x`.
fn action_gap<'a>(critic: &'a MlpNet, s: &'a Tensor, q_clean: &'a Tensor) -> impl FnMut(&mut Tape, Var) -> Result<Var> + 'a {
    move |tape: &mut Tape, x: Var| {
        let sv = tape.constant(s.clone());
        let sa = tape.concat_cols(sv, x)?;
        let (q, _) = critic.on_tape(tape, sa, false)?;
        let c = tape.constant(q_clean.clone());
        let d = tape.sub(q, c)?;
        Ok(tape.square(d))
    }
}

/// Inner maximization over `B(a, eps)` of `(Q(s, a^) - Q(s, a))^2`.
///
/// The gap and its gradient vanish at `a^ = a`; the first step follows
/// the sign of `grad_a Q(s, a)`, along which the gap grows fastest.
pub fn worst_actions(critic: &MlpNet, s: &Tensor, a: &Tensor, budget: &PerturbationBudget) -> Result<(Tensor, Vec<f64>)> {
    let q_clean = critic.forward(&s.concat_cols(a)?)?;
    let mut q_of_a = |tape: &mut Tape, x: Var| {
        let sv = tape.constant(s.clone());
        let sa = tape.concat_cols(sv, x)?;
        let (q, _) = critic.on_tape(tape, sa, false)?;
        Ok(q)
    };
    let (_, dq) = rowwise_value_and_grad(a, &mut q_of_a)?;
    let out = pgd_optimize(action_gap(critic, s, &q_clean), a, budget, Sense::Maximize, Some(&dq))?;
    Ok((out.points, out.values))
}

fn td_targets(t1: &MlpNet, t2: &MlpNet, cols: &Columns, gamma: f64) -> Result<Tensor> {
    let sa = cols.s2.concat_cols(&cols.a2)?;
    let q1 = t1.forward(&sa)?;
    let q2 = t2.forward(&sa)?;
    let mut y = cols.r.clone();
    for i in 0..y.rows() {
        let v = y.get(i, 0) + gamma * q1.get(i, 0).min(q2.get(i, 0));
        y.set(i, 0, v);
    }
    Ok(y)
}

/// Loss of one critic on a batch; parameter gradients when `grads` is set.
fn robust_loss(
    critic: &MlpNet,
    cols: &Columns,
    y: &Tensor,
    worst: Option<&Tensor>,
    lambda: f64,
    want_grads: bool,
) -> Result<(f64, Option<NetGrads>)> {
    let mut tape = Tape::new();
    let vars = critic.bind(&mut tape, want_grads);
    let s = tape.constant(cols.s.clone());
    let a = tape.constant(cols.a.clone());
    let sa = tape.concat_cols(s, a)?;
    let q = critic.apply(&mut tape, &vars, sa)?;
    let yv = tape.constant(y.clone());
    let e = tape.sub(q, yv)?;
    let e2 = tape.square(e);
    let mut total = tape.mean_all(e2);
    if let Some(w) = worst {
        let wv = tape.constant(w.clone());
        let swa = tape.concat_cols(s, wv)?;
        let qw = critic.apply(&mut tape, &vars, swa)?;
        let g = tape.sub(qw, q)?;
        let g2 = tape.square(g);
        let m = tape.mean_all(g2);
        let weighted = tape.scale(m, lambda);
        total = tape.add(total, weighted)?;
    }
    let loss = tape.value(total).item()?;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("robust-Q loss is {loss}")));
    }
    if !want_grads {
        return Ok((loss, None));
    }
    let mut g = tape.backward(total)?;
    Ok((loss, Some(NetGrads::collect(&mut g, critic, &vars))))
}

/// Fit twin critics to the victim's behavior on the examination buffer by
/// TD regression plus `lambda` times the action-smoothness term, and
/// return the first one.
pub fn train_robust_q(
    victim: &LearnedPolicy,
    buffer: &ExaminationBuffer,
    cfg: &RobustQConfig,
) -> Result<RobustQFit> {
    cfg.action_budget.validate()?;
    if cfg.batch_size == 0 || buffer.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "examination buffer holds {} transitions, fewer than one batch of {}",
            buffer.len(),
            cfg.batch_size
        )));
    }
    if !(cfg.lambda >= 0.0) || !(0.0..1.0).contains(&cfg.gamma) {
        return Err(Error::invalid("robust-Q needs lambda >= 0 and gamma in [0, 1)"));
    }
    let t = &buffer.transitions;
    let norm: &Normalizer = &victim.normalizer;
    let s2 = norm.normalize(&t.next_states_tensor())?;
    let all = Columns {
        s: norm.normalize(&t.states_tensor())?,
        a: t.actions_tensor(),
        r: Tensor::new(vec![t.len(), 1], t.rewards.clone())?,
        a2: victim.actor.forward(&s2)?,
        s2,
    };
    let mut rng = seeded_stream(cfg.seed, 7);
    let dims = critic_dims(t.state_dim, &cfg.hidden, t.action_dim);
    let (mut c1, mut o1) = new_critic(&dims, cfg.lr, &mut rng)?;
    let (mut c2, mut o2) = new_critic(&dims, cfg.lr, &mut rng)?;
    let (mut t1, mut t2) = (c1.clone(), c2.clone());

    let eval_idx: Vec<usize> = (0..t.len().min(1024)).collect();
    let eval_cols = all.rows(&eval_idx);
    let use_smooth = cfg.lambda > 0.0;
    let eval_loss = |c: &MlpNet, y: &Tensor| -> Result<f64> {
        let worst = worst_actions(c, &eval_cols.s, &eval_cols.a, &cfg.action_budget)?.0;
        Ok(robust_loss(c, &eval_cols, y, Some(&worst), cfg.lambda, false)?.0)
    };
    let start = c1.clone();

    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..t.len())).collect();
        let cols = all.rows(&idx);
        let y = td_targets(&t1, &t2, &cols, cfg.gamma)?;
        for (c, o) in [(&mut c1, &mut o1), (&mut c2, &mut o2)] {
            let worst = if use_smooth {
                Some(worst_actions(c, &cols.s, &cols.a, &cfg.action_budget)?.0)
            } else {
                None
            };
            let (_, g) = robust_loss(c, &cols, &y, worst.as_ref(), cfg.lambda, true)?;
            o.step(c, &g.expect("requested"))?;
        }
        t1.soft_update_from(&c1, cfg.tau)?;
        t2.soft_update_from(&c2, cfg.tau)?;
    }

    // Both ends are scored against the final bootstrap targets, so the
    // comparison is not skewed by how small the targets are at the start.
    let y = td_targets(&t1, &t2, &eval_cols, cfg.gamma)?;
    let initial_loss = eval_loss(&start, &y)?;
    let final_loss = eval_loss(&c1, &y)?;
    let (_, gaps) = worst_actions(&c1, &eval_cols.s, &eval_cols.a, &cfg.action_budget)?;
    let smoothness = gaps.iter().sum::<f64>() / gaps.len() as f64;
    Ok(RobustQFit {
        q: c1,
        initial_loss,
        final_loss,
        smoothness,
    })
}

pub fn save_robust_q(dir: &Path, q: &MlpNet) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_net(&dir.join(NetRole::RobustQ.file_stem()), q, NetRole::RobustQ)
}

pub fn load_robust_q(dir: &Path) -> Result<MlpNet> {
    let stem = dir.join(NetRole::RobustQ.file_stem());
    let (net, manifest) = load_net(&stem).map_err(|e| match e {
        Error::MissingArtifact { path, .. } => Error::MissingArtifact {
            path,
            hint: "robust-critic attack needs a robust Q; run prepare-robust-q first".into(),
        },
        other => other,
    })?;
    if manifest.role != NetRole::RobustQ {
        return Err(Error::Format(format!("{} is not a robust Q checkpoint", stem.display())));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn victim(spec: &EnvSpec) -> LearnedPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        LearnedPolicy {
            actor: MlpNet::new(&[spec.state_dim(), 8, spec.action_dim()], Activation::Tanh, &mut rng).unwrap(),
            normalizer: Normalizer::identity(spec.state_dim()),
        }
    }

    #[test]
    fn buffer_holds_exactly_the_budget() {
        let spec = EnvSpec::pointmass();
        let buf = ExaminationBuffer::collect(&spec, &victim(&spec), EXAMINATION_BUDGET, 0.0, 1).unwrap();
        assert_eq!(buf.len(), EXAMINATION_BUDGET);
        let short = ExaminationBuffer::collect(&spec, &victim(&spec), 450, 0.0, 1).unwrap();
        assert_eq!(short.len(), 450);
        assert_eq!(short.transitions.dones.iter().filter(|&&d| d).count(), 3);
    }

    #[test]
    fn buffer_smaller_than_batch_is_rejected() {
        let spec = EnvSpec::pointmass();
        let buf = ExaminationBuffer::collect(&spec, &victim(&spec), 100, 0.0, 1).unwrap();
        let cfg = RobustQConfig::default();
        assert!(train_robust_q(&victim(&spec), &buf, &cfg).is_err());
    }

    #[test]
    fn regression_fixed_point_without_bootstrap() {
        let spec = EnvSpec::pointmass();
        let v = victim(&spec);
        let mut buf = ExaminationBuffer::collect(&spec, &v, 64, 0.0, 2).unwrap();
        let first = buf.transitions.get(0);
        let mut table = TransitionTable::new(4, 2);
        for _ in 0..64 {
            table.push(&first).unwrap();
        }
        buf.transitions = table;
        let cfg = RobustQConfig {
            steps: 3000,
            batch_size: 16,
            lambda: 0.0,
            gamma: 0.0,
            lr: 3e-3,
            hidden: vec![16],
            ..RobustQConfig::default()
        };
        let fit = train_robust_q(&v, &buf, &cfg).unwrap();
        let q = fit
            .q
            .forward(&Tensor::from_rows(&[[first.s.clone(), first.a.clone()].concat()]).unwrap())
            .unwrap();
        assert!((q.get(0, 0) - first.r).abs() < 1e-3, "{} vs {}", q.get(0, 0), first.r);
        assert!(fit.final_loss < fit.initial_loss);
    }

    #[test]
    fn worst_actions_stay_in_the_ball_and_never_shrink_the_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let critic = MlpNet::new(&[6, 8, 1], Activation::None, &mut rng).unwrap();
        let s = Tensor::from_rows(&[[0.1, 0.2, -0.3, 0.4], [1.0, 0.0, 0.0, -1.0]]).unwrap();
        let a = Tensor::from_rows(&[[0.5, -0.5], [0.0, 0.9]]).unwrap();
        let b = PerturbationBudget::default();
        let (w, gaps) = worst_actions(&critic, &s, &a, &b).unwrap();
        for (x, y) in w.data().iter().zip(a.data()) {
            assert!((x - y).abs() <= b.epsilon + 1e-12);
        }
        assert!(gaps.iter().all(|&g| g > 0.0));
    }

    #[test]
    fn persistence_round_trip() {
        let spec = EnvSpec::pointmass();
        let buf = ExaminationBuffer::collect(&spec, &victim(&spec), 30, 0.0, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        buf.save(dir.path()).unwrap();
        assert_eq!(ExaminationBuffer::load(dir.path()).unwrap(), buf);
        assert!(matches!(load_robust_q(dir.path()), Err(Error::MissingArtifact { .. })));
        let q = MlpNet::zeros(&[6, 3, 1], Activation::None).unwrap();
        save_robust_q(dir.path(), &q).unwrap();
        assert_eq!(load_robust_q(dir.path()).unwrap(), q);
    }
}
