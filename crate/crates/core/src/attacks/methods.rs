use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pgd::{pgd_optimize, project_to_ball, PerturbationBudget, Sense};
use crate::diffcore::{MlpNet, Tape, Tensor, Var};
use crate::envsuite::ObservationFilter;
use crate::error::{Error, Result};

/// `Q(s, pi(x))` per row, with `s` fixed and only `x` varying.
pub fn q_of_perturbed_action<'a>(
    actor: &'a MlpNet,
    critic: &'a MlpNet,
    s: &'a Tensor,
) -> impl FnMut(&mut Tape, Var) -> Result<Var> + 'a {
    move |tape: &mut Tape, x: Var| {
        let (a, _) = actor.on_tape(tape, x, false)?;
        let sv = tape.constant(s.clone());
        let sa = tape.concat_cols(sv, a)?;
        let (q, _) = critic.on_tape(tape, sa, false)?;
        Ok(q)
    }
}

/// `||pi(s) - pi(x)||^2` per row.
pub fn actor_deviation<'a>(
    actor: &'a MlpNet,
    clean_actions: &'a Tensor,
) -> impl FnMut(&mut Tape, Var) -> Result<Var> + 'a {
    move |tape: &mut Tape, x: Var| {
        let (a, _) = actor.on_tape(tape, x, false)?;
        let c = tape.constant(clean_actions.clone());
        let diff = tape.sub(a, c)?;
        let sq = tape.square(diff);
        Ok(tape.sum_cols(sq))
    }
}

/// Gaussian noise of per-dimension std `eps`, before any projection.
pub fn gaussian_noise(shape: &[usize], eps: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let normal = Normal::new(0.0, eps).map_err(|e| Error::invalid(e.to_string()))?;
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
}

/// `s + N(0, eps)` projected back onto `B(s, eps)`.
pub fn attack_random(s: &Tensor, budget: &PerturbationBudget, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    budget.validate()?;
    if budget.epsilon == 0.0 {
        return Ok(s.clone());
    }
    let noise = gaussian_noise(s.shape(), budget.epsilon, rng)?;
    let mut out = s.zip_map(&noise, |a, b| a + b)?;
    project_to_ball(&mut out, s, budget.epsilon);
    Ok(out)
}

/// Perturbation that minimizes `critic(s, actor(s~))`.
pub fn attack_critic(s: &Tensor, actor: &MlpNet, critic: &MlpNet, budget: &PerturbationBudget) -> Result<Tensor> {
    if critic.input_dim() != s.cols() + actor.output_dim() {
        return Err(Error::shape(format!(
            "critic input width {} does not fit state {} + action {}",
            critic.input_dim(),
            s.cols(),
            actor.output_dim()
        )));
    }
    let out = pgd_optimize(
        q_of_perturbed_action(actor, critic, s),
        s,
        budget,
        Sense::Minimize,
        None,
    )?;
    Ok(out.points)
}

/// Same search as [`attack_critic`] against the attacker's own Q function.
pub fn attack_robust_critic(
    s: &Tensor,
    actor: &MlpNet,
    robust_q: &MlpNet,
    budget: &PerturbationBudget,
) -> Result<Tensor> {
    attack_critic(s, actor, robust_q, budget)
}

/// Perturbation that maximizes `||pi(s) - pi(s~)||^2`.
///
/// The objective and its gradient vanish at `s~ = s`, so the first step
/// instead follows the sign of the dominant eigenvector of `J^T J`, where
/// `J` is the actor Jacobian at `s`; that is the direction in which the
/// objective grows fastest to second order.
pub fn attack_actor(s: &Tensor, actor: &MlpNet, budget: &PerturbationBudget) -> Result<Tensor> {
    let clean = actor.forward(s)?;
    let escape = if budget.epsilon > 0.0 {
        Some(escape_directions(actor, s)?)
    } else {
        None
    };
    let out = pgd_optimize(
        actor_deviation(actor, &clean),
        s,
        budget,
        Sense::Maximize,
        escape.as_ref(),
    )?;
    Ok(out.points)
}

/// Actor Jacobian at each row of `s`: returns one `[m, d]` block per row.
pub fn actor_jacobians(actor: &MlpNet, s: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (n, d) = (s.rows(), s.cols());
    let m = actor.output_dim();
    let mut jac = vec![vec![0.0; m * d]; n];
    for j in 0..m {
        let mut tape = Tape::new();
        let x = tape.variable(s.clone());
        let (a, _) = actor.on_tape(&mut tape, x, false)?;
        let mut mask = Tensor::zeros(&[n, m]);
        for i in 0..n {
            mask.set(i, j, 1.0);
        }
        let mv = tape.constant(mask);
        let picked = tape.mul(a, mv)?;
        let total = tape.sum_all(picked);
        let mut g = tape.backward(total)?;
        let gx = g.take_or_zeros(x, s);
        for (i, block) in jac.iter_mut().enumerate() {
            block[j * d..(j + 1) * d].copy_from_slice(gx.row_slice(i));
        }
    }
    Ok(jac)
}

/// Dominant eigenvector of the symmetric PSD matrix `a` (`d x d`), with the
/// sign fixed so the first clearly nonzero component is positive. Zero
/// matrix gives the zero vector.
pub fn dominant_eigenvector(a: &[f64], d: usize) -> Vec<f64> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return vec![0.0; d];
    }
    // irregular start so it is unlikely to be orthogonal to the answer
    let mut v: Vec<f64> = (0..d).map(|k| 1.0 + 0.37 * k as f64).collect();
    for _ in 0..200 {
        let mut w = vec![0.0; d];
        for r in 0..d {
            for c in 0..d {
                w[r] += a[r * d + c] * v[c];
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        v = w.into_iter().map(|x| x / norm).collect();
    }
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-9 * vmax) {
        if *first < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
    }
    v
}

fn escape_directions(actor: &MlpNet, s: &Tensor) -> Result<Tensor> {
    let d = s.cols();
    let m = actor.output_dim();
    let jac = actor_jacobians(actor, s)?;
    let mut out = Tensor::zeros(&[s.rows(), d]);
    for (i, j) in jac.iter().enumerate() {
        let mut jtj = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                jtj[r * d + c] = (0..m).map(|k| j[k * d + r] * j[k * d + c]).sum();
            }
        }
        out.row_slice_mut(i).copy_from_slice(&dominant_eigenvector(&jtj, d));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Random,
    Critic,
    RobustCritic,
    Actor,
}

impl AttackKind {
    /// Report column order.
    pub const ALL: [AttackKind; 5] = [
        AttackKind::None,
        AttackKind::Random,
        AttackKind::Critic,
        AttackKind::Actor,
        AttackKind::RobustCritic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Random => "random",
            AttackKind::Critic => "critic",
            AttackKind::RobustCritic => "robust_critic",
            AttackKind::Actor => "actor",
        }
    }

    /// Column header used in reports.
    pub fn column(self) -> &'static str {
        match self {
            AttackKind::None => "Clean",
            AttackKind::Random => "Random",
            AttackKind::Critic => "Critic",
            AttackKind::RobustCritic => "RobustCritic",
            AttackKind::Actor => "Actor",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "clean" => Ok(AttackKind::None),
            "random" => Ok(AttackKind::Random),
            "critic" => Ok(AttackKind::Critic),
            "robust_critic" | "robust-critic" => Ok(AttackKind::RobustCritic),
            "actor" => Ok(AttackKind::Actor),
            other => Err(Error::invalid(format!("unknown attack kind '{other}'"))),
        }
    }
}

/// Which attack to run and with what budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default)]
    pub budget: PerturbationBudget,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, budget: PerturbationBudget) -> Self {
        Self { kind, budget }
    }
}

/// An attack bound to the networks it needs. Acts as a rollout observation
/// filter.
#[derive(Debug, Clone)]
pub struct Attacker {
    spec: AttackSpec,
    actor: MlpNet,
    /// The victim critic for `critic`, the robust Q for `robust_critic`.
    critic: Option<MlpNet>,
    rng: ChaCha8Rng,
}

impl Attacker {
    pub fn new(spec: AttackSpec, actor: MlpNet, critic: Option<MlpNet>, seed: u64) -> Result<Self> {
        spec.budget.validate()?;
        match spec.kind {
            AttackKind::Critic if critic.is_none() => {
                return Err(Error::invalid("critic attack needs the victim critic"));
            }
            AttackKind::RobustCritic if critic.is_none() => {
                return Err(Error::invalid(
                    "robust critic attack needs a robust Q checkpoint; run prepare-robust-q first",
                ));
            }
            _ => {}
        }
        Ok(Self {
            spec,
            actor,
            critic,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    /// Perturbed copy of a batch of normalized observations.
    pub fn perturb(&mut self, s: &Tensor) -> Result<Tensor> {
        let b = &self.spec.budget;
        match self.spec.kind {
            AttackKind::None => Ok(s.clone()),
            AttackKind::Random => attack_random(s, b, &mut self.rng),
            AttackKind::Critic => attack_critic(s, &self.actor, self.critic.as_ref().expect("checked"), b),
            AttackKind::RobustCritic => {
                attack_robust_critic(s, &self.actor, self.critic.as_ref().expect("checked"), b)
            }
            AttackKind::Actor => attack_actor(s, &self.actor, b),
        }
    }
}

impl ObservationFilter for Attacker {
    fn filter(&mut self, observations: &Tensor) -> Result<Tensor> {
        self.perturb(observations)
    }
}
