use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Process-wide count of PGD iterations that hit a non-finite gradient.
static NONFINITE_GRADIENTS: AtomicU64 = AtomicU64::new(0);

pub fn nonfinite_gradient_warnings() -> u64 {
    NONFINITE_GRADIENTS.load(Ordering::Relaxed)
}

/// l-infinity ball and the PGD schedule used to search it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationBudget {
    pub epsilon: f64,
    pub step_size: f64,
    pub num_steps: usize,
}

impl Default for PerturbationBudget {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            step_size: 0.01,
            num_steps: 5,
        }
    }
}

impl PerturbationBudget {
    pub fn new(epsilon: f64, step_size: f64, num_steps: usize) -> Result<Self> {
        let b = Self {
            epsilon,
            step_size,
            num_steps,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!("step size must be > 0, got {}", self.step_size)));
        }
        if self.num_steps == 0 {
            return Err(Error::invalid("PGD needs at least one step"));
        }
        Ok(())
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}

/// Clamp each coordinate of `x` into `[center - eps, center + eps]`.
pub fn project_to_ball(x: &mut Tensor, center: &Tensor, eps: f64) {
    for (v, &c) in x.data_mut().iter_mut().zip(center.data()) {
        *v = c + (*v - c).clamp(-eps, eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Sense::Maximize => a > b,
            Sense::Minimize => a < b,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PgdOutcome {
    /// Best point found per row.
    pub points: Tensor,
    /// Objective at `points`, per row.
    pub values: Vec<f64>,
    /// Objective at the starting point, per row.
    pub clean_values: Vec<f64>,
    /// Rows whose search stopped early on a non-finite gradient.
    pub nonfinite_rows: usize,
}

/// Per-row objective values and their gradient at `x`.
///
/// `objective` must return an `[n, 1]` node whose row `i` depends only on
/// row `i` of the input; the gradient of the column sum then holds the
/// per-row gradients.
pub fn rowwise_value_and_grad<F>(x: &Tensor, objective: &mut F) -> Result<(Vec<f64>, Tensor)>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone());
    let col = objective(&mut tape, xv)?;
    let shape = tape.value(col).shape().to_vec();
    if shape != [x.rows(), 1] {
        return Err(Error::shape(format!(
            "row-wise objective must be [{}, 1], got {shape:?}",
            x.rows()
        )));
    }
    let values = tape.value(col).data().to_vec();
    let total = tape.sum_all(col);
    let mut grads = tape.backward(total)?;
    Ok((values, grads.take_or_zeros(xv, x)))
}

/// Sign-gradient projected search over `B(s, eps)`, batched over rows.
///
/// No random start. The starting point and every iterate are candidates and
/// the best one per row is returned. Where a row's gradient is exactly zero,
/// the step follows the sign of the matching `fallback` row instead (if
/// given). A row whose gradient turns non-finite stops moving; it keeps its
/// best-so-far and the warning counter is bumped.
pub fn pgd_optimize<F>(
    mut objective: F,
    s: &Tensor,
    budget: &PerturbationBudget,
    sense: Sense,
    fallback: Option<&Tensor>,
) -> Result<PgdOutcome>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    budget.validate()?;
    s.ensure_finite("attack start state")?;
    if let Some(f) = fallback {
        s.check_same_shape(f, "pgd fallback direction")?;
    }
    let (n, d) = (s.rows(), s.cols());
    let eps = budget.epsilon;
    let mut x = s.clone();
    let mut best = s.clone();
    let mut best_values: Vec<f64> = Vec::new();
    let mut clean_values = Vec::new();
    let mut frozen = vec![false; n];
    let mut nonfinite_rows = 0;

    for k in 0..=budget.num_steps {
        let last = k == budget.num_steps;
        let (values, grad) = rowwise_value_and_grad(&x, &mut objective)?;
        if k == 0 {
            clean_values = values.clone();
            best_values = values.clone();
        } else {
            for i in 0..n {
                if !frozen[i] && values[i].is_finite() && sense.better(values[i], best_values[i]) {
                    best_values[i] = values[i];
                    best.row_slice_mut(i).copy_from_slice(x.row_slice(i));
                }
            }
        }
        if last || eps == 0.0 {
            break;
        }
        for i in 0..n {
            if frozen[i] {
                continue;
            }
            let g = grad.row_slice(i);
            if g.iter().any(|v| !v.is_finite()) {
                frozen[i] = true;
                nonfinite_rows += 1;
                NONFINITE_GRADIENTS.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            let dir: Vec<f64> = if g.iter().all(|&v| v == 0.0) {
                match fallback {
                    Some(f) => f.row_slice(i).to_vec(),
                    None => continue,
                }
            } else {
                g.to_vec()
            };
            let center = s.row_slice(i);
            let row = x.row_slice_mut(i);
            for j in 0..d {
                let step = sense.sign() * budget.step_size * sign(dir[j]);
                row[j] = center[j] + (row[j] + step - center[j]).clamp(-eps, eps);
            }
        }
    }
    Ok(PgdOutcome {
        points: best,
        values: best_values,
        clean_values,
        nonfinite_rows,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
