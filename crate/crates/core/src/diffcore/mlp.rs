use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::{matmul_into, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    fn on_tape(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::None => v,
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh(v),
        }
    }
}

/// Feedforward network: affine layers, rectifier on hidden layers, and either
/// no output activation (critics) or `tanh` (actors, bounded to `[-1, 1]`).
///
/// Weights are stored `[in, out]` so a batch `[n, in]` maps to `[n, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    layer_dims: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    output: Activation,
}

/// Parameter handles of a net placed on a tape, in `W1, b1, W2, b2, ...` order.
#[derive(Debug, Clone)]
pub struct NetVars {
    pub vars: Vec<Var>,
}

/// One tensor per parameter, same order and shapes as [`MlpNet::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub tensors: Vec<Tensor>,
}

impl NetGrads {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            tensors: net.params().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn collect(grads: &mut Gradients, net: &MlpNet, vars: &NetVars) -> Self {
        Self {
            tensors: net
                .params()
                .zip(&vars.vars)
                .map(|(p, &v)| grads.take_or_zeros(v, p))
                .collect(),
        }
    }
}

impl MlpNet {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, output)?;
        for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
            let bound = 1.0 / (w.rows() as f64).sqrt();
            for v in w.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
            for v in b.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_dims: &[usize], output: Activation) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!(
                "layer dims must have at least input and output, all positive: {layer_dims:?}"
            )));
        }
        let weights = layer_dims
            .windows(2)
            .map(|w| Tensor::zeros(&[w[0], w[1]]))
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| Tensor::zeros(&[1, d])).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            output,
        })
    }

    /// Build from explicit parameters; shapes must chain.
    pub fn from_params(
        layer_dims: &[usize],
        output: Activation,
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, output)?;
        if weights.len() != net.weights.len() || biases.len() != net.biases.len() {
            return Err(Error::shape("wrong number of layers"));
        }
        for (dst, src) in net.weights.iter_mut().zip(weights) {
            if dst.shape() != src.shape() {
                return Err(Error::shape(format!(
                    "weight {:?} expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src;
        }
        for (dst, src) in net.biases.iter_mut().zip(biases) {
            if dst.len() != src.len() {
                return Err(Error::shape(format!(
                    "bias {:?} expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = Tensor::new(dst.shape().to_vec(), src.into_data())?;
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("non-empty dims")
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    /// Activation after each layer, hidden layers first.
    pub fn activations(&self) -> Vec<Activation> {
        let n = self.weights.len();
        (0..n)
            .map(|i| if i + 1 == n { self.output } else { Activation::Relu })
            .collect()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
    }

    pub fn float_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "net expects input width {}, got {:?}",
                self.input_dim(),
                input.shape()
            )));
        }
        input.ensure_finite("network input")
    }

    /// Batched forward pass `[n, in] -> [n, out]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let n = input.rows();
        let acts = self.activations();
        let mut x = input.data().to_vec();
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(acts) {
            let (k, m) = (w.rows(), w.cols());
            let mut out = vec![0.0; n * m];
            matmul_into(&x, w.data(), &mut out, n, k, m);
            // same summation order as the tape path, so both agree bitwise
            for row in out.chunks_mut(m) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            if act != Activation::None {
                for v in &mut out {
                    *v = act.apply(*v);
                }
            }
            x = out;
        }
        Tensor::new(vec![n, self.output_dim()], x)
    }

    /// Record the forward pass on `tape`. With `track_params` the returned
    /// [`NetVars`] give access to parameter gradients; otherwise the
    /// parameters enter as constants and only input gradients flow.
    pub fn on_tape(&self, tape: &mut Tape, input: Var, track_params: bool) -> Result<(Var, NetVars)> {
        let vars = self.bind(tape, track_params);
        let out = self.apply(tape, &vars, input)?;
        Ok((out, vars))
    }

    /// Place the parameters on `tape` once so several forward passes can
    /// share them (their gradients then accumulate in the same nodes).
    pub fn bind(&self, tape: &mut Tape, track_params: bool) -> NetVars {
        let mut vars = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if track_params {
                vars.push(tape.variable(w.clone()));
                vars.push(tape.variable(b.clone()));
            } else {
                vars.push(tape.constant(w.clone()));
                vars.push(tape.constant(b.clone()));
            }
        }
        NetVars { vars }
    }

    /// Forward pass through parameters previously placed with [`MlpNet::bind`].
    pub fn apply(&self, tape: &mut Tape, vars: &NetVars, input: Var) -> Result<Var> {
        self.check_input(tape.value(input))?;
        if vars.vars.len() != 2 * self.weights.len() {
            return Err(Error::shape("parameter handles do not match this net"));
        }
        let mut x = input;
        for (pair, act) in vars.vars.chunks(2).zip(self.activations()) {
            let z = tape.matmul(x, pair[0])?;
            let z = tape.add_bias(z, pair[1])?;
            x = act.on_tape(tape, z);
        }
        Ok(x)
    }

    /// `self <- tau * live + (1 - tau) * self`, elementwise.
    pub fn soft_update_from(&mut self, live: &MlpNet, tau: f64) -> Result<()> {
        if self.layer_dims != live.layer_dims {
            return Err(Error::shape("soft update between nets of different shapes"));
        }
        for (t, l) in self.params_mut().zip(live.params()) {
            for (tv, &lv) in t.data_mut().iter_mut().zip(l.data()) {
                *tv = tau * lv + (1.0 - tau) * *tv;
            }
        }
        Ok(())
    }
}

/// Value and input-gradient of a scalar objective built on a fresh tape.
///
/// The closure receives the tape and the input variable and must return a
/// `[1, 1]` node.
pub fn grad_input<F>(input: &Tensor, objective: F) -> Result<(f64, Tensor)>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.variable(input.clone());
    let y = objective(&mut tape, x)?;
    let value = tape.value(y).item()?;
    let mut grads = tape.backward(y)?;
    Ok((value, grads.take_or_zeros(x, input)))
}

/// Value and parameter-gradients of a scalar loss of `net`.
///
/// The closure receives the tape and the net's output given `input`.
pub fn grad_params<F>(net: &MlpNet, input: &Tensor, loss: F) -> Result<(f64, NetGrads)>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let (out, vars) = net.on_tape(&mut tape, x, true)?;
    let y = loss(&mut tape, out)?;
    let value = tape.value(y).item()?;
    let mut grads = tape.backward(y)?;
    Ok((value, NetGrads::collect(&mut grads, net, &vars)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = MlpNet::zeros(&[3, 5, 2], Activation::None).unwrap();
        let x = Tensor::from_rows(&[[1.0, -4.0, 2.5], [0.1, 0.2, 0.3]]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = MlpNet::from_params(
            &[3, 3],
            Activation::None,
            vec![Tensor::identity(3)],
            vec![Tensor::zeros(&[1, 3])],
        )
        .unwrap();
        let x = Tensor::row(&[0.5, -7.0, 3.25]);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn forward_matches_hand_rolled_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = MlpNet::new(&[4, 6, 3], Activation::None, &mut rng).unwrap();
        let x = [0.3, -1.2, 0.8, 2.0];
        let params: Vec<&Tensor> = net.params().collect();
        let (w1, b1, w2, b2) = (params[0], params[1], params[2], params[3]);
        let mut h = [0.0; 6];
        for j in 0..6 {
            let mut acc = b1.data()[j];
            for i in 0..4 {
                acc += x[i] * w1.get(i, j);
            }
            h[j] = acc.max(0.0);
        }
        let mut expect = [0.0; 3];
        for j in 0..3 {
            let mut acc = b2.data()[j];
            for i in 0..6 {
                acc += h[i] * w2.get(i, j);
            }
            expect[j] = acc;
        }
        let y = net.forward(&Tensor::row(&x)).unwrap();
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = MlpNet::zeros(&[3, 2], Activation::None).unwrap();
        assert!(matches!(
            net.forward(&Tensor::row(&[1.0, 2.0])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn tape_and_direct_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpNet::new(&[2, 8, 8, 2], Activation::Tanh, &mut rng).unwrap();
        let x = Tensor::from_rows(&[[0.1, 0.2], [-3.0, 4.0]]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (y, _) = net.on_tape(&mut tape, xv, false).unwrap();
        assert_eq!(tape.value(y), &net.forward(&x).unwrap());
    }

    #[test]
    fn bounded_output_stays_in_unit_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MlpNet::new(&[2, 16, 3], Activation::Tanh, &mut rng).unwrap();
        let x = Tensor::from_rows(&[[1e3, -1e3], [0.0, 0.0], [-50.0, 75.0]]).unwrap();
        let y = net.forward(&x).unwrap();
        assert!(y.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn soft_update_is_elementwise_blend() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let live = MlpNet::new(&[2, 3, 1], Activation::None, &mut rng).unwrap();
        let old = MlpNet::new(&[2, 3, 1], Activation::None, &mut rng).unwrap();
        let mut target = old.clone();
        target.soft_update_from(&live, 0.25).unwrap();
        for ((t, l), o) in target.params().zip(live.params()).zip(old.params()) {
            for ((&tv, &lv), &ov) in t.data().iter().zip(l.data()).zip(o.data()) {
                assert_eq!(tv, 0.25 * lv + 0.75 * ov);
            }
        }
    }
}
