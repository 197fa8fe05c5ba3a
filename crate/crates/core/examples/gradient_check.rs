//! Compare tape gradients of a small tanh network against central finite
//! differences, for both the input and every parameter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_orl::diffcore::{grad_input, grad_params, Activation, MlpNet, Tensor};

fn loss(net: &MlpNet, x: &Tensor) -> f64 {
    let y = net.forward(x).unwrap();
    y.data().iter().map(|v| v * v).sum::<f64>() * 0.5
}

fn main() -> robust_orl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = MlpNet::new(&[4, 16, 16, 2], Activation::Tanh, &mut rng)?;
    let x = Tensor::from_rows(&[[0.3, -1.2, 0.8, 0.05], [1.1, 0.4, -0.6, -0.9]])?;
    let h = 1e-5;

    let half_sq = |tape: &mut robust_orl::diffcore::Tape, y| {
        let sq = tape.square(y);
        let s = tape.sum_all(sq);
        Ok(tape.scale(s, 0.5))
    };

    let (_, gx) = grad_input(&x, |tape, v| {
        let (y, _) = net.on_tape(tape, v, false)?;
        half_sq(tape, y)
    })?;
    let mut worst_input = 0.0f64;
    for i in 0..x.len() {
        let (mut p, mut m) = (x.clone(), x.clone());
        p.data_mut()[i] += h;
        m.data_mut()[i] -= h;
        let fd = (loss(&net, &p) - loss(&net, &m)) / (2.0 * h);
        worst_input = worst_input.max((fd - gx.data()[i]).abs() / fd.abs().max(1e-8));
    }

    let (_, gp) = grad_params(&net, &x, half_sq)?;
    let mut worst_param = 0.0f64;
    let mut checked = 0;
    for (t, g) in gp.tensors.iter().enumerate() {
        for i in 0..g.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            plus.params_mut().nth(t).unwrap().data_mut()[i] += h;
            minus.params_mut().nth(t).unwrap().data_mut()[i] -= h;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            worst_param = worst_param.max((fd - g.data()[i]).abs() / fd.abs().max(1e-8));
            checked += 1;
        }
    }
    println!("input gradient: worst relative error {worst_input:.2e} over {} coordinates", x.len());
    println!("parameter gradient: worst relative error {worst_param:.2e} over {checked} coordinates");
    Ok(())
}
