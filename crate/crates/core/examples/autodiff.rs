// Reverse-mode gradients through a small conv/activation/L1 graph,
// checked against central differences on the same graph run eagerly.

use spreadcast::numerics::{Activation, Eager, Graph, RngStream, Tape, Tensor};
use spreadcast::Result;

fn loss<G: Graph<f64>>(
    g: &mut G,
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    y: &Tensor<f64>,
) -> Result<G::Value> {
    let x = g.input(x.clone());
    let k = g.param("k", k);
    let b = g.param("b", &Tensor::zeros([2]));
    let h = g.conv3d(&x, &k, &b, [1, 2, 2])?;
    let h = g.activation(&h, Activation::LeakyRelu(0.2))?;
    let y = g.input(y.clone());
    g.l1_loss(&h, &y)
}

/// Largest relative gap between the tape gradient and a finite
/// difference over every kernel entry.
pub fn run() -> Result<f64> {
    let mut rng = RngStream::new(7, 0);
    let x = Tensor::new([1, 3, 6, 6, 1], rng.fill_normal(108))?;
    let k = Tensor::new([2, 3, 3, 1, 2], rng.fill_normal(36))?;
    let y = Tensor::new([1, 3, 3, 3, 2], rng.fill_normal(54))?;

    let mut tape = Tape::new();
    let l = loss(&mut tape, &x, &k, &y)?;
    let grads = tape.backward(l)?;
    let dk = &grads.params()[0].1;

    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..k.numel() {
        let nudged = |d: f64| {
            let mut v = k.to_vec();
            v[i] += d;
            Tensor::new(k.shape(), v)
        };
        let up = loss(&mut Eager, &x, &nudged(h)?, &y)?.item();
        let down = loss(&mut Eager, &x, &nudged(-h)?, &y)?.item();
        let fd = (up - down) / (2.0 * h);
        let an = dk.data()[i];
        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
    }
    Ok(worst)
}

fn main() -> Result<()> {
    let worst = run()?;
    println!("36 kernel gradients, worst relative error {worst:.2e}");
    Ok(())
}
