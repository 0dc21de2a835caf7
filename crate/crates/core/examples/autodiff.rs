//! Reverse-mode gradients of a small expression, checked against central
//! differences.

use agm::numerics::{backward, Tape, Tensor};

fn f(x: &Tensor, w: &Tensor) -> agm::Result<Tensor> {
    x.matmul(w)?.silu()?.square()?.mean()
}

fn main() -> agm::Result<()> {
    let x = Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]])?;
    let w0 = Tensor::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.2]])?;

    let tape = Tape::new();
    let w = tape.var(&w0);
    let loss = f(&x, &w)?;
    let grads = backward(&loss)?;
    let analytic = grads.wrt(&w);

    let h = 1e-6;
    println!("loss = {:.6}", loss.item()?);
    println!("{:>4} {:>14} {:>14}", "i", "analytic", "central diff");
    for i in 0..w0.numel() {
        let bump = |d: f64| -> agm::Result<f64> {
            let mut v = w0.to_vec();
            v[i] += d;
            f(&x, &Tensor::new(w0.shape(), v)?)?.item()
        };
        let fd = (bump(h)? - bump(-h)?) / (2.0 * h);
        println!("{i:>4} {:>14.9} {fd:>14.9}", analytic.data()[i]);
    }
    Ok(())
}
