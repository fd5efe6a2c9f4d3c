//! Compares reverse-mode gradients with central finite differences for a
//! small conv -> batch-norm -> relu -> linear -> cross-entropy network.

use pkkd::nn::{conv2d, cross_entropy, linear, BatchNormLayer, Geometry, Mode};
use pkkd::nn::basic::{flatten, relu};
use pkkd::tensor::{finite_diff_grad, relative_error, seeded_init, InitScheme, Tape, Tensor};

fn loss(x: &Tensor<f64>, w: &Tensor<f64>, fc: &Tensor<f64>, with_grad: bool) -> pkkd::Result<(f64, Option<Tensor<f64>>)> {
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.param("w", w.clone())?;
    let fcv = tape.constant(fc.clone());
    let c = conv2d(xv, wv, None, Geometry::new(3, 1, 1))?;
    let gamma = tape.constant(Tensor::ones([3]));
    let beta = tape.constant(Tensor::zeros([3]));
    let (mut rm, mut rv) = (Tensor::zeros([3]), Tensor::ones([3]));
    let h = BatchNormLayer::default().forward(c, gamma, beta, &mut rm, &mut rv, Mode::Train)?;
    let logits = linear(flatten(relu(h)?)?, fcv, None)?;
    let l = cross_entropy(logits, &[0, 2, 1, 3])?;
    let g = if with_grad { tape.backward(l)?.param("w") } else { None };
    Ok((l.value().item()?, g))
}

fn main() -> pkkd::Result<()> {
    let x = seeded_init(&[4, 5, 5, 2], InitScheme::Normal { mean: 0.0, std: 1.0 }, 1)?;
    let w = seeded_init(&[3, 3, 2, 3], InitScheme::KaimingUniform { fan_in: None }, 2)?;
    let fc = seeded_init(&[75, 4], InitScheme::KaimingUniform { fan_in: None }, 3)?;
    let (value, analytic) = loss(&x, &w, &fc, true)?;
    let numeric = finite_diff_grad(|w| Ok(Tensor::scalar(loss(&x, w, &fc, false)?.0)), &w, 1e-6)?;
    let err = relative_error(&analytic.expect("w is a parameter"), &numeric);
    println!("loss {value:.6}, filter gradient relative error {err:.2e}");
    Ok(())
}
