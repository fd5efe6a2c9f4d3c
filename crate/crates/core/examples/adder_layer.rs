//! The adder layer next to an ordinary convolution: same geometry, negated
//! l1 distances instead of inner products, and the surrogate gradients
//! that make it trainable.

use pkkd::nn::adder::{adder2d_grad_filter, adder2d_grad_input};
use pkkd::nn::{adder2d, conv2d, Geometry};
use pkkd::tensor::{seeded_init, InitScheme, Tape, Tensor};

fn main() -> pkkd::Result<()> {
    let geom = Geometry::new(3, 1, 1);
    let x: Tensor<f64> = seeded_init(&[1, 4, 4, 2], InitScheme::Normal { mean: 0.0, std: 1.0 }, 5)?;
    let f: Tensor<f64> = seeded_init(&[3, 3, 2, 2], InitScheme::Normal { mean: 0.0, std: 0.5 }, 6)?;

    let tape = Tape::new();
    let (xv, fv) = (tape.leaf(x.clone(), true), tape.param("f", f.clone())?);
    let conv = conv2d(xv, fv, None, geom)?;
    let add = adder2d(xv, fv, geom)?;
    println!("conv  output[0,0,0,:] = {:?}", &conv.value().data()[..2]);
    println!("adder output[0,0,0,:] = {:?}", &add.value().data()[..2]);
    assert!(add.value().data().iter().all(|&v| v <= 0.0));

    // full-precision filter gradient, clipped input gradient
    let up = Tensor::ones(add.shape());
    let df = adder2d_grad_filter(&x, &f, &up, geom)?;
    let dx = adder2d_grad_input(&x, &f, &up, geom)?;
    println!("|dF|max = {:.4}, |dX|max = {:.4} (clipped, so at most 9 taps x 2 outputs)", df.max_abs(), dx.max_abs());

    let loss = pkkd::nn::basic::sum(add)?;
    let grads = tape.backward(loss)?;
    assert_eq!(grads.param("f").expect("registered").data(), df.data());
    println!("tape gradients match the closed forms exactly");
    Ok(())
}
