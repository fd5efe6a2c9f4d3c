//! Lifts a teacher's conv outputs and a student's adder outputs through
//! the Gaussian-alike and Laplace kernels, aligns them with 1x1 transforms
//! and forms the intermediate distillation loss.

use pkkd::distill::{kernel_g, kernel_h, loss_mid, rho_apply};
use pkkd::nn::{adder2d, conv2d, Geometry};
use pkkd::tensor::{seeded_init, InitScheme, Tape, Tensor};

fn main() -> pkkd::Result<()> {
    let geom = Geometry::new(3, 1, 1);
    let x: Tensor<f64> = seeded_init(&[2, 6, 6, 3], InitScheme::Normal { mean: 0.0, std: 1.0 }, 1)?;
    let wc: Tensor<f64> = seeded_init(&[3, 3, 3, 4], InitScheme::KaimingUniform { fan_in: None }, 2)?;
    let wa: Tensor<f64> = seeded_init(&[3, 3, 3, 4], InitScheme::KaimingUniform { fan_in: None }, 3)?;

    let tape = Tape::new();
    let xv = tape.constant(x);
    let teacher = conv2d(xv, tape.constant(wc), None, geom)?;
    let student = adder2d(xv, tape.param("student", wa)?, geom)?;
    let log_sigma_c = tape.param("log_sigma_c", Tensor::scalar(1f64.ln()))?;
    let log_sigma_a = tape.param("log_sigma_a", Tensor::scalar(10f64.ln()))?;
    let eye = |name: &str| {
        let mut m = Tensor::zeros([4, 4]);
        for i in 0..4 {
            m.data_mut()[i * 4 + i] = 1.0;
        }
        tape.param(name, m)
    };
    let yc = rho_apply(kernel_h(teacher, log_sigma_c, 0)?, eye("rho_c")?)?;
    let ya = rho_apply(kernel_g(student, log_sigma_a, 0)?, eye("rho_a")?)?;
    println!("student preactivations in [{:.2}, 0]", -student.value().max_abs());
    println!("kernel outputs: teacher max {:.3}, student max {:.3}", yc.value().max_abs(), ya.value().max_abs());

    let mid = loss_mid(&tape, &[ya], &[yc])?;
    let grads = tape.backward(mid)?;
    println!("loss_mid = {:.6}", mid.value().item()?);
    for name in ["student", "log_sigma_a", "log_sigma_c", "rho_a", "rho_c"] {
        println!("  |grad {name:<11}| = {:.3e}", grads.param(name).expect("registered").l2_norm());
    }
    Ok(())
}
