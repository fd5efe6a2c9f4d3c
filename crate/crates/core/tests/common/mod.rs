//! Shared oracles for the integration tests.

#![allow(dead_code)]

use pkkd::distill::{kernel_g, kernel_h, loss_blend, loss_mid, loss_total, rho_apply};
use pkkd::nn::adder::{adder2d_grad_filter, adder2d_grad_input};
use pkkd::nn::basic::{flatten, mul, relu, sum};
use pkkd::nn::batchnorm::{batch_norm_eval, batch_norm_train};
use pkkd::nn::loss::softmax;
use pkkd::nn::{
    adder2d, conv2d, cross_entropy, global_avg_pool, linear, matmul_lastdim, max_pool2d, mse_mean, soft_cross_entropy,
    Geometry,
};
use pkkd::tensor::{finite_diff_grad, relative_error, seeded_init, InitScheme, Tape, Tensor, Var};
use pkkd::Result;

pub const FD_EPS: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-5;
pub const INSTANCES: u64 = 20;

pub fn normal(shape: &[usize], std: f64, seed: u64) -> Tensor<f64> {
    seeded_init(shape, InitScheme::Normal { mean: 0.0, std }, seed).unwrap()
}

/// Tensor of small integers in `-r..=r`; sums and products stay exact.
pub fn integers(shape: &[usize], r: i64, seed: u64) -> Tensor<f64> {
    let u = seeded_init::<f64>(shape, InitScheme::Normal { mean: 0.0, std: 1.0 }, seed).unwrap();
    u.map(|v| ((v * 1e6).abs() as i64 % (2 * r + 1) - r) as f64)
}

/// Worst relative error between tape gradients and central differences,
/// over every input of `op`. Non-scalar outputs are contracted with a fixed
/// random tensor first.
pub fn fd_check<F>(inputs: &[Tensor<f64>], seed: u64, op: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let scalar = |tape: &Tape<f64>, ins: &[Tensor<f64>], track: bool| -> Result<(f64, Option<Vec<Tensor<f64>>>)> {
        let vars: Vec<Var<'_, f64>> = ins
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(format!("in{i}"), t.clone()))
            .collect::<Result<_>>()?;
        let out = op(tape, &vars)?;
        let loss = if out.shape().iter().product::<usize>() == 1 && out.shape().len() <= 1 {
            out
        } else {
            let w = normal(&out.shape(), 1.0, seed ^ 0x5eed);
            sum(mul(out, tape.constant(w))?)?
        };
        let value = loss.value().item()?;
        let grads = if track {
            let g = tape.backward(loss)?;
            Some((0..ins.len()).map(|i| g.param(&format!("in{i}")).unwrap()).collect())
        } else {
            None
        };
        Ok((value, grads))
    };
    let tape = Tape::new();
    let (_, analytic) = scalar(&tape, inputs, true)?;
    let analytic = analytic.unwrap();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let numeric = finite_diff_grad(
            |probe| {
                let mut ins = inputs.to_vec();
                ins[i] = probe.clone();
                Ok(Tensor::scalar(scalar(&Tape::new(), &ins, false)?.0))
            },
            &inputs[i],
            FD_EPS,
        )?;
        worst = worst.max(relative_error(a, &numeric));
    }
    Ok(worst)
}

fn eye(c: usize, seed: u64) -> Tensor<f64> {
    let mut m = normal(&[c, c], 0.2, seed);
    for i in 0..c {
        m.data_mut()[i * c + i] += 1.0;
    }
    m
}

fn labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    (0..n).map(|i| ((seed as usize).wrapping_mul(31) + i * 7) % k).collect()
}

fn distribution(n: usize, k: usize, seed: u64) -> Tensor<f64> {
    softmax(&normal(&[n, k], 1.5, seed), 1.0).unwrap()
}

/// One finite-difference instance of a named operation.
pub fn gradient_instance(op: &str, s: u64) -> Result<f64> {
    match op {
        "conv2d" => {
            let (stride, pad) = (1 + (s % 2) as usize, (s % 3) as usize % 2);
            let ins = [normal(&[2, 5, 5, 2], 1.0, s), normal(&[3, 3, 2, 3], 0.5, s + 100), normal(&[3], 0.5, s + 200)];
            fd_check(&ins, s, |_, v| conv2d(v[0], v[1], Some(v[2]), Geometry::new(3, stride, pad)))
        }
        "batch_norm_train" => {
            let ins = [normal(&[3, 2, 2, 4], 2.0, s), normal(&[4], 1.0, s + 1), normal(&[4], 1.0, s + 2)];
            fd_check(&ins, s, |_, v| Ok(batch_norm_train(v[0], v[1], v[2], 1e-5)?.0))
        }
        "batch_norm_eval" => {
            let (m, var) = (normal(&[3], 1.0, s + 3), normal(&[3], 1.0, s + 4).map(|v| v * v + 0.5));
            let ins = [normal(&[4, 3], 1.0, s), normal(&[3], 1.0, s + 1), normal(&[3], 1.0, s + 2)];
            fd_check(&ins, s, move |_, v| batch_norm_eval(v[0], v[1], v[2], &m, &var, 1e-5))
        }
        "linear" => {
            let ins = [normal(&[3, 5], 1.0, s), normal(&[5, 4], 1.0, s + 1), normal(&[4], 1.0, s + 2)];
            fd_check(&ins, s, |_, v| linear(v[0], v[1], Some(v[2])))
        }
        "relu_maxpool_gap" => {
            let ins = [normal(&[2, 6, 6, 3], 1.0, s)];
            fd_check(&ins, s, |_, v| global_avg_pool(relu(max_pool2d(v[0], 2, 2, 0)?)?))
        }
        "maxpool_padded" => {
            let ins = [normal(&[1, 5, 5, 2], 1.0, s)];
            fd_check(&ins, s, |_, v| flatten(max_pool2d(v[0], 3, 2, 1)?))
        }
        "kernel_h" => {
            let ins = [normal(&[2, 3, 3, 4], 1.0, s), Tensor::scalar(0.3 * normal(&[1], 1.0, s + 1).data()[0])];
            fd_check(&ins, s, |_, v| kernel_h(v[0], v[1], 0))
        }
        "kernel_g" => {
            let p = normal(&[2, 3, 3, 4], 1.0, s).map(|v| -v.abs() - 0.1);
            let ins = [p, Tensor::scalar(0.3 * normal(&[1], 1.0, s + 1).data()[0])];
            fd_check(&ins, s, |_, v| kernel_g(v[0], v[1], 0))
        }
        "rho" => {
            let ins = [normal(&[2, 3, 3, 4], 1.0, s), eye(4, s + 1)];
            fd_check(&ins, s, |_, v| rho_apply(v[0], v[1]))
        }
        "matmul_lastdim" => {
            let ins = [normal(&[2, 3, 5], 1.0, s), normal(&[5, 2], 1.0, s + 1)];
            fd_check(&ins, s, |_, v| matmul_lastdim(v[0], v[1]))
        }
        "cross_entropy" => {
            let y = labels(4, 6, s);
            fd_check(&[normal(&[4, 6], 2.0, s)], s, move |_, v| cross_entropy(v[0], &y))
        }
        "soft_cross_entropy" => {
            let t = distribution(4, 6, s + 1);
            fd_check(&[normal(&[4, 6], 2.0, s)], s, move |_, v| soft_cross_entropy(v[0], &t))
        }
        "mse_mean" => {
            let ins = [normal(&[3, 2, 2, 5], 1.0, s), normal(&[3, 2, 2, 5], 1.0, s + 1)];
            fd_check(&ins, s, |_, v| mse_mean(v[0], v[1]))
        }
        "loss_blend" => {
            let t = normal(&[4, 5], 2.0, s + 1);
            let y = labels(4, 5, s);
            let (alpha, temp) = (0.5 + (s % 3) as f64, 1.0 + (s % 4) as f64);
            fd_check(&[normal(&[4, 5], 2.0, s)], s, move |_, v| loss_blend(v[0], &t, &y, alpha, temp))
        }
        "loss_mid_total" => {
            let ins = [
                normal(&[2, 2, 2, 3], 1.0, s),
                normal(&[2, 2, 2, 3], 1.0, s + 1),
                normal(&[2, 4], 1.0, s + 2),
                normal(&[2, 4], 1.0, s + 3),
            ];
            let beta = 0.25 * (1 + s % 5) as f64;
            fd_check(&ins, s, move |tape, v| {
                let mid = loss_mid(tape, &[v[0], v[2]], &[v[1], v[3]])?;
                let blend = cross_entropy(v[2], &[1, 3])?;
                loss_total(mid, blend, beta)
            })
        }
        "distill_chain" => {
            // adder -> Laplace kernel -> rho against conv -> Gaussian kernel -> rho;
            // the adder side is held constant since its surrogate is not a
            // derivative of the forward map
            let a = normal(&[1, 4, 4, 2], 1.0, s);
            let fa = normal(&[3, 3, 2, 2], 0.5, s + 1);
            let ins = [
                normal(&[3, 3, 2, 2], 0.5, s + 2),
                Tensor::scalar(1.0),
                Tensor::scalar(0.2),
                eye(2, s + 3),
                eye(2, s + 4),
            ];
            fd_check(&ins, s, move |tape, v| {
                let x = tape.constant(a.clone());
                let geom = Geometry::new(3, 1, 1);
                let pa = adder2d(x, tape.constant(fa.clone()), geom)?;
                let ya = rho_apply(kernel_g(pa, v[1], 0)?, v[3])?;
                let yc = rho_apply(kernel_h(conv2d(x, v[0], None, geom)?, v[2], 0)?, v[4])?;
                loss_mid(tape, &[ya], &[yc])
            })
        }
        other => panic!("unknown op {other}"),
    }
}

pub const GRADIENT_OPS: [&str; 17] = [
    "conv2d",
    "batch_norm_train",
    "batch_norm_eval",
    "linear",
    "relu_maxpool_gap",
    "maxpool_padded",
    "kernel_h",
    "kernel_g",
    "rho",
    "matmul_lastdim",
    "cross_entropy",
    "soft_cross_entropy",
    "mse_mean",
    "loss_blend",
    "loss_mid_total",
    "distill_chain",
    "adder_filter_fd",
];

/// Worst relative error over `INSTANCES` seeds.
pub fn gradient_suite(op: &str) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in 0..INSTANCES {
        let e = if op == "adder_filter_fd" {
            adder_filter_fd(s)?
        } else {
            gradient_instance(op, 1000 * (s + 1))?
        };
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Adder layer seen from the filter side through the full-precision
/// surrogate: the surrogate equals the true gradient of
/// `-1/2 sum (X - F)^2`, so it is checked against differences of that.
fn adder_filter_fd(s: u64) -> Result<f64> {
    let x = normal(&[2, 4, 4, 2], 1.0, s);
    let f = normal(&[3, 3, 2, 3], 0.5, s + 1);
    let geom = Geometry::new(3, 1, 1);
    let up = normal(&[2, 4, 4, 3], 1.0, s + 2);
    let tape = Tape::new();
    let fv = tape.param("f", f.clone())?;
    let y = adder2d(tape.constant(x.clone()), fv, geom)?;
    let g = tape.backward(sum(mul(y, tape.constant(up.clone()))?)?)?.param("f").unwrap();
    let numeric = finite_diff_grad(|probe| Ok(Tensor::scalar(half_sq(&x, probe, &up, geom))), &f, FD_EPS)?;
    Ok(relative_error(&g, &numeric))
}

/// `sum_out g * (-1/2 sum_window (X - F)^2)` with zero padding.
fn half_sq(x: &Tensor<f64>, f: &Tensor<f64>, g: &Tensor<f64>, geom: Geometry) -> f64 {
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (d, co) = (f.shape()[0], f.shape()[3]);
    let p = geom.padding as isize;
    let mut total = 0.0;
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                for o in 0..co {
                    let mut acc = 0.0;
                    for a in 0..d {
                        for e in 0..d {
                            let (r, q) = (i as isize + a as isize - p, j as isize + e as isize - p);
                            for ci in 0..c {
                                let xv = if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                    0.0
                                } else {
                                    x.at(&[b, r as usize, q as usize, ci])
                                };
                                let diff = xv - f.at(&[a, e, ci, o]);
                                acc += diff * diff;
                            }
                        }
                    }
                    total += g.at(&[b, i, j, o]) * -0.5 * acc;
                }
            }
        }
    }
    total
}

/// Naive loop oracle for the adder layer and its surrogate gradients:
/// `(Y, dF, dX)` with `Y = -sum |X - F|`, `dF = sum (X - F) g` over all
/// window positions including padding, and `dX = sum clip(F - X) g` over
/// real input positions only.
pub fn adder_oracle(
    x: &Tensor<f64>,
    f: &Tensor<f64>,
    g: &Tensor<f64>,
    geom: Geometry,
) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (d, co) = (f.shape()[0], f.shape()[3]);
    let (st, p) = (geom.stride as isize, geom.padding as isize);
    let oh = (h + 2 * geom.padding - d) / geom.stride + 1;
    let ow = (w + 2 * geom.padding - d) / geom.stride + 1;
    let mut y = Tensor::zeros([n, oh, ow, co]);
    let mut df = Tensor::zeros(f.shape().to_vec());
    let mut dx = Tensor::zeros(x.shape().to_vec());
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for o in 0..co {
                    let gv = g.at(&[b, i, j, o]);
                    let mut acc = 0.0;
                    for a in 0..d {
                        for e in 0..d {
                            let (r, q) = (i as isize * st + a as isize - p, j as isize * st + e as isize - p);
                            let inside = r >= 0 && q >= 0 && r < h as isize && q < w as isize;
                            for ci in 0..c {
                                let xv = if inside { x.at(&[b, r as usize, q as usize, ci]) } else { 0.0 };
                                let fv = f.at(&[a, e, ci, o]);
                                acc += (xv - fv).abs();
                                let fi = ((a * d + e) * c + ci) * co + o;
                                df.data_mut()[fi] += (xv - fv) * gv;
                                if inside {
                                    let xi = ((b * h + r as usize) * w + q as usize) * c + ci;
                                    dx.data_mut()[xi] += (fv - xv).clamp(-1.0, 1.0) * gv;
                                }
                            }
                        }
                    }
                    y.data_mut()[((b * oh + i) * ow + j) * co + o] = -acc;
                }
            }
        }
    }
    (y, df, dx)
}

/// Exact-arithmetic comparison of the adder layer against the loop oracle
/// on integer-valued tensors. Returns whether forward, filter gradient,
/// input gradient and the tape path all agree bitwise.
pub fn adder_closed_form_instance(s: u64) -> Result<bool> {
    let geom = Geometry::new(1 + 2 * (s % 2) as usize, 1 + (s % 3 == 2) as usize, (s % 2) as usize);
    let x = integers(&[2, 5, 5, 2], 3, s);
    let f = integers(&[geom.kernel, geom.kernel, 2, 3], 3, s + 1);
    let tape = Tape::new();
    let (xv, fv) = (tape.param("x", x.clone())?, tape.param("f", f.clone())?);
    let y = adder2d(xv, fv, geom)?;
    let g = integers(&y.shape(), 2, s + 2);
    let grads = tape.backward(sum(mul(y, tape.constant(g.clone()))?)?)?;
    let (oy, odf, odx) = adder_oracle(&x, &f, &g, geom);
    let direct_f = adder2d_grad_filter(&x, &f, &g, geom)?;
    let direct_x = adder2d_grad_input(&x, &f, &g, geom)?;
    Ok(y.value().data() == oy.data()
        && grads.param("f").unwrap().data() == odf.data()
        && grads.param("x").unwrap().data() == odx.data()
        && direct_f.data() == odf.data()
        && direct_x.data() == odx.data())
}

use std::path::PathBuf;

use pkkd::config::{RunConfig, TrainMode};
use pkkd::data::{Dataset, Split};
use pkkd::model::{build_pair_with, ModelPair};
use pkkd::train::{ce_step, pkkd_step, PairOptimizers, Sgd, Trainer};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn mnist_dir() -> PathBuf {
    repo_root().join("data/mnist")
}

pub fn preset() -> RunConfig {
    RunConfig::from_file(repo_root().join("configs/lenet2d-mnist.json")).unwrap()
}

/// Preset configuration cut down to a short run.
pub fn small_config(train: usize, test: usize, batch: usize, epochs: usize) -> RunConfig {
    let mut cfg = preset();
    cfg.data.train_limit = Some(train);
    cfg.data.test_limit = Some(test);
    cfg.train.batch_size = batch;
    cfg.train.epochs = epochs;
    cfg
}

pub fn load(cfg: &RunConfig) -> (Dataset<f32>, Dataset<f32>) {
    let dir = mnist_dir();
    (
        cfg.data.load(Some(&dir), Split::Train).unwrap(),
        cfg.data.load(Some(&dir), Split::Test).unwrap(),
    )
}

fn same_params(a: &ModelPair<f32>, b: &pkkd::model::Model<f32>) -> bool {
    a.teacher.params.iter().zip(b.params.iter()).all(|((n1, p1), (n2, p2))| {
        n1 == n2 && p1.value.data().iter().zip(p2.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    }) && a
        .teacher
        .params
        .buffers()
        .zip(b.params.buffers())
        .all(|((_, x), (_, y))| x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()))
}

/// Runs `batches` joint steps on random inputs next to a standalone
/// cross-entropy copy of the teacher; true when the teachers agree bitwise
/// after every step.
pub fn teacher_isolation(batches: u64) -> pkkd::Result<bool> {
    let cfg = preset();
    let spec = cfg.arch.resolve()?;
    let mut pair: ModelPair<f32> = build_pair_with(&spec, 9, &cfg.distill)?;
    let mut alone = pair.teacher.clone();
    let mut opts = PairOptimizers::default();
    let mut opt_alone = Sgd::new();
    let sgd = cfg.train.sgd();
    for b in 0..batches {
        let x = seeded_init::<f32>(&[8, 28, 28, 1], InitScheme::Normal { mean: 0.0, std: 1.0 }, 40 + b)?;
        let y: Vec<usize> = (0..8).map(|i| ((b as usize) * 3 + i) % 10).collect();
        let lr = 0.1 / (1 + b) as f64;
        pkkd_step(&mut pair, &mut opts, &x, &y, lr, &sgd, &cfg.distill)?;
        ce_step(&mut alone, &mut opt_alone, &x, &y, lr, &sgd)?;
        if !same_params(&pair, &alone) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn student_bits(t: &Trainer<f32>) -> Vec<u32> {
    t.pair
        .student
        .params
        .iter()
        .flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .chain(t.pair.student.params.buffers().flat_map(|(_, b)| b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .collect()
}

/// With `alpha = beta = 0` the joint trainer and a vanilla trainer walk
/// the student through identical states for `steps` steps.
pub fn zero_weights_match_vanilla(steps: u64) -> pkkd::Result<bool> {
    let mut cfg = small_config(800, 200, 16, 2);
    cfg.distill.alpha = 0.0;
    cfg.distill.beta = 0.0;
    let (train, test) = load(&cfg);
    let mut joint = Trainer::<f32>::new(cfg.clone(), train.len())?;
    cfg.train.mode = TrainMode::Vanilla;
    let mut vanilla = Trainer::<f32>::new(cfg, train.len())?;
    assert!(joint.total_steps() >= steps);
    for _ in 0..steps {
        joint.step(&train, &test)?;
        vanilla.step(&train, &test)?;
        if student_bits(&joint) != student_bits(&vanilla) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// A run interrupted at `at`, saved, reloaded and continued to `steps`
/// encodes to the same bytes as an uninterrupted one.
pub fn resume_matches(steps: u64, at: u64) -> pkkd::Result<bool> {
    let cfg = small_config(800, 200, 16, 2);
    let (train, test) = load(&cfg);
    let mut straight = Trainer::<f32>::new(cfg.clone(), train.len())?;
    straight.run(&train, &test, Some(steps), |_| {})?;
    let mut first = Trainer::<f32>::new(cfg, train.len())?;
    first.run(&train, &test, Some(at), |_| {})?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("mid.ckpt");
    first.save(&path)?;
    drop(first);
    let mut resumed = Trainer::<f32>::load(&path)?;
    resumed.run(&train, &test, Some(steps), |_| {})?;
    Ok(straight.to_archive()?.encode() == resumed.to_archive()?.encode())
}
