//! Acceptance report: one PASS/FAIL line per criterion, details indented
//! below it. Failures are reported, not fatal, so that the other test
//! targets still run; set PKKD_ACCEPTANCE_STRICT=1 to exit nonzero.

mod common;

use std::time::{Duration, Instant};

use common::{
    adder_closed_form_instance, gradient_suite, load, mnist_dir, preset, resume_matches, teacher_isolation,
    zero_weights_match_vanilla, GRADIENT_OPS, GRAD_TOL, INSTANCES,
};
use pkkd::arch::ArchSpec;
use pkkd::config::TrainMode;
use pkkd::data::Split;
use pkkd::diag::{dump_features, read_features_csv, weight_histogram, Kurtosis};
use pkkd::opcount::{count_ops, human, CountMode, CountOptions};
use pkkd::theory::{feature_term, multi_index_count, multi_indices, random_cases, series_term, verify_expansion};
use pkkd::train::Trainer;

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Warn,
}

struct Report {
    results: Vec<(usize, Verdict)>,
}

impl Report {
    fn record(&mut self, id: usize, title: &str, verdict: Verdict, elapsed: Duration, details: &[String]) {
        let tag = match verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Warn => "WARN",
        };
        println!("{tag} criterion {id}: {title} ({:.1}s)", elapsed.as_secs_f64());
        for d in details {
            println!("       {d}");
        }
        self.results.push((id, verdict));
    }
}

fn pct(got: f64, want: f64) -> f64 {
    100.0 * (got - want) / want
}

fn op_counts() -> (bool, Vec<String>) {
    // (arch, shortcuts, tolerance %, cnn, ann mul, ann add)
    let rows: [(&str, bool, f64, f64, f64, f64); 5] = [
        ("resnet20", true, 2.0, 41.17e6, 0.45e6, 81.89e6),
        ("resnet32", true, 2.0, 69.12e6, 0.45e6, 137.79e6),
        ("vgg-small", true, 2.0, 0.65e9, 0.05e9, 1.25e9),
        ("resnet18", false, 5.0, 1.8e9, 0.1e9, 3.5e9),
        ("resnet50", false, 5.0, 3.9e9, 0.1e9, 7.6e9),
    ];
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, shortcuts, tol, cnn_ref, mul_ref, add_ref) in rows {
        let spec = ArchSpec::builtin(name).unwrap();
        let opts = CountOptions {
            include_shortcuts: shortcuts,
            include_classifier: true,
        };
        let cnn = count_ops(&spec, CountMode::Cnn, opts).unwrap();
        let ann = count_ops(&spec, CountMode::Ann, opts).unwrap();
        let identity = ann.additions == 2 * (cnn.additions - ann.multiplications) + ann.multiplications;
        let mut row_ok = identity && cnn.multiplications == cnn.additions;
        let mut parts = Vec::new();
        for (label, got, want) in [
            ("cnn", cnn.multiplications as f64, cnn_ref),
            ("ann mul", ann.multiplications as f64, mul_ref),
            ("ann add", ann.additions as f64, add_ref),
        ] {
            let e = pct(got, want);
            let hit = e.abs() <= tol;
            row_ok &= hit;
            parts.push(format!("{label} {} vs {} ({e:+.1}%{})", human(got as u64), human(want as u64), if hit { "" } else { " !" }));
        }
        ok &= row_ok;
        lines.push(format!(
            "{name:<9} shortcuts={shortcuts:<5} tol {tol}%: {}; identity {}",
            parts.join(", "),
            if identity { "exact" } else { "BROKEN" }
        ));
    }
    (ok, lines)
}

fn gradients() -> (bool, Vec<String>) {
    let mut ok = true;
    let mut lines = Vec::new();
    for op in GRADIENT_OPS {
        let worst = gradient_suite(op).unwrap();
        ok &= worst <= GRAD_TOL;
        lines.push(format!("{op:<20} {INSTANCES} instances, worst relative error {worst:.2e}"));
    }
    let exact = (0..INSTANCES).all(|s| adder_closed_form_instance(s).unwrap());
    ok &= exact;
    lines.push(format!(
        "adder surrogates vs closed forms ({INSTANCES} integer instances): {}",
        if exact { "bitwise equal" } else { "MISMATCH" }
    ));
    (ok, lines)
}

fn theorem() -> (bool, Vec<String>) {
    let cases = random_cases(100, 3, 2.0, 2024).unwrap();
    let worst = cases
        .iter()
        .map(|(x, f, s)| verify_expansion(x, f, *s, 15).unwrap())
        .fold(0.0, f64::max);
    let top_z = cases
        .iter()
        .map(|(x, f, s)| x.iter().zip(f).map(|(a, b)| a * b).sum::<f64>().abs() / (2.0 * s * s))
        .fold(0.0, f64::max);
    let residual_ok = worst <= 1e-9;

    let mut map_err: f64 = 0.0;
    let mut counts_ok = true;
    for k in 1..=3 {
        let x: Vec<f64> = (0..k).map(|i| 0.7 - 0.45 * i as f64).collect();
        let f: Vec<f64> = (0..k).map(|i| -0.3 + 0.5 * i as f64).collect();
        for n in 0..=4 {
            map_err = map_err.max((feature_term(&x, &f, 0.8, n).unwrap() - series_term(&x, &f, 0.8, n).unwrap()).abs());
            let fact = |m: usize| (1..=m).product::<usize>();
            let closed = fact(n + k - 1) / (fact(n) * fact(k - 1));
            counts_ok &= multi_indices(n, k).len() == closed && multi_index_count(n, k) == closed;
        }
    }
    let lines = vec![
        format!(
            "N=15 residual over 100 cases (max |x.f|/(2s^2) = {top_z:.3}): {worst:.3e} vs 1e-9{}",
            if residual_ok { "" } else { " !" }
        ),
        format!("feature-map terms vs series terms, n<=4, k<=3: max |diff| {map_err:.1e} (tol 1e-12)"),
        format!("component counts equal (n+k-1)!/(n!(k-1)!): {counts_ok}"),
    ];
    (residual_ok && map_err <= 1e-12 && counts_ok, lines)
}

struct DeskRun {
    trainer: Trainer<f32>,
    elapsed: Duration,
    sizes: (usize, usize),
}

fn desk_run(mode: TrainMode) -> DeskRun {
    let mut cfg = preset();
    cfg.train.mode = mode;
    let (train, test) = load(&cfg);
    let start = Instant::now();
    let mut trainer = Trainer::<f32>::new(cfg, train.len()).unwrap();
    trainer.run(&train, &test, None, |_| {}).unwrap();
    DeskRun {
        trainer,
        elapsed: start.elapsed(),
        sizes: (train.len(), test.len()),
    }
}

fn first_epoch_drop(t: &Trainer<f32>) -> (f64, f64) {
    let log = t.step_log();
    let spe = t.steps_per_epoch() as usize;
    let tail = log[spe - 10..spe].iter().map(|m| m.loss_total).sum::<f64>() / 10.0;
    (log[0].loss_total, tail)
}

fn main() {
    let mut report = Report { results: Vec::new() };
    println!("acceptance report");

    let t = Instant::now();
    let (ok, lines) = op_counts();
    let el = t.elapsed();
    let mut lines = lines;
    lines.push(format!("runtime {:.3}s (limit 1s)", el.as_secs_f64()));
    let v = if ok && el < Duration::from_secs(1) { Verdict::Pass } else { Verdict::Fail };
    report.record(1, "op-count reproduction", v, el, &lines);

    let t = Instant::now();
    let (ok, lines) = gradients();
    let el = t.elapsed();
    let v = if ok && el < Duration::from_secs(120) { Verdict::Pass } else { Verdict::Fail };
    report.record(2, "gradient suite", v, el, &lines);

    let t = Instant::now();
    let (ok, lines) = theorem();
    let el = t.elapsed();
    let v = if ok && el < Duration::from_secs(30) { Verdict::Pass } else { Verdict::Fail };
    report.record(3, "kernel expansion", v, el, &lines);

    let t = Instant::now();
    let ok = teacher_isolation(10).unwrap();
    let el = t.elapsed();
    let v = if ok && el < Duration::from_secs(60) { Verdict::Pass } else { Verdict::Fail };
    report.record(4, "teacher isolation", v, el, &[format!("10 batches, teacher bitwise equal to standalone CE: {ok}")]);

    let t = Instant::now();
    let reduce = zero_weights_match_vanilla(100).unwrap();
    let resume = resume_matches(100, 50).unwrap();
    let el = t.elapsed();
    let v = if reduce && resume { Verdict::Pass } else { Verdict::Fail };
    report.record(
        5,
        "reduction identities",
        v,
        el,
        &[
            format!("alpha=beta=0 student trajectory equals vanilla over 100 steps: {reduce}"),
            format!("resume at step 50 equals uninterrupted run at step 100: {resume}"),
        ],
    );

    let t = Instant::now();
    let pk = desk_run(TrainMode::Pkkd);
    let va = desk_run(TrainMode::Vanilla);
    let el = t.elapsed();
    let pr = pk.trainer.history().last().unwrap().clone();
    let vr = va.trainer.history().last().unwrap().clone();
    let teacher = pr.teacher_test_acc.unwrap();
    let (l0, l1) = first_epoch_drop(&pk.trainer);
    let drop = 1.0 - l1 / l0;
    let epochs = pk.trainer.config().train.epochs;
    let limit = Duration::from_secs(20 * 60);
    let checks = [
        teacher >= 0.95,
        vr.student_test_acc >= 0.90,
        pr.student_test_acc >= vr.student_test_acc - 0.003,
        drop >= 0.5,
        epochs <= 10,
        pk.elapsed <= limit && va.elapsed <= limit,
    ];
    let v = if checks.iter().all(|&c| c) { Verdict::Pass } else { Verdict::Fail };
    report.record(
        6,
        "desk-scale MNIST training",
        v,
        el,
        &[
            format!("{} train / {} test images, {epochs} epochs, lenet-2d", pk.sizes.0, pk.sizes.1),
            format!("teacher CNN test accuracy {:.2}% (>= 95%)", 100.0 * teacher),
            format!("vanilla ANN test accuracy {:.2}% (>= 90%)", 100.0 * vr.student_test_acc),
            format!(
                "PKKD ANN test accuracy {:.2}% ({:+.2} pp vs vanilla, >= -0.3)",
                100.0 * pr.student_test_acc,
                100.0 * (pr.student_test_acc - vr.student_test_acc)
            ),
            format!("first-epoch loss_total {l0:.4} -> {l1:.4} (mean of last 10 steps), drop {:.1}% (>= 50%)", 100.0 * drop),
            format!("wall time: PKKD {:.0}s, vanilla {:.0}s (each <= 1200s)", pk.elapsed.as_secs_f64(), va.elapsed.as_secs_f64()),
        ],
    );

    let t = Instant::now();
    let mid = 3;
    let kurt = |k: Kurtosis| match k {
        Kurtosis::Excess(v) => v,
        Kurtosis::Degenerate => f64::NAN,
    };
    let ks = kurt(weight_histogram(&pk.trainer.pair.student, mid).unwrap().kurtosis);
    let kt = kurt(weight_histogram(&pk.trainer.pair.teacher, mid).unwrap().kurtosis);
    let kv = kurt(weight_histogram(&va.trainer.pair.student, mid).unwrap().kurtosis);
    let cfg = pk.trainer.config().clone();
    let test = cfg.data.load::<f32>(Some(&mnist_dir()), Split::Test).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut feats_ok = true;
    let mut lines = vec![
        format!("layer {mid} excess kurtosis: PKKD adder {ks:.3} (> 1.0), teacher conv {kt:.3} (< 1.0), vanilla adder {kv:.3}"),
    ];
    let mut pk_trainer = pk.trainer;
    let mut va_trainer = va.trainer;
    for (who, model) in [
        ("teacher", &mut pk_trainer.pair.teacher),
        ("vanilla", &mut va_trainer.pair.student),
        ("pkkd", &mut pk_trainer.pair.student),
    ] {
        let path = dir.path().join(format!("{who}.csv"));
        dump_features(model, &test, 500, std::fs::File::create(&path).unwrap()).unwrap();
        let rows = read_features_csv(std::fs::File::open(&path).unwrap()).unwrap();
        let good = rows.len() == test.len()
            && rows.iter().enumerate().all(|(i, r)| r.id == i && r.features.len() == 2 && r.features.iter().all(|v| v.is_finite()));
        feats_ok &= good;
        lines.push(format!("{who:<7} features: {} rows x 2, well-formed {good}", rows.len()));
    }
    let v = if !feats_ok {
        Verdict::Fail
    } else if ks > 1.0 && kt < 1.0 {
        Verdict::Pass
    } else {
        Verdict::Warn
    };
    report.record(7, "diagnostics", v, t.elapsed(), &lines);

    let failed: Vec<usize> = report.results.iter().filter(|r| r.1 == Verdict::Fail).map(|r| r.0).collect();
    let passed = report.results.iter().filter(|r| r.1 == Verdict::Pass).count();
    println!("acceptance: {passed}/{} passed, failed {failed:?}", report.results.len());
    if !failed.is_empty() && std::env::var_os("PKKD_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
