//! Filter-value histograms and excess kurtosis of a trained (or freshly
//! initialized) teacher and student.
//!
//!     cargo run --release --example weight_histogram -- [checkpoint] [layer]

use pkkd::config::{ArchRef, RunConfig};
use pkkd::diag::weight_histogram;
use pkkd::model::build_pair_with;
use pkkd::train::Trainer;

fn main() -> pkkd::Result<()> {
    let mut args = std::env::args().skip(1);
    let pair = match args.next() {
        Some(path) => Trainer::<f32>::load(path)?.pair,
        None => {
            let cfg = RunConfig::new(ArchRef::Builtin("lenet-2d".into()));
            build_pair_with(&cfg.arch.resolve()?, 0, &cfg.distill)?
        }
    };
    let layer = args.next().map_or(Ok(3), |v| v.parse()).expect("layer index");
    for (who, model) in [("teacher", &pair.teacher), ("student", &pair.student)] {
        let h = weight_histogram(model, layer)?;
        let peak = *h.counts.iter().max().expect("64 bins");
        println!("{who}: {} values, excess kurtosis {}", h.total(), h.kurtosis);
        for (i, &c) in h.counts.iter().enumerate().step_by(4) {
            let (lo, _) = h.bin_edges(i);
            println!("  {lo:+.4} {}", "#".repeat(c * 50 / peak.max(1)));
        }
    }
    Ok(())
}
