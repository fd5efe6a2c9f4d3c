//! Writes the 2-D penultimate features of the MNIST test subset as CSV,
//! ready for a scatter plot.
//!
//!     cargo run --release --example dump_features -- [checkpoint] [prefix]

use std::path::PathBuf;

use pkkd::config::{ArchRef, RunConfig};
use pkkd::data::Split;
use pkkd::diag::{dump_features, read_features_csv};
use pkkd::model::build_pair_with;
use pkkd::train::Trainer;

fn main() -> pkkd::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut args = std::env::args().skip(1);
    let (cfg, mut pair) = match args.next().filter(|a| a != "-") {
        Some(path) => {
            let t = Trainer::<f32>::load(path)?;
            (t.config().clone(), t.pair)
        }
        None => {
            let cfg = RunConfig::new(ArchRef::Builtin("lenet-2d".into()));
            let pair = build_pair_with(&cfg.arch.resolve()?, 0, &cfg.distill)?;
            (cfg, pair)
        }
    };
    let prefix = args.next().unwrap_or_else(|| "features".into());
    let test = cfg.data.load::<f32>(Some(&root.join("data/mnist")), Split::Test)?.truncate(1000)?;
    for (who, model) in [("teacher", &mut pair.teacher), ("student", &mut pair.student)] {
        let out = format!("{prefix}-{who}.csv");
        let n = dump_features(model, &test, 250, std::fs::File::create(&out)?)?;
        let rows = read_features_csv(std::fs::File::open(&out)?)?;
        let mean = |k: usize| rows.iter().map(|r| r.features[k]).sum::<f64>() / rows.len() as f64;
        println!("wrote {n} rows to {out}; feature means ({:.3}, {:.3})", mean(0), mean(1));
    }
    Ok(())
}
