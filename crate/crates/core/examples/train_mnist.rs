//! Trains the lenet-2d teacher/student pair on the bundled MNIST subset.
//!
//!     cargo run --release --example train_mnist -- [config.json] [vanilla]

use std::path::PathBuf;
use std::time::Instant;

use pkkd::config::{RunConfig, TrainMode};
use pkkd::data::Split;
use pkkd::train::Trainer;

fn main() -> pkkd::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| root.join("configs/lenet2d-mnist.json"));
    let mut cfg = RunConfig::from_file(&path)?;
    if args.next().as_deref() == Some("vanilla") {
        cfg.train.mode = TrainMode::Vanilla;
    }
    let data_dir = root.join("data/mnist");
    let train = cfg.data.load::<f32>(Some(&data_dir), Split::Train)?;
    let test = cfg.data.load::<f32>(Some(&data_dir), Split::Test)?;

    let mut trainer = Trainer::<f32>::new(cfg, train.len())?;
    println!("{} steps per epoch, {} total", trainer.steps_per_epoch(), trainer.total_steps());
    let start = Instant::now();
    trainer.run(&train, &test, None, |row| {
        println!(
            "epoch {:2}  loss {:.4}  teacher {}  student {:.4}  ({:.0}s)",
            row.epoch,
            row.loss_total,
            row.teacher_test_acc.map_or("-".into(), |a| format!("{a:.4}")),
            row.student_test_acc,
            start.elapsed().as_secs_f64()
        );
    })?;
    let log = trainer.step_log();
    let first = log[0].loss_total;
    let spe = trainer.steps_per_epoch() as usize;
    let tail: f64 = log[spe - 10..spe].iter().map(|m| m.loss_total).sum::<f64>() / 10.0;
    println!("first-epoch loss {first:.4} -> {tail:.4} (mean of last 10 steps)");
    Ok(())
}
