//! Interrupts a short run, saves it, restores it and shows that the resumed
//! run is bitwise identical to an uninterrupted one.

use std::path::PathBuf;

use pkkd::config::RunConfig;
use pkkd::data::Split;
use pkkd::train::Trainer;

fn main() -> pkkd::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut cfg = RunConfig::from_file(root.join("configs/lenet2d-mnist.json"))?;
    cfg.data.train_limit = Some(256);
    cfg.data.test_limit = Some(256);
    cfg.train.epochs = 2;
    let data = root.join("data/mnist");
    let train = cfg.data.load::<f32>(Some(&data), Split::Train)?;
    let test = cfg.data.load::<f32>(Some(&data), Split::Test)?;

    let mut straight = Trainer::<f32>::new(cfg.clone(), train.len())?;
    straight.run(&train, &test, None, |_| {})?;

    let mut first = Trainer::<f32>::new(cfg, train.len())?;
    first.run(&train, &test, Some(11), |_| {})?;
    let path = std::env::temp_dir().join("pkkd-roundtrip.ckpt");
    first.save(&path)?;
    let bytes = std::fs::metadata(&path)?.len();
    let mut resumed = Trainer::<f32>::load(&path)?;
    resumed.run(&train, &test, None, |_| {})?;

    let same = straight.to_archive()?.encode() == resumed.to_archive()?.encode();
    println!("checkpoint at step 11: {bytes} bytes");
    println!("resumed run identical to uninterrupted run: {same}");
    std::fs::remove_file(path)?;
    Ok(())
}
