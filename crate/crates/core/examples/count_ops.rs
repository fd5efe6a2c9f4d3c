//! Multiplication and addition counts for every built-in architecture, in
//! both the convolutional and the adder variant.

use pkkd::arch::{ArchSpec, BUILTIN_NAMES};
use pkkd::opcount::{count_ops, human, CountMode, CountOptions};

fn main() -> pkkd::Result<()> {
    println!("{:<10} {:>10} {:>10} {:>10} {:>10}", "arch", "cnn mul", "cnn add", "ann mul", "ann add");
    for name in BUILTIN_NAMES {
        let spec = ArchSpec::builtin(name)?;
        let opts = CountOptions::default();
        let cnn = count_ops(&spec, CountMode::Cnn, opts)?;
        let ann = count_ops(&spec, CountMode::Ann, opts)?;
        println!(
            "{:<10} {:>10} {:>10} {:>10} {:>10}",
            name,
            human(cnn.multiplications),
            human(cnn.additions),
            human(ann.multiplications),
            human(ann.additions)
        );
    }

    // ImageNet bottleneck nets are usually quoted without projection shortcuts
    let spec = ArchSpec::builtin("resnet50")?;
    let opts = CountOptions {
        include_shortcuts: false,
        ..CountOptions::default()
    };
    let ann = count_ops(&spec, CountMode::Ann, opts)?;
    println!("\nresnet50 without shortcuts:\n{ann}");
    Ok(())
}
