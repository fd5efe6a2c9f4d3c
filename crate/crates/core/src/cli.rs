//! Command-line front end. Data goes to stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::arch::ArchSpec;
use crate::config::{Precision, RunConfig};
use crate::data::{Dataset, Split};
use crate::diag::{dump_features, weight_histogram};
use crate::error::{Error, Result};
use crate::metrics::write_metrics_csv;
use crate::opcount::{count_ops, CountMode, CountOptions};
use crate::tensor::Scalar;
use crate::theory::{random_cases, residual_table};
use crate::train::{accuracy, archive_config, Archive, Trainer};

#[derive(Parser, Debug)]
#[command(name = "pkkd", version, about = "Adder networks with kernel-based progressive distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Network {
    Teacher,
    Student,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a teacher/student pair (or a vanilla student) from a JSON config.
    Train {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "runs/latest")]
        out_dir: PathBuf,
        /// Overrides `train.seed` of a fresh run.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many global steps (a checkpoint is still written).
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Test accuracy of the networks stored in a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Multiplication and addition counts of an architecture.
    Count {
        #[arg(long)]
        arch: String,
        #[arg(long, default_value = "cnn")]
        mode: CountMode,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        include_shortcuts: bool,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        include_classifier: bool,
        #[arg(long)]
        json: bool,
    },
    /// Penultimate-layer features of the test set as CSV.
    Features {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "student")]
        network: Network,
        /// Only the first N test samples.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Residual table of the truncated kernel expansion on random cases.
    VerifyTheorem {
        #[arg(long, default_value_t = 15)]
        max_order: usize,
        #[arg(long, default_value_t = 100)]
        cases: usize,
        /// Upper bound on |x.f| / (2 sigma^2).
        #[arg(long, default_value_t = 2.0)]
        z_max: f64,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Histogram and excess kurtosis of one layer's filters.
    WeightHist {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long, value_enum, default_value = "student")]
        network: Network,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match run(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Train {
            config,
            data_dir,
            out_dir,
            seed,
            resume,
            max_steps,
        } => {
            let cfg = match (&resume, &config) {
                (Some(ckpt), _) => {
                    let stored = archive_config(&Archive::load(ckpt)?)?;
                    if let Some(path) = &config {
                        if RunConfig::from_file(path)? != stored {
                            return Err(Error::Config(format!(
                                "{} differs from the configuration stored in {}",
                                path.display(),
                                ckpt.display()
                            )));
                        }
                    }
                    stored
                }
                (None, Some(path)) => {
                    let mut c = RunConfig::from_file(path)?;
                    if let Some(s) = seed {
                        c.train.seed = s;
                    }
                    c
                }
                (None, None) => unreachable!("clap requires --config without --resume"),
            };
            let args = TrainArgs {
                data_dir: data_dir.as_deref(),
                out_dir: &out_dir,
                resume: resume.as_deref(),
                max_steps,
            };
            match cfg.train.precision {
                Precision::F32 => train::<f32>(cfg, args, out),
                Precision::F64 => train::<f64>(cfg, args, out),
            }
        }
        Command::Eval { checkpoint, data_dir } => {
            let ar = Archive::load(&checkpoint)?;
            match archive_config(&ar)?.train.precision {
                Precision::F32 => eval::<f32>(&ar, data_dir.as_deref(), out),
                Precision::F64 => eval::<f64>(&ar, data_dir.as_deref(), out),
            }
        }
        Command::Count {
            arch,
            mode,
            include_shortcuts,
            include_classifier,
            json,
        } => {
            let spec = ArchSpec::builtin(&arch)?;
            let opts = CountOptions {
                include_shortcuts,
                include_classifier,
            };
            let report = count_ops(&spec, mode, opts)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                writeln!(out, "{report}")?;
            }
            Ok(())
        }
        Command::Features {
            checkpoint,
            out: path,
            data_dir,
            network,
            limit,
        } => {
            let ar = Archive::load(&checkpoint)?;
            let n = match archive_config(&ar)?.train.precision {
                Precision::F32 => features::<f32>(&ar, data_dir.as_deref(), network, limit, &path)?,
                Precision::F64 => features::<f64>(&ar, data_dir.as_deref(), network, limit, &path)?,
            };
            writeln!(out, "wrote {n} rows to {}", path.display())?;
            Ok(())
        }
        Command::VerifyTheorem {
            max_order,
            cases,
            z_max,
            dim,
            seed,
        } => {
            let cases = random_cases(cases, dim, z_max, seed)?;
            let table = residual_table(&cases, max_order)?;
            writeln!(out, "order,max_residual,max_bound")?;
            for row in &table {
                writeln!(out, "{},{:.3e},{:.3e}", row.order, row.max_residual, row.max_bound)?;
            }
            Ok(())
        }
        Command::WeightHist {
            checkpoint,
            layer,
            network,
        } => {
            let ar = Archive::load(&checkpoint)?;
            match archive_config(&ar)?.train.precision {
                Precision::F32 => weight_hist::<f32>(&ar, layer, network, out),
                Precision::F64 => weight_hist::<f64>(&ar, layer, network, out),
            }
        }
    }
}

struct TrainArgs<'a> {
    data_dir: Option<&'a Path>,
    out_dir: &'a Path,
    resume: Option<&'a Path>,
    max_steps: Option<u64>,
}

fn load_split<T: Scalar>(cfg: &RunConfig, data_dir: Option<&Path>, split: Split) -> Result<Dataset<T>> {
    cfg.data.load(data_dir, split)
}

fn train<T: Scalar>(cfg: RunConfig, args: TrainArgs<'_>, out: &mut dyn Write) -> Result<()> {
    let train_set = load_split::<T>(&cfg, args.data_dir, Split::Train)?;
    let test_set = load_split::<T>(&cfg, args.data_dir, Split::Test)?;
    let mut trainer = match args.resume {
        Some(path) => Trainer::<T>::load(path)?,
        None => Trainer::<T>::new(cfg, train_set.len())?,
    };
    std::fs::create_dir_all(args.out_dir)?;
    let ckpt = args.out_dir.join("checkpoint.pkkd");
    eprintln!(
        "{}: step {} of {} ({} per epoch)",
        trainer.spec().name,
        trainer.global_step(),
        trainer.total_steps(),
        trainer.steps_per_epoch()
    );
    let mut failed = None;
    trainer.run(&train_set, &test_set, args.max_steps, |row| {
        let line = format!(
            "epoch {} step {} loss {:.4} teacher_test {} student_test {:.4}",
            row.epoch,
            row.step,
            row.loss_total,
            row.teacher_test_acc.map_or("-".to_string(), |a| format!("{a:.4}")),
            row.student_test_acc
        );
        if let Err(e) = writeln!(out, "{line}") {
            failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = failed {
        return Err(e.into());
    }
    trainer.save(&ckpt)?;
    let metrics = BufWriter::new(File::create(args.out_dir.join("metrics.csv"))?);
    write_metrics_csv(metrics, trainer.history())?;
    eprintln!("checkpoint written to {}", ckpt.display());
    Ok(())
}

fn eval<T: Scalar>(ar: &Archive, data_dir: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let mut t = Trainer::<T>::from_archive(ar)?;
    let test = load_split::<T>(t.config(), data_dir, Split::Test)?;
    let eb = t.config().train.eval_batch;
    let teacher = accuracy(&mut t.pair.teacher, &test, eb)?;
    let student = accuracy(&mut t.pair.student, &test, eb)?;
    writeln!(out, "samples {}", test.len())?;
    writeln!(out, "teacher_test_acc {teacher:.4}")?;
    writeln!(out, "student_test_acc {student:.4}")?;
    Ok(())
}

fn features<T: Scalar>(
    ar: &Archive,
    data_dir: Option<&Path>,
    network: Network,
    limit: Option<usize>,
    path: &Path,
) -> Result<usize> {
    let mut t = Trainer::<T>::from_archive(ar)?;
    let mut test = load_split::<T>(t.config(), data_dir, Split::Test)?;
    if let Some(n) = limit {
        test = test.truncate(n)?;
    }
    let eb = t.config().train.eval_batch;
    let model = match network {
        Network::Teacher => &mut t.pair.teacher,
        Network::Student => &mut t.pair.student,
    };
    let file = BufWriter::new(File::create(path)?);
    dump_features(model, &test, eb, file)
}

fn weight_hist<T: Scalar>(ar: &Archive, layer: usize, network: Network, out: &mut dyn Write) -> Result<()> {
    let t = Trainer::<T>::from_archive(ar)?;
    let model = match network {
        Network::Teacher => &t.pair.teacher,
        Network::Student => &t.pair.student,
    };
    write!(out, "{}", weight_histogram(model, layer)?)?;
    Ok(())
}
