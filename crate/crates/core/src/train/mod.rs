//! Optimization loop: teacher on cross-entropy, student on the
//! distillation objective, with exact resume from checkpoints.

pub mod checkpoint;
pub mod optim;

use std::path::Path;

use crate::arch::ArchSpec;
use crate::config::{RunConfig, TrainMode};
use crate::data::{epoch_permutation, Dataset};
use crate::distill::{loss_blend, loss_mid, loss_total, DistillConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::model::{build_pair_with, Model, ModelPair, ParamSet};
use crate::nn::loss::correct_predictions;
use crate::nn::{cross_entropy, Mode};
use crate::tensor::{Scalar, Tape, Tensor};

pub use checkpoint::{Archive, Entry, Payload};
pub use optim::{adaptive_adder_lr, cosine_lr, Sgd, SgdConfig};

/// Outcome of one supervised step on a single model.
pub struct CeOutcome<T> {
    pub loss: f64,
    pub correct: usize,
    pub logits: Tensor<T>,
    /// Raw tap outputs, detached.
    pub taps: Vec<Tensor<T>>,
}

/// One cross-entropy step: forward in train mode, backward, update.
pub fn ce_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut Sgd<T>,
    x: &Tensor<T>,
    labels: &[usize],
    lr: f64,
    sgd: &SgdConfig,
) -> Result<CeOutcome<T>> {
    let tape = Tape::new();
    let out = model.forward(&tape, x, Mode::Train)?;
    let loss = cross_entropy(out.logits, labels)?;
    let grads = tape.backward(loss)?;
    let logits = (*out.logits.value()).clone();
    let taps = out.taps.iter().map(|t| (*t.value()).clone()).collect();
    let loss = loss.value().item()?.as_f64();
    opt.step(&mut model.params, &grads, lr, sgd)?;
    Ok(CeOutcome {
        loss,
        correct: correct_predictions(&logits, labels),
        logits,
        taps,
    })
}

#[derive(Clone, Debug, Default)]
pub struct PairOptimizers<T> {
    pub teacher: Sgd<T>,
    pub student: Sgd<T>,
    pub heads: Sgd<T>,
}

/// Losses and batch accuracy of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub loss_ce_teacher: Option<f64>,
    pub loss_mid: Option<f64>,
    pub loss_blend: Option<f64>,
    pub loss_total: f64,
    pub teacher_correct: Option<usize>,
    pub student_correct: usize,
    pub batch: usize,
}

/// Joint step. The teacher takes a cross-entropy step first; its logits
/// and taps from that forward pass are constants for the student, whose
/// loss is `beta * mid + alpha * KD + CE`.
pub fn pkkd_step<T: Scalar>(
    pair: &mut ModelPair<T>,
    opts: &mut PairOptimizers<T>,
    x: &Tensor<T>,
    labels: &[usize],
    lr: f64,
    sgd: &SgdConfig,
    distill: &DistillConfig,
) -> Result<StepMetrics> {
    let teacher = ce_step(&mut pair.teacher, &mut opts.teacher, x, labels, lr, sgd)?;

    let tape = Tape::new();
    let out = pair.student.forward(&tape, x, Mode::Train)?;
    let (ya, yc) = pair.heads.apply(&tape, &out.taps, &teacher.taps)?;
    let mid = loss_mid(&tape, &ya, &yc)?;
    let blend = loss_blend(out.logits, &teacher.logits, labels, distill.alpha, distill.temperature)?;
    let total = loss_total(mid, blend, distill.beta)?;
    let grads = tape.backward(total)?;
    let student_logits = out.logits.value();
    let metrics = StepMetrics {
        step: 0,
        lr,
        loss_ce_teacher: Some(teacher.loss),
        loss_mid: Some(mid.value().item()?.as_f64()),
        loss_blend: Some(blend.value().item()?.as_f64()),
        loss_total: total.value().item()?.as_f64(),
        teacher_correct: Some(teacher.correct),
        student_correct: correct_predictions(&student_logits, labels),
        batch: labels.len(),
    };
    opts.student.step(&mut pair.student.params, &grads, lr, sgd)?;
    opts.heads.step(&mut pair.heads.params, &grads, lr, sgd)?;
    Ok(metrics)
}

/// Student alone on cross-entropy.
pub fn vanilla_step<T: Scalar>(
    student: &mut Model<T>,
    opt: &mut Sgd<T>,
    x: &Tensor<T>,
    labels: &[usize],
    lr: f64,
    sgd: &SgdConfig,
) -> Result<StepMetrics> {
    let out = ce_step(student, opt, x, labels, lr, sgd)?;
    Ok(StepMetrics {
        step: 0,
        lr,
        loss_ce_teacher: None,
        loss_mid: None,
        loss_blend: None,
        loss_total: out.loss,
        teacher_correct: None,
        student_correct: out.correct,
        batch: labels.len(),
    })
}

/// Fraction of `data` classified correctly in eval mode.
pub fn accuracy<T: Scalar>(model: &mut Model<T>, data: &Dataset<T>, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let logits = model.predict(&data.images, batch)?;
    Ok(correct_predictions(&logits, &data.labels) as f64 / data.len() as f64)
}

// running sums over the current epoch, in checkpoint order
const ACCUM_LEN: usize = 8;

#[derive(Clone, Debug, Default, PartialEq)]
struct EpochAccum {
    steps: f64,
    ce_teacher: f64,
    mid: f64,
    blend: f64,
    total: f64,
    teacher_correct: f64,
    student_correct: f64,
    samples: f64,
}

impl EpochAccum {
    fn add(&mut self, m: &StepMetrics) {
        self.steps += 1.0;
        self.ce_teacher += m.loss_ce_teacher.unwrap_or(0.0);
        self.mid += m.loss_mid.unwrap_or(0.0);
        self.blend += m.loss_blend.unwrap_or(0.0);
        self.total += m.loss_total;
        self.teacher_correct += m.teacher_correct.unwrap_or(0) as f64;
        self.student_correct += m.student_correct as f64;
        self.samples += m.batch as f64;
    }

    fn to_values(&self) -> [f64; ACCUM_LEN] {
        [
            self.steps,
            self.ce_teacher,
            self.mid,
            self.blend,
            self.total,
            self.teacher_correct,
            self.student_correct,
            self.samples,
        ]
    }

    fn from_values(v: &[f64]) -> Result<Self> {
        let v: [f64; ACCUM_LEN] = v
            .try_into()
            .map_err(|_| Error::invalid(format!("epoch accumulator has {} values, expected {ACCUM_LEN}", v.len())))?;
        Ok(Self {
            steps: v[0],
            ce_teacher: v[1],
            mid: v[2],
            blend: v[3],
            total: v[4],
            teacher_correct: v[5],
            student_correct: v[6],
            samples: v[7],
        })
    }
}

/// Drives training for a whole run. Every source of randomness is a pure
/// function of the seed and the global step, so a run restored from a
/// checkpoint continues exactly where the original left off.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    config: RunConfig,
    spec: ArchSpec,
    pub pair: ModelPair<T>,
    pub opts: PairOptimizers<T>,
    step: u64,
    dataset_len: usize,
    accum: EpochAccum,
    history: Vec<MetricsRow>,
    step_log: Vec<StepMetrics>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh run over a training set of `dataset_len` samples.
    pub fn new(config: RunConfig, dataset_len: usize) -> Result<Self> {
        config.validate()?;
        let spec = config.arch.resolve()?;
        if dataset_len < config.train.batch_size {
            return Err(Error::Config(format!(
                "training set of {dataset_len} samples is smaller than one batch of {}",
                config.train.batch_size
            )));
        }
        let pair = build_pair_with(&spec, config.train.seed, &config.distill)?;
        Ok(Self {
            config,
            spec,
            pair,
            opts: PairOptimizers::default(),
            step: 0,
            dataset_len,
            accum: EpochAccum::default(),
            history: Vec::new(),
            step_log: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    /// Incomplete trailing batches are dropped.
    pub fn steps_per_epoch(&self) -> u64 {
        (self.dataset_len / self.config.train.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.config.train.epochs as u64
    }

    pub fn global_step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.step / self.steps_per_epoch()
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps()
    }

    /// One row per completed epoch.
    pub fn history(&self) -> &[MetricsRow] {
        &self.history
    }

    /// Steps taken by this process; not part of checkpoints.
    pub fn step_log(&self) -> &[StepMetrics] {
        &self.step_log
    }

    fn check_data(&self, train: &Dataset<T>) -> Result<()> {
        if train.len() != self.dataset_len {
            return Err(Error::Config(format!(
                "trainer was set up for {} training samples, got {}",
                self.dataset_len,
                train.len()
            )));
        }
        Ok(())
    }

    /// Takes one step. At the end of an epoch both networks are evaluated
    /// and a row is appended to the history.
    pub fn step(&mut self, train: &Dataset<T>, test: &Dataset<T>) -> Result<StepMetrics> {
        self.check_data(train)?;
        if self.is_finished() {
            return Err(Error::invalid("training already finished"));
        }
        let tc = &self.config.train;
        let spe = self.steps_per_epoch();
        let (epoch, cursor) = (self.step / spe, (self.step % spe) as usize);
        let order = epoch_permutation(tc.seed, epoch, self.dataset_len);
        let rows = &order[cursor * tc.batch_size..(cursor + 1) * tc.batch_size];
        let augment = self.config.data.train_augment().map(|p| (p, tc.seed, epoch));
        let (x, labels) = train.batch(rows, augment)?;
        let lr = cosine_lr(self.step, self.total_steps(), tc.base_lr)?;
        let sgd = tc.sgd();
        let mut m = match tc.mode {
            TrainMode::Pkkd => pkkd_step(&mut self.pair, &mut self.opts, &x, &labels, lr, &sgd, &self.config.distill)?,
            TrainMode::Vanilla => vanilla_step(&mut self.pair.student, &mut self.opts.student, &x, &labels, lr, &sgd)?,
        };
        m.step = self.step;
        self.accum.add(&m);
        self.step_log.push(m.clone());
        self.step += 1;
        if self.step % spe == 0 {
            self.finish_epoch(test, epoch as usize, lr)?;
        }
        Ok(m)
    }

    fn finish_epoch(&mut self, test: &Dataset<T>, epoch: usize, lr: f64) -> Result<()> {
        let a = std::mem::take(&mut self.accum);
        let pkkd = self.config.train.mode == TrainMode::Pkkd;
        let eb = self.config.train.eval_batch;
        let (teacher_train, teacher_test) = if pkkd {
            (Some(a.teacher_correct / a.samples), Some(accuracy(&mut self.pair.teacher, test, eb)?))
        } else {
            (None, None)
        };
        let row = MetricsRow {
            epoch,
            step: self.step,
            lr,
            loss_ce_teacher: pkkd.then_some(a.ce_teacher / a.steps),
            loss_mid: pkkd.then_some(a.mid / a.steps),
            loss_blend: pkkd.then_some(a.blend / a.steps),
            loss_total: a.total / a.steps,
            teacher_train_acc: teacher_train,
            teacher_test_acc: teacher_test,
            student_train_acc: a.student_correct / a.samples,
            student_test_acc: accuracy(&mut self.pair.student, test, eb)?,
        };
        self.history.push(row);
        Ok(())
    }

    /// Runs until `max_steps` global steps are done (or to completion),
    /// calling `on_epoch` for each finished epoch.
    pub fn run(
        &mut self,
        train: &Dataset<T>,
        test: &Dataset<T>,
        max_steps: Option<u64>,
        mut on_epoch: impl FnMut(&MetricsRow),
    ) -> Result<()> {
        let stop = max_steps.unwrap_or(u64::MAX).min(self.total_steps());
        while self.step < stop {
            let before = self.history.len();
            self.step(train, test)?;
            if self.history.len() > before {
                on_epoch(self.history.last().expect("just pushed"));
            }
        }
        Ok(())
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut ar = Archive::new();
        let cfg = serde_json::to_vec(&self.config)?;
        ar.insert("config", vec![cfg.len()], Payload::U8(cfg))?;
        ar.insert("state.step", vec![1], Payload::U64(vec![self.step]))?;
        ar.insert("state.dataset_len", vec![1], Payload::U64(vec![self.dataset_len as u64]))?;
        let spe = self.steps_per_epoch();
        ar.insert(
            "state.rng",
            vec![3],
            Payload::U64(vec![self.config.train.seed, self.step / spe, self.step % spe]),
        )?;
        ar.insert("state.epoch_accum", vec![ACCUM_LEN], Payload::F64(self.accum.to_values().to_vec()))?;
        let hist: Vec<f64> = self.history.iter().flat_map(|r| r.to_values()).collect();
        ar.insert("state.history", vec![self.history.len(), 11], Payload::F64(hist))?;
        put_params(&mut ar, "teacher.", &self.pair.teacher.params)?;
        put_params(&mut ar, "student.", &self.pair.student.params)?;
        put_params(&mut ar, "", &self.pair.heads.params)?;
        for (prefix, opt) in [
            ("optim.teacher.", &self.opts.teacher),
            ("optim.student.", &self.opts.student),
            ("optim.heads.", &self.opts.heads),
        ] {
            for (name, v) in opt.velocity() {
                ar.insert_tensor(format!("{prefix}{name}"), v)?;
            }
        }
        Ok(ar)
    }

    /// Rebuilds a trainer from an archive. Every entry must be consumed and
    /// every parameter must be present with its exact shape.
    pub fn from_archive(ar: &Archive) -> Result<Self> {
        let config = archive_config(ar)?;
        if config_dtype(&config) != T::DTYPE {
            return Err(Error::Config(format!(
                "checkpoint was trained in {:?}, requested {:?}",
                config.train.precision,
                T::DTYPE
            )));
        }
        let dataset_len = single_u64(ar, "state.dataset_len")? as usize;
        let mut t = Self::new(config, dataset_len)?;
        t.step = single_u64(ar, "state.step")?;
        if t.step > t.total_steps() {
            return Err(Error::invalid(format!(
                "checkpoint step {} exceeds the run length {}",
                t.step,
                t.total_steps()
            )));
        }
        let spe = t.steps_per_epoch();
        let rng = ar.u64s("state.rng")?;
        if rng != [t.config.train.seed, t.step / spe, t.step % spe] {
            return Err(Error::invalid(format!("inconsistent data-order state {rng:?}")));
        }
        t.accum = EpochAccum::from_values(ar.f64s("state.epoch_accum")?)?;
        let hist = ar.f64s("state.history")?;
        if hist.len() % 11 != 0 {
            return Err(Error::invalid("history does not have 11 columns"));
        }
        t.history = hist
            .chunks(11)
            .map(|c| MetricsRow::from_values(c.try_into().expect("chunk of 11")))
            .collect();
        let mut used = 6;
        used += get_params(ar, "teacher.", &mut t.pair.teacher.params)?;
        used += get_params(ar, "student.", &mut t.pair.student.params)?;
        used += get_params(ar, "", &mut t.pair.heads.params)?;
        for (prefix, opt, params) in [
            ("optim.teacher.", &mut t.opts.teacher, &t.pair.teacher.params),
            ("optim.student.", &mut t.opts.student, &t.pair.student.params),
            ("optim.heads.", &mut t.opts.heads, &t.pair.heads.params),
        ] {
            for name in ar.names().filter_map(|n| n.strip_prefix(prefix)) {
                let p = params
                    .get(name)
                    .ok_or_else(|| Error::invalid(format!("velocity for unknown parameter `{prefix}{name}`")))?;
                let v: Tensor<T> = ar.tensor(&format!("{prefix}{name}"))?;
                if v.shape() != p.value.shape() {
                    return Err(Error::shape("checkpoint", format!("{prefix}{name}: {:?} vs {:?}", v.shape(), p.value.shape())));
                }
                opt.set_velocity(name, v);
                used += 1;
            }
        }
        if used != ar.len() {
            let known: Vec<&str> = ar
                .names()
                .filter(|n| !n.starts_with("optim.") && !n.starts_with("state.") && *n != "config")
                .filter(|n| !n.starts_with("teacher.") && !n.starts_with("student.") && !n.starts_with("heads."))
                .collect();
            return Err(Error::invalid(format!("unrecognized checkpoint entries {known:?}")));
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

/// Run configuration stored in a checkpoint.
pub fn archive_config(ar: &Archive) -> Result<RunConfig> {
    let text = std::str::from_utf8(ar.bytes("config")?)
        .map_err(|e| Error::invalid(format!("checkpoint config is not UTF-8: {e}")))?;
    RunConfig::from_json(text)
}

fn config_dtype(cfg: &RunConfig) -> crate::tensor::DType {
    match cfg.train.precision {
        crate::config::Precision::F32 => crate::tensor::DType::F32,
        crate::config::Precision::F64 => crate::tensor::DType::F64,
    }
}

fn single_u64(ar: &Archive, name: &str) -> Result<u64> {
    match ar.u64s(name)? {
        [v] => Ok(*v),
        other => Err(Error::invalid(format!("`{name}` holds {} values, expected 1", other.len()))),
    }
}

fn put_params<T: Scalar>(ar: &mut Archive, prefix: &str, set: &ParamSet<T>) -> Result<()> {
    for (name, p) in set.iter() {
        ar.insert_tensor(format!("{prefix}{name}"), &p.value)?;
    }
    for (name, b) in set.buffers() {
        ar.insert_tensor(format!("{prefix}{name}"), b)?;
    }
    Ok(())
}

fn get_params<T: Scalar>(ar: &Archive, prefix: &str, set: &mut ParamSet<T>) -> Result<usize> {
    let mut n = 0;
    for (name, p) in set.iter_mut() {
        load_into(ar, &format!("{prefix}{name}"), &mut p.value)?;
        n += 1;
    }
    let names: Vec<String> = set.buffers().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let slot = set.buffer_mut(&name).expect("listed");
        load_into(ar, &format!("{prefix}{name}"), slot)?;
        n += 1;
    }
    Ok(n)
}

fn load_into<T: Scalar>(ar: &Archive, key: &str, slot: &mut Tensor<T>) -> Result<()> {
    let t: Tensor<T> = ar.tensor(key)?;
    if t.shape() != slot.shape() {
        return Err(Error::shape("checkpoint", format!("{key}: stored {:?}, expected {:?}", t.shape(), slot.shape())));
    }
    *slot = t;
    Ok(())
}
