//! Per-epoch metric rows and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss_ce_teacher: Option<f64>,
    pub loss_mid: Option<f64>,
    pub loss_blend: Option<f64>,
    pub loss_total: f64,
    pub teacher_train_acc: Option<f64>,
    pub teacher_test_acc: Option<f64>,
    pub student_train_acc: f64,
    pub student_test_acc: f64,
}

pub const METRICS_HEADER: [&str; 11] = [
    "epoch",
    "step",
    "lr",
    "loss_ce_teacher",
    "loss_mid",
    "loss_blend",
    "loss_total",
    "teacher_train_acc",
    "teacher_test_acc",
    "student_train_acc",
    "student_test_acc",
];

impl MetricsRow {
    /// Fixed-width numeric form; absent values become NaN.
    pub fn to_values(&self) -> [f64; 11] {
        let o = |v: Option<f64>| v.unwrap_or(f64::NAN);
        [
            self.epoch as f64,
            self.step as f64,
            self.lr,
            o(self.loss_ce_teacher),
            o(self.loss_mid),
            o(self.loss_blend),
            self.loss_total,
            o(self.teacher_train_acc),
            o(self.teacher_test_acc),
            self.student_train_acc,
            self.student_test_acc,
        ]
    }

    pub fn from_values(v: &[f64; 11]) -> Self {
        let o = |x: f64| (!x.is_nan()).then_some(x);
        Self {
            epoch: v[0] as usize,
            step: v[1] as u64,
            lr: v[2],
            loss_ce_teacher: o(v[3]),
            loss_mid: o(v[4]),
            loss_blend: o(v[5]),
            loss_total: v[6],
            teacher_train_acc: o(v[7]),
            teacher_test_acc: o(v[8]),
            student_train_acc: v[9],
            student_test_acc: v[10],
        }
    }
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(crate::error::Error::invalid(format!("unexpected metrics header {header:?}")));
    }
    r.deserialize().map(|row| Ok(row?)).collect()
}
