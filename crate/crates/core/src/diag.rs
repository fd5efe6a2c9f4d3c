//! Weight-distribution and feature diagnostics.

use std::fmt;
use std::io::{Read, Write};

use crate::arch::Layer;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Scalar;

pub const HISTOGRAM_BINS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kurtosis {
    /// Fourth standardized moment minus 3: about 0 for a Gaussian, 3 for a
    /// Laplacian.
    Excess(f64),
    /// Zero variance; the statistic is undefined.
    Degenerate,
}

impl fmt::Display for Kurtosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kurtosis::Excess(k) => write!(f, "{k:.4}"),
            Kurtosis::Degenerate => f.write_str("degenerate"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub std: f64,
    pub kurtosis: Kurtosis,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * i as f64, self.lo + w * (i + 1) as f64)
    }
}

impl fmt::Display for Histogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# n={} mean={:.6} std={:.6} excess_kurtosis={}", self.total(), self.mean, self.std, self.kurtosis)?;
        writeln!(f, "bin_lo,bin_hi,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            let (a, b) = self.bin_edges(i);
            writeln!(f, "{a},{b},{c}")?;
        }
        Ok(())
    }
}

/// Histogram over `[min, max]` with moments. Constant input lands in a
/// single bin and is flagged degenerate.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(Error::invalid("histogram needs at least one value and one bin"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "histogram".into() });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = (v - mean) * (v - mean);
        (a + d, b + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0; bins];
    if hi > lo {
        let w = (hi - lo) / bins as f64;
        for v in values {
            counts[(((v - lo) / w) as usize).min(bins - 1)] += 1;
        }
    } else {
        counts[0] = values.len();
    }
    let kurtosis = if m2 > 0.0 {
        Kurtosis::Excess(m4 / (m2 * m2) - 3.0)
    } else {
        Kurtosis::Degenerate
    };
    Ok(Histogram {
        lo,
        hi,
        counts,
        mean,
        std: m2.sqrt(),
        kurtosis,
    })
}

/// 64-bin histogram of the filters of layer `layer`. Residual blocks
/// contribute their main-path filters; the projection shortcut is left out.
pub fn weight_histogram<T: Scalar>(model: &Model<T>, layer: usize) -> Result<Histogram> {
    let info = model
        .layers()
        .get(layer)
        .ok_or_else(|| Error::Config(format!("layer {layer} out of range (0..{})", model.layers().len())))?;
    let names: Vec<String> = match info.layer {
        Layer::Conv { .. } | Layer::Linear { .. } => vec![format!("layers.{layer}.weight")],
        Layer::BasicBlock { .. } | Layer::Bottleneck { .. } => info
            .convs
            .iter()
            .filter(|s| !s.is_shortcut())
            .map(|s| format!("layers.{layer}.{}.weight", s.part))
            .collect(),
        _ => {
            return Err(Error::Config(format!(
                "layer {layer} ({}) has no weights",
                info.layer.kind()
            )))
        }
    };
    let mut values = Vec::new();
    for name in names {
        let p = model
            .params
            .get(&name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))?;
        values.extend(p.value.to_f64_vec());
    }
    histogram(&values, HISTOGRAM_BINS)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub id: usize,
    pub label: usize,
    pub features: Vec<f64>,
}

/// Writes `id,label,f1..fk` for every sample of `data`, in dataset order.
pub fn dump_features<T: Scalar, W: Write>(model: &mut Model<T>, data: &Dataset<T>, batch: usize, out: W) -> Result<usize> {
    let feats = model.features(&data.images, batch)?;
    let k = feats.shape()[1];
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((1..=k).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (i, (row, label)) in feats.data().chunks(k).zip(&data.labels).enumerate() {
        let mut rec = vec![i.to_string(), label.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(data.len())
}

pub fn read_features_csv<R: Read>(input: R) -> Result<Vec<FeatureRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let k = header.len().saturating_sub(2);
    if header.get(0) != Some("id") || header.get(1) != Some("label") || k == 0 {
        return Err(Error::invalid(format!("unexpected feature header {header:?}")));
    }
    let bad = |e: std::num::ParseFloatError| Error::invalid(format!("bad feature value: {e}"));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let int = |i: usize| {
            rec[i]
                .parse::<usize>()
                .map_err(|e| Error::invalid(format!("bad integer `{}`: {e}", &rec[i])))
        };
        rows.push(FeatureRow {
            id: int(0)?,
            label: int(1)?,
            features: (2..rec.len()).map(|i| rec[i].parse::<f64>().map_err(bad)).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, Normal};

    fn excess(h: &Histogram) -> f64 {
        match h.kurtosis {
            Kurtosis::Excess(k) => k,
            Kurtosis::Degenerate => panic!("unexpected degenerate"),
        }
    }

    #[test]
    fn gaussian_sample_has_near_zero_excess() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = Normal::new(0.0, 0.3).unwrap();
        let v: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
        let h = histogram(&v, HISTOGRAM_BINS).unwrap();
        assert!(excess(&h).abs() <= 0.15, "{}", excess(&h));
        assert_eq!(h.total(), 100_000);
        assert_eq!(h.counts.len(), 64);
    }

    #[test]
    fn laplacian_sample_has_excess_near_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let e = Exp::new(1.0).unwrap();
        // difference of two exponentials is Laplacian
        let v: Vec<f64> = (0..100_000).map(|_| e.sample(&mut rng) - e.sample(&mut rng)).collect();
        let h = histogram(&v, HISTOGRAM_BINS).unwrap();
        assert!((excess(&h) - 3.0).abs() <= 0.5, "{}", excess(&h));
    }

    #[test]
    fn constant_weights_are_flagged() {
        let h = histogram(&[0.25; 40], HISTOGRAM_BINS).unwrap();
        assert_eq!(h.kurtosis, Kurtosis::Degenerate);
        assert_eq!(h.counts[0], 40);
        assert!(h.to_string().contains("degenerate"));
    }

    #[test]
    fn maximum_lands_in_the_last_bin() {
        let h = histogram(&[0.0, 1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(h.counts, vec![1, 1, 2]);
    }

    #[test]
    fn layers_without_weights_are_rejected() {
        let spec = crate::arch::ArchSpec::builtin("lenet-2d").unwrap();
        let m = Model::<f32>::new(&spec, crate::model::Flavor::Ann, 3).unwrap();
        assert!(weight_histogram(&m, 1).is_err());
        assert!(weight_histogram(&m, 99).is_err());
        let h = weight_histogram(&m, 3).unwrap();
        assert_eq!(h.total(), 5 * 5 * 16 * 32);
    }
}
