//! Compression accounting, task metrics and histogram tables.

use std::fmt::Write as _;

use crate::codec::{compressed_size_bytes, dense_size_bytes};
use crate::compressor::CompressedModel;
use crate::network::Network;
use crate::task::{Dataset, Targets, Task};
use crate::{Error, Result};

/// `(32 / bits) * (1 / nonzero)`.
pub fn compression_rate(bits: f64, nonzero: f64) -> Result<f64> {
    if !(bits > 0.0 && bits.is_finite()) {
        return Err(Error::Input(format!("bits must be positive, got {bits}")));
    }
    if !(nonzero > 0.0 && nonzero <= 1.0) {
        return Err(Error::Input(format!("nonzero must be in (0,1], got {nonzero}")));
    }
    Ok(32.0 / bits / nonzero)
}

/// `base - compressed`, in the metric's own units.
pub fn accuracy_drop(base: f64, compressed: f64) -> f64 {
    base - compressed
}

pub fn mse(outputs: &[Vec<f64>], data: &Dataset) -> Result<f64> {
    let Targets::Real { values, dim } = &data.targets else {
        return Err(Error::Input("MSE needs real-valued targets".into()));
    };
    if outputs.len() != data.len() {
        return Err(Error::Input("one output per row expected".into()));
    }
    let mut total = 0.0;
    for (i, out) in outputs.iter().enumerate() {
        for (o, y) in out.iter().zip(&values[i * dim..(i + 1) * dim]) {
            total += (o - y) * (o - y);
        }
    }
    Ok(total / (data.len() * dim) as f64)
}

/// Fraction of rows whose largest output matches the label.
pub fn accuracy(outputs: &[Vec<f64>], data: &Dataset) -> Result<f64> {
    let Targets::Labels { labels, .. } = &data.targets else {
        return Err(Error::Input("accuracy needs class labels".into()));
    };
    if outputs.len() != data.len() {
        return Err(Error::Input("one output per row expected".into()));
    }
    let hits = outputs.iter().zip(labels).filter(|(o, &l)| crate::gmm::argmax(o) == l).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Task-appropriate score: accuracy for classification, MSE for regression.
pub fn score(outputs: &[Vec<f64>], data: &Dataset, task: Task) -> Result<f64> {
    match task {
        Task::Classification => accuracy(outputs, data),
        Task::Regression { .. } => mse(outputs, data),
    }
}

pub fn predict_all(net: &Network, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    (0..data.len()).map(|i| net.forward(data.row(i))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub params: usize,
    pub live: usize,
    pub codebook: usize,
    pub effective_bits: f64,
    pub index_bits: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    /// Parameter-weighted mean of `log2 C` over layers.
    pub effective_bits: f64,
    /// `log2 K` for the configured components per window.
    pub nominal_bits: f64,
    pub nonzero: f64,
    /// Rate from `effective_bits`.
    pub compression_rate: f64,
    /// Rate from `nominal_bits`.
    pub nominal_compression_rate: f64,
    pub dense_bytes: u64,
    pub compressed_bytes: u64,
    pub payload_bytes: u64,
    pub layers: Vec<LayerReport>,
}

impl CompressionReport {
    pub fn new(m: &CompressedModel) -> Result<Self> {
        let layers: Vec<LayerReport> = m
            .layers
            .iter()
            .map(|l| LayerReport {
                params: l.bitmap.len(),
                live: l.live(),
                codebook: l.codebook.len(),
                effective_bits: l.effective_bits(),
                index_bits: l.index_bits(),
            })
            .collect();
        let t = m.param_count();
        let live = m.live_count();
        let nonzero = if t == 0 { 1.0 } else { live as f64 / t as f64 };
        let effective_bits = if t == 0 {
            0.0
        } else {
            layers.iter().map(|l| l.effective_bits * l.params as f64).sum::<f64>() / t as f64
        };
        let nominal_bits = (m.meta.k.max(1) as f64).log2();
        let rate =
            |bits: f64| if bits > 0.0 && nonzero > 0.0 { compression_rate(bits, nonzero) } else { Ok(f64::INFINITY) };
        Ok(Self {
            effective_bits,
            nominal_bits,
            nonzero,
            compression_rate: rate(effective_bits)?,
            nominal_compression_rate: rate(nominal_bits)?,
            dense_bytes: dense_size_bytes(&m.network()?),
            compressed_bytes: compressed_size_bytes(m, false)?,
            payload_bytes: compressed_size_bytes(m, true)?,
            layers,
        })
    }

    /// `key,value` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let rows: [(&str, f64); 9] = [
            ("effective_bits", self.effective_bits),
            ("nominal_bits", self.nominal_bits),
            ("nonzero", self.nonzero),
            ("compression_rate", self.compression_rate),
            ("nominal_compression_rate", self.nominal_compression_rate),
            ("dense_bytes", self.dense_bytes as f64),
            ("compressed_bytes", self.compressed_bytes as f64),
            ("payload_bytes", self.payload_bytes as f64),
            ("measured_ratio", self.dense_bytes as f64 / self.payload_bytes.max(1) as f64),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}

/// Equal-width histogram over a fixed range.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins over `[min, max]` of `values`.
    pub fn of(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("histogram of an empty sample".into()));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::with_range(values, bins, lo, hi)
    }

    /// Bins over `[lo, hi]`; values outside are clamped to the edge bins.
    pub fn with_range(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Input("histogram needs at least one bin".into()));
        }
        if values.is_empty() {
            return Err(Error::Input("histogram of an empty sample".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Input("histogram range must be finite".into()));
        }
        let mut counts = vec![0u64; bins];
        let width = hi - lo;
        for &v in values {
            let b = if width > 0.0 { (((v - lo) / width) * bins as f64).floor() } else { 0.0 };
            counts[(b.max(0.0) as usize).min(bins - 1)] += 1;
        }
        Ok(Self { lo, hi, counts })
    }

    pub fn edges(&self, b: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * b as f64, if b + 1 == self.counts.len() { self.hi } else { self.lo + w * (b + 1) as f64 })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,count\n");
        for (b, c) in self.counts.iter().enumerate() {
            let (l, r) = self.edges(b);
            let _ = writeln!(s, "{l},{r},{c}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse { line: i + 2, msg: e.to_string() })?;
            let field = |j: usize| -> Result<f64> {
                rec.get(j)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse { line: i + 2, msg: format!("bad field {j}") })
            };
            edges.push((field(0)?, field(1)?));
            counts.push(field(2)? as u64);
        }
        let (Some(first), Some(last)) = (edges.first(), edges.last()) else {
            return Err(Error::Input("histogram table has no rows".into()));
        };
        Ok(Self { lo: first.0, hi: last.1, counts })
    }
}

/// Histogram of raw weights.
pub fn export_histogram(values: &[f64], bins: usize) -> Result<String> {
    Ok(Histogram::of(values, bins)?.to_csv())
}

/// Histogram of the dequantized weights of a compressed model.
pub fn export_model_histogram(m: &CompressedModel, bins: usize) -> Result<String> {
    export_histogram(&m.weights(), bins)
}

/// Total variation distance between two histograms with the same binning.
pub fn total_variation(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.counts.len() != b.counts.len() {
        return Err(Error::Input("histograms have different bin counts".into()));
    }
    let (na, nb) = (a.total() as f64, b.total() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Input("empty histogram".into()));
    }
    Ok(0.5 * a.counts.iter().zip(&b.counts).map(|(&x, &y)| (x as f64 / na - y as f64 / nb).abs()).sum::<f64>())
}
