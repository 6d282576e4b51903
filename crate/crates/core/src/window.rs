//! Four-way partition of a layer's weights, each window with its own
//! codebook.
//!
//! The outlier-aware strategy cuts at `q1 - c*IQR`, the median and
//! `q3 + c*IQR`, so the two outer windows hold only tail weights. The equal
//! strategy cuts the range `[min, max]` into four equal-width windows.
//! A window that receives no weights has no codebook; weights that would
//! fall in it are served by the nearest live window.

use std::fmt;
use std::str::FromStr;

use crate::gmm::GmmCodebook;
use crate::kmeans::kmeans_init;
use crate::{Error, Result};

/// Default outlier multiplier on the interquartile range.
pub const DEFAULT_IQR_MULTIPLIER: f64 = 5.0;

/// Smallest weight count that is split into windows.
pub const MIN_PARTITION_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowStrategy {
    Equal,
    OutlierAware,
}

impl WindowStrategy {
    pub fn tag(self) -> u8 {
        match self {
            WindowStrategy::Equal => 0,
            WindowStrategy::OutlierAware => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(WindowStrategy::Equal),
            1 => Some(WindowStrategy::OutlierAware),
            _ => None,
        }
    }
}

impl fmt::Display for WindowStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowStrategy::Equal => "equal",
            WindowStrategy::OutlierAware => "outlier",
        })
    }
}

impl FromStr for WindowStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(WindowStrategy::Equal),
            "outlier" | "outlier-aware" => Ok(WindowStrategy::OutlierAware),
            other => Err(Error::Config(format!("unknown window strategy '{other}'"))),
        }
    }
}

/// Quantile with linear interpolation between order statistics
/// (the "type 7" convention). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Self { q1: quantile_sorted(&s, 0.25), median: quantile_sorted(&s, 0.5), q3: quantile_sorted(&s, 0.75) }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Window layout of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPartition {
    pub strategy: WindowStrategy,
    /// Ascending cut points; empty when the layer fell back to one window.
    pub cuts: Vec<f64>,
    /// One slot per window; `None` for collapsed (empty) windows.
    pub codebooks: Vec<Option<GmmCodebook>>,
    /// Set when the layer was too small to partition.
    pub fallback: bool,
}

impl WindowPartition {
    pub fn num_windows(&self) -> usize {
        self.codebooks.len()
    }

    /// Window whose interval contains `x`, ignoring collapse.
    pub fn raw_window_of(&self, x: f64) -> usize {
        self.cuts.iter().filter(|&&c| c <= x).count()
    }

    /// Live window serving `x`.
    pub fn window_of(&self, x: f64) -> usize {
        self.resolve(self.raw_window_of(x))
    }

    /// Nearest live window to `w`, lower index first on ties.
    pub fn resolve(&self, w: usize) -> usize {
        let n = self.codebooks.len();
        for dist in 0..n {
            if w >= dist && self.codebooks[w - dist].is_some() {
                return w - dist;
            }
            if w + dist < n && self.codebooks[w + dist].is_some() {
                return w + dist;
            }
        }
        unreachable!("partition has at least one live window")
    }

    /// Live component count per window (zero for collapsed windows).
    pub fn window_sizes(&self) -> Vec<usize> {
        self.codebooks.iter().map(|c| c.as_ref().map_or(0, |c| c.len())).collect()
    }

    /// Offset of each window's components inside the layer's union codebook.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.window_sizes()
            .into_iter()
            .map(|n| {
                let o = acc;
                acc += n;
                o
            })
            .collect()
    }

    /// Total live components across windows.
    pub fn live_components(&self) -> usize {
        self.window_sizes().iter().sum()
    }

    /// Means of all live components, window by window.
    pub fn union_means(&self) -> Vec<f64> {
        self.codebooks.iter().flatten().flat_map(|c| c.mu.iter().copied()).collect()
    }

    pub fn union_sigmas(&self) -> Vec<f64> {
        self.codebooks.iter().flatten().flat_map(|c| c.sigma.iter().copied()).collect()
    }
}

/// Cuts for `strategy` over `values` (at least `MIN_PARTITION_SIZE` of them).
pub fn window_cuts(values: &[f64], strategy: WindowStrategy, iqr_multiplier: f64) -> Vec<f64> {
    match strategy {
        WindowStrategy::Equal => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo) / 4.0;
            (1..4).map(|j| lo + j as f64 * width).collect()
        }
        WindowStrategy::OutlierAware => {
            let q = Quartiles::of(values);
            let iqr = q.iqr();
            vec![q.q1 - iqr_multiplier * iqr, q.median, q.q3 + iqr_multiplier * iqr]
        }
    }
}

/// Partitions `values` into windows and fits a `k`-component codebook to
/// each nonempty window. Returns the partition and the live window of every
/// value.
pub fn partition_windows(
    values: &[f64],
    strategy: WindowStrategy,
    iqr_multiplier: f64,
    k: usize,
    tau: f64,
    seed: u64,
) -> Result<(WindowPartition, Vec<usize>)> {
    if values.is_empty() {
        return Err(Error::Input("cannot partition an empty weight set".into()));
    }
    if !(iqr_multiplier >= 0.0) {
        return Err(Error::Config("IQR multiplier must be nonnegative".into()));
    }
    if values.len() < MIN_PARTITION_SIZE {
        let cb = kmeans_init(values, k.min(values.len()), tau, seed)?;
        let partition = WindowPartition { strategy, cuts: Vec::new(), codebooks: vec![Some(cb)], fallback: true };
        return Ok((partition, vec![0; values.len()]));
    }

    let cuts = window_cuts(values, strategy, iqr_multiplier);
    let probe = WindowPartition { strategy, cuts: cuts.clone(), codebooks: vec![None; 4], fallback: false };
    let raw: Vec<usize> = values.iter().map(|&x| probe.raw_window_of(x)).collect();
    let mut codebooks = Vec::with_capacity(4);
    for w in 0..4 {
        let members: Vec<f64> = values.iter().zip(&raw).filter(|(_, &r)| r == w).map(|(&x, _)| x).collect();
        if members.is_empty() {
            codebooks.push(None);
        } else {
            let kw = k.min(members.len());
            codebooks.push(Some(kmeans_init(&members, kw, tau, seed.wrapping_add(w as u64))?));
        }
    }
    let partition = WindowPartition { strategy, cuts, codebooks, fallback: false };
    // every raw window with members has a codebook, so membership is raw
    Ok((partition, raw))
}
