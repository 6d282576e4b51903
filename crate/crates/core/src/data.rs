//! Deterministic data sources: synthetic regression with uniform covariates,
//! two-moons classification, delimited-text tabular files and long-tailed
//! weight samples.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::task::{Dataset, Targets};
use crate::{Error, Result};

/// Fisher's iris measurements with integer class labels, header row first.
pub const IRIS_CSV: &str = include_str!("../data/iris.csv");

/// Fraction of rows assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Regression target catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetFn {
    Zero,
    /// `sum_j 0.5 sin(2 pi x_j + j)`.
    SumOfSines,
    /// `sum_j (x_j - 0.5)^2 - x_0 x_{p-1}`.
    Polynomial,
    /// Fixed random two-layer ReLU network (16 hidden units) with
    /// long-tailed weights.
    Teacher,
}

impl std::str::FromStr for TargetFn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "sines" => Ok(Self::SumOfSines),
            "poly" => Ok(Self::Polynomial),
            "teacher" => Ok(Self::Teacher),
            other => Err(Error::Config(format!("unknown target function '{other}'"))),
        }
    }
}

impl std::fmt::Display for TargetFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Zero => "zero",
            Self::SumOfSines => "sines",
            Self::Polynomial => "poly",
            Self::Teacher => "teacher",
        })
    }
}

const TEACHER_HIDDEN: usize = 16;

struct Teacher {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
}

impl Teacher {
    fn new(p: usize, seed: u64) -> Self {
        let scale = 25.0 / (p as f64).sqrt();
        let w1 = gen_longtail_weights(TEACHER_HIDDEN * p, 0.05, 0.1, seed).into_iter().map(|w| w * scale).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ea);
        let b1 = (0..TEACHER_HIDDEN).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w2 = gen_longtail_weights(TEACHER_HIDDEN, 0.05, 0.1, seed + 1)
            .into_iter()
            .map(|w| w * 25.0 / (TEACHER_HIDDEN as f64).sqrt())
            .collect();
        Self { w1, b1, w2 }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let p = x.len();
        (0..TEACHER_HIDDEN)
            .map(|h| {
                let a: f64 = (0..p).map(|j| self.w1[h * p + j] * (x[j] - 0.5)).sum::<f64>() + self.b1[h];
                self.w2[h] * a.max(0.0)
            })
            .sum()
    }
}

/// Synthetic regression `Y = f0(X) + eps`, `X ~ U[0,1]^p`,
/// `eps ~ N(0, sigma_eps^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionTask {
    pub f0: TargetFn,
    pub p: usize,
    pub n: usize,
    pub sigma_eps: f64,
    pub seed: u64,
}

impl Default for RegressionTask {
    fn default() -> Self {
        Self { f0: TargetFn::SumOfSines, p: 4, n: 2000, sigma_eps: 0.1, seed: 0 }
    }
}

impl RegressionTask {
    /// Noise-free target function for this task.
    pub fn target(&self) -> impl Fn(&[f64]) -> f64 {
        let teacher = matches!(self.f0, TargetFn::Teacher).then(|| Teacher::new(self.p, self.seed ^ 0x5eed));
        let f0 = self.f0;
        move |x: &[f64]| match f0 {
            TargetFn::Zero => 0.0,
            TargetFn::SumOfSines => x.iter().enumerate().map(|(j, &v)| 0.5 * (2.0 * PI * v + j as f64).sin()).sum(),
            TargetFn::Polynomial => x.iter().map(|&v| (v - 0.5) * (v - 0.5)).sum::<f64>() - x[0] * x[x.len() - 1],
            TargetFn::Teacher => teacher.as_ref().expect("teacher built").eval(x),
        }
    }
}

/// Generates `n` samples and splits them 80/20 into train and test.
pub fn gen_regression(task: &RegressionTask) -> Result<(Dataset, Dataset)> {
    if task.n < 10 {
        return Err(Error::Input(format!("regression needs n >= 10, got {}", task.n)));
    }
    if task.p == 0 {
        return Err(Error::Input("input dimension must be positive".into()));
    }
    if !(task.sigma_eps >= 0.0 && task.sigma_eps.is_finite()) {
        return Err(Error::Input("noise scale must be finite and nonnegative".into()));
    }
    let f = task.target();
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let mut xs = Vec::with_capacity(task.n * task.p);
    let mut ys = Vec::with_capacity(task.n);
    for _ in 0..task.n {
        let x: Vec<f64> = (0..task.p).map(|_| rng.random::<f64>()).collect();
        let z: f64 = StandardNormal.sample(&mut rng);
        ys.push(f(&x) + task.sigma_eps * z);
        xs.extend(x);
    }
    let all = Dataset::new(xs, task.p, Targets::Real { values: ys, dim: 1 })?;
    Ok(split_sequential(&all))
}

fn split_sequential(all: &Dataset) -> (Dataset, Dataset) {
    let n_train = (all.len() as f64 * TRAIN_FRACTION).round() as usize;
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..all.len()).collect();
    (all.subset(&train), all.subset(&test))
}

/// Two interleaved half circles with Gaussian jitter, balanced classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoonsTask {
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for MoonsTask {
    fn default() -> Self {
        Self { n: 1000, noise: 0.2, seed: 0 }
    }
}

pub fn gen_moons(task: &MoonsTask) -> Result<(Dataset, Dataset)> {
    if task.n < 10 {
        return Err(Error::Input(format!("moons needs n >= 10, got {}", task.n)));
    }
    let jitter = Normal::new(0.0, task.noise).map_err(|e| Error::Input(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let mut xs = Vec::with_capacity(2 * task.n);
    let mut labels = Vec::with_capacity(task.n);
    for i in 0..task.n {
        let class = i % 2;
        let t = PI * rng.random::<f64>();
        let (x, y) = if class == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        xs.push(x + jitter.sample(&mut rng));
        xs.push(y + jitter.sample(&mut rng));
        labels.push(class);
    }
    let all = Dataset::new(xs, 2, Targets::Labels { labels, classes: 2 })?;
    Ok(split_sequential(&all))
}

/// Features and integer labels read from delimited text.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularTask {
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl TabularTask {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Parses comma-separated rows whose last column is an integer label.
pub fn parse_tabular(text: &str, has_header: bool) -> Result<TabularTask> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(has_header).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() < 2 {
            return Err(Error::Parse { line, msg: "need at least one feature and a label".into() });
        }
        let d = rec.len() - 1;
        if *dim.get_or_insert(d) != d {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} columns, found {}", dim.unwrap() + 1, rec.len()),
            });
        }
        for (j, cell) in rec.iter().take(d).enumerate() {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse { line, msg: format!("column {}: '{cell}' is not a number", j + 1) })?;
            features.push(v);
        }
        let cell = &rec[d];
        let label: usize =
            cell.parse().map_err(|_| Error::Parse { line, msg: format!("label '{cell}' is not a class index") })?;
        labels.push(label);
    }
    let Some(dim) = dim else {
        return Err(Error::Input("tabular file has no data rows".into()));
    };
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(TabularTask { features, dim, labels, classes })
}

pub fn load_tabular(path: &Path, has_header: bool) -> Result<TabularTask> {
    parse_tabular(&std::fs::read_to_string(path)?, has_header)
}

/// Per-feature z-score parameters fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(data: &Dataset) -> Self {
        let (n, d) = (data.len() as f64, data.dim);
        let mut mean = vec![0.0; d];
        for i in 0..data.len() {
            for (m, x) in mean.iter_mut().zip(data.row(i)) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; d];
        for i in 0..data.len() {
            for j in 0..d {
                std[j] += (data.row(i)[j] - mean[j]).powi(2) / n;
            }
        }
        let std = std.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn apply(&self, data: &mut Dataset) {
        let d = data.dim;
        for (k, x) in data.inputs.iter_mut().enumerate() {
            *x = (*x - self.mean[k % d]) / self.std[k % d];
        }
    }
}

/// Shuffles rows with `seed`, splits 80/20 and standardizes both parts with
/// the training statistics.
pub fn split_tabular(task: &TabularTask, seed: u64) -> Result<(Dataset, Dataset, Standardization)> {
    if task.len() < 2 {
        return Err(Error::Input("need at least two rows to split".into()));
    }
    let all = Dataset::new(
        task.features.clone(),
        task.dim,
        Targets::Labels { labels: task.labels.clone(), classes: task.classes },
    )?;
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((all.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, all.len() - 1);
    let mut train = all.subset(&order[..n_train]);
    let mut test = all.subset(&order[n_train..]);
    let z = Standardization::fit(&train);
    z.apply(&mut train);
    z.apply(&mut test);
    Ok((train, test, z))
}

/// `(1 - tail_fraction) n` draws from `N(0, 0.02^2)` followed by
/// `tail_fraction n` draws from `±tail_scale (1 + |N(0,1)|)` with random sign.
pub fn gen_longtail_weights(n: usize, tail_fraction: f64, tail_scale: f64, seed: u64) -> Vec<f64> {
    let n_tail = (tail_fraction.clamp(0.0, 1.0) * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n - n_tail {
        let z: f64 = StandardNormal.sample(&mut rng);
        out.push(0.02 * z);
    }
    for _ in 0..n_tail {
        let z: f64 = StandardNormal.sample(&mut rng);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        out.push(sign * tail_scale * (1.0 + z.abs()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_regression_is_exact() {
        let task = RegressionTask { sigma_eps: 0.0, n: 50, ..Default::default() };
        let (train, test) = gen_regression(&task).unwrap();
        assert_eq!((train.len(), test.len()), (40, 10));
        let f = task.target();
        let Targets::Real { values, .. } = &train.targets else { unreachable!() };
        for i in 0..train.len() {
            assert_eq!(values[i], f(train.row(i)));
        }
    }

    #[test]
    fn regression_is_deterministic() {
        let task = RegressionTask { f0: TargetFn::Teacher, n: 100, ..Default::default() };
        assert_eq!(gen_regression(&task).unwrap(), gen_regression(&task).unwrap());
        assert!(gen_regression(&RegressionTask { n: 9, ..task }).is_err());
    }

    #[test]
    fn tabular_parses_by_hand() {
        let t = parse_tabular("a,b,label\n1.5,2,0\n-3,4e1,1\n", true).unwrap();
        assert_eq!(t.features, vec![1.5, 2.0, -3.0, 40.0]);
        assert_eq!(t.labels, vec![0, 1]);
        assert_eq!((t.dim, t.classes), (2, 2));
        assert!(parse_tabular("", false).is_err());
        let err = parse_tabular("1,2,0\n1,x,1\n", false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn bundled_iris_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/iris.csv");
        let t = load_tabular(&path, true).unwrap();
        assert_eq!((t.len(), t.dim, t.classes), (150, 4, 3));
        let (train, test, z) = split_tabular(&t, 0).unwrap();
        assert_eq!(train.len() + test.len(), 150);
        assert_eq!(z.mean.len(), 4);
    }

    #[test]
    fn longtail_without_tail_is_gaussian() {
        let w = gen_longtail_weights(1000, 0.0, 1.0, 1);
        assert!(w.iter().all(|v| v.abs() < 0.2));
        let t = gen_longtail_weights(1000, 0.01, 1.0, 1);
        assert_eq!(t.iter().filter(|v| v.abs() >= 1.0).count(), 10);
    }
}
