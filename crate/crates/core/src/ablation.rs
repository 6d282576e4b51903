//! Paired studies with shared seeds: prior family, inference mode and
//! window strategy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::encode;
use crate::compressor::{CompressedModel, PosteriorSnapshot};
use crate::data::{gen_moons, gen_regression, MoonsTask, RegressionTask};
use crate::metrics::{accuracy, mse, predict_all, total_variation, Histogram};
use crate::network::{Architecture, Network};
use crate::objective::Prior;
use crate::task::{Dataset, Task};
use crate::trainer::{compress, pretrain, PretrainConfig, TrainConfig};
use crate::variational::{LayerQuantizer, QuantizerConfig};
use crate::window::{Quartiles, WindowStrategy};
use crate::{Error, Result};

/// Shared settings for the classification studies.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub hidden: Vec<usize>,
    pub moons: MoonsTask,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    /// Posterior draws for Bayesian averaging.
    pub samples: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            moons: MoonsTask { n: 2000, noise: 0.2, seed: 0 },
            pretrain: PretrainConfig { steps: 3000, ..Default::default() },
            train: TrainConfig { steps: 1000, ..Default::default() },
            samples: crate::compressor::DEFAULT_SAMPLES,
        }
    }
}

/// Pretrained classifier with its data.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub train: Dataset,
    pub test: Dataset,
    pub net: Network,
    pub accuracy: f64,
}

/// Data, initialization, pretraining and compression all derive from `seed`.
pub fn baseline(cfg: &StudyConfig, seed: u64) -> Result<Baseline> {
    let (train, test) = gen_moons(&MoonsTask { seed, ..cfg.moons })?;
    let arch = Architecture::mlp(train.dim, &cfg.hidden, 2)?;
    let mut net = Network::init(arch, &mut ChaCha8Rng::seed_from_u64(seed));
    pretrain(&mut net, &train, Task::Classification, &PretrainConfig { seed, ..cfg.pretrain })?;
    let accuracy = accuracy(&predict_all(&net, &test)?, &test)?;
    Ok(Baseline { train, test, net, accuracy })
}

fn compress_snapshot(b: &Baseline, cfg: TrainConfig) -> Result<PosteriorSnapshot> {
    compress(&b.net, &b.train, Task::Classification, cfg)?.snapshot()
}

pub fn bayes_accuracy(snap: &PosteriorSnapshot, data: &Dataset, samples: usize, seed: u64) -> Result<f64> {
    let out = snap.predict_bayes_batch(data, samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    accuracy(&out, data)
}

pub fn greedy_accuracy(snap: &PosteriorSnapshot, data: &Dataset) -> Result<f64> {
    accuracy(&predict_all(&snap.greedy_network()?, data)?, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorRow {
    pub seed: u64,
    pub nonzero: f64,
    pub base: f64,
    pub spike_slab: f64,
    pub gaussian: f64,
}

/// Spike-and-slab against the Gaussian prior at each non-zero rate, scored by
/// Bayesian averaging.
pub fn prior_study(cfg: &StudyConfig, nonzeros: &[f64], seeds: &[u64]) -> Result<Vec<PriorRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let b = baseline(cfg, seed)?;
        for &nonzero in nonzeros {
            let arm = |prior| -> Result<f64> {
                let tc = TrainConfig { prior, target_nonzero: nonzero, seed, ..cfg.train.clone() };
                bayes_accuracy(&compress_snapshot(&b, tc)?, &b.test, cfg.samples, seed)
            };
            rows.push(PriorRow {
                seed,
                nonzero,
                base: b.accuracy,
                spike_slab: arm(Prior::SpikeSlab)?,
                gaussian: arm(Prior::Gaussian)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceRow {
    pub seed: u64,
    pub k: usize,
    pub base: f64,
    pub greedy: f64,
    pub bayes: f64,
}

impl InferenceRow {
    pub fn greedy_drop(&self) -> f64 {
        self.base - self.greedy
    }

    pub fn bayes_drop(&self) -> f64 {
        self.base - self.bayes
    }
}

/// Greedy against Bayesian-averaged inference for each codebook size, without
/// pruning.
pub fn inference_study(cfg: &StudyConfig, ks: &[usize], seeds: &[u64]) -> Result<Vec<InferenceRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let b = baseline(cfg, seed)?;
        for &k in ks {
            let tc = TrainConfig { k, target_nonzero: 1.0, seed, ..cfg.train.clone() };
            let snap = compress_snapshot(&b, tc)?;
            rows.push(InferenceRow {
                seed,
                k,
                base: b.accuracy,
                greedy: greedy_accuracy(&snap, &b.test)?,
                bayes: bayes_accuracy(&snap, &b.test, cfg.samples, seed)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowArm {
    pub strategy: WindowStrategy,
    pub quantized: Vec<f64>,
    pub histogram: Histogram,
    pub tv: f64,
    /// Tail points (outside `[q1 - c IQR, q3 + c IQR]`) served by an outer window.
    pub tail_in_outer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowStudy {
    pub full: Histogram,
    pub tail_points: usize,
    pub outlier: WindowArm,
    pub equal: WindowArm,
}

/// Quantizes `weights` with K-means-initialized windowed codebooks under both
/// strategies and compares the histograms of greedy codes with the original.
pub fn window_study(weights: &[f64], k: usize, iqr_multiplier: f64, bins: usize, seed: u64) -> Result<WindowStudy> {
    if weights.is_empty() {
        return Err(Error::Input("window study needs weights".into()));
    }
    let full = Histogram::of(weights, bins)?;
    let q = Quartiles::of(weights);
    let (lo, hi) = (q.q1 - iqr_multiplier * q.iqr(), q.q3 + iqr_multiplier * q.iqr());
    let is_tail = |x: f64| x < lo || x > hi;
    let tail_points = weights.iter().filter(|&&x| is_tail(x)).count();
    let arm = |strategy| -> Result<WindowArm> {
        let qc = QuantizerConfig { k, strategy, iqr_multiplier, tau: 5e-4, seed };
        let lq = LayerQuantizer::fit(weights, &qc, seed)?;
        let last = lq.partition.num_windows() - 1;
        let mut quantized = Vec::with_capacity(weights.len());
        let mut tail_in_outer = 0;
        for (j, &x) in weights.iter().enumerate() {
            let cb = lq.codebook(j);
            quantized.push(cb.mu[cb.evaluate(x)?.argmax()]);
            let w = lq.membership[j];
            if is_tail(x) && (w == 0 || w == last) {
                tail_in_outer += 1;
            }
        }
        let histogram = Histogram::with_range(&quantized, bins, full.lo, full.hi)?;
        let tv = total_variation(&full, &histogram)?;
        Ok(WindowArm { strategy, quantized, histogram, tv, tail_in_outer })
    };
    Ok(WindowStudy {
        full: full.clone(),
        tail_points,
        outlier: arm(WindowStrategy::OutlierAware)?,
        equal: arm(WindowStrategy::Equal)?,
    })
}

/// Median of a nonempty sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// End-to-end synthetic regression: pretrain, compress, finalize.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBench {
    pub task: RegressionTask,
    pub hidden: Vec<usize>,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub samples: usize,
}

impl Default for RegressionBench {
    fn default() -> Self {
        Self {
            task: RegressionTask::default(),
            hidden: vec![32, 32],
            pretrain: PretrainConfig::default(),
            train: TrainConfig { steps: 2000, target_nonzero: 0.5, k: 16, ..Default::default() },
            samples: crate::compressor::DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionOutcome {
    pub full_precision_mse: f64,
    /// Test MSE of the stored (greedy) compressed model.
    pub compressed_mse: f64,
    pub bayes_mse: f64,
    pub model: CompressedModel,
    pub encoded: Vec<u8>,
}

/// Every random choice derives from `bench.task.seed`.
pub fn regression_bench(bench: &RegressionBench) -> Result<RegressionOutcome> {
    let seed = bench.task.seed;
    let (train, test) = gen_regression(&bench.task)?;
    let task = Task::Regression { sigma_eps: bench.task.sigma_eps };
    let arch = Architecture::mlp(bench.task.p, &bench.hidden, 1)?;
    let mut net = Network::init(arch, &mut ChaCha8Rng::seed_from_u64(seed));
    pretrain(&mut net, &train, task, &PretrainConfig { seed, ..bench.pretrain })?;
    let full_precision_mse = mse(&predict_all(&net, &test)?, &test)?;
    let trainer = compress(&net, &train, task, TrainConfig { seed, ..bench.train.clone() })?;
    let snap = trainer.snapshot()?;
    let model = snap.finalize(bench.train.target_nonzero)?;
    let compressed_mse = mse(&predict_all(&model.network()?, &test)?, &test)?;
    let bayes = snap.predict_bayes_batch(&test, bench.samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let bayes_mse = mse(&bayes, &test)?;
    let encoded = encode(&model)?;
    Ok(RegressionOutcome { full_precision_mse, compressed_mse, bayes_mse, model, encoded })
}
