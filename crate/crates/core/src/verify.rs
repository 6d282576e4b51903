//! Randomized self-check suites: objective gradients against finite
//! differences, the mixture-KL bound against Monte Carlo, and codec
//! round-trips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{decode, encode};
use crate::compressor::{CompressedLayer, CompressedMeta, CompressedModel};
use crate::network::{Architecture, Network};
use crate::objective::{evaluate, Batch, Prior};
use crate::oracles::{fd_check, mc_kl, mixture_kl_bound, MixturePair};
use crate::spike_slab::SpikeSlabParams;
use crate::task::{Dataset, Targets, Task};
use crate::variational::{QuantizerConfig, VariationalModel};
use crate::window::WindowStrategy;
use crate::Result;

/// Central-difference step for gradient checks.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor of the relative gradient error.
pub const FD_FLOOR: f64 = 1e-3;

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    /// Generated cases discarded as ill-posed (kinks, ties).
    pub skipped: usize,
    pub failures: Vec<String>,
    /// Largest observed error statistic.
    pub worst: f64,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        Self { name, cases: 0, skipped: 0, failures: Vec::new(), worst: 0.0 }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} cases, {} skipped, {} failures, worst {:.3e}",
            self.name,
            self.cases,
            self.skipped,
            self.failures.len(),
            self.worst
        )
    }
}

/// A small model, batch and mask on which to differentiate the objective.
#[derive(Debug, Clone)]
pub struct GradientInstance {
    pub model: VariationalModel,
    pub data: Dataset,
    pub rows: Vec<usize>,
    pub scale: f64,
    pub task: Task,
    pub mask: Option<Vec<bool>>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

const ARCHS: [&[usize]; 5] = [&[1, 1], &[1, 2], &[2, 3, 1], &[3, 4, 2], &[2, 6, 3]];

pub fn random_gradient_instance<R: Rng + ?Sized>(rng: &mut R) -> Result<GradientInstance> {
    let arch = Architecture::new(ARCHS[rng.random_range(0..ARCHS.len())].to_vec())?;
    let t = arch.param_count();
    let theta: Vec<f64> = (0..t).map(|_| 0.7 * normal(rng)).collect();
    let net = Network::from_flat(arch.clone(), &theta)?;
    let qc = QuantizerConfig {
        k: rng.random_range(1..=3),
        strategy: if rng.random() { WindowStrategy::OutlierAware } else { WindowStrategy::Equal },
        iqr_multiplier: if rng.random() { 0.5 } else { 5.0 },
        tau: rng.random_range(0.2..1.0),
        seed: rng.random(),
    };
    let tau_prime = rng.random_range(0.5..2.0);
    let s = (0..t).map(|_| tau_prime * normal(rng)).collect();
    let spike = SpikeSlabParams::new(s, tau_prime, rng.random_range(0.2..0.8), rng.random_range(0.5..2.0))?;
    let mut model = VariationalModel::init(&net, &qc, spike)?;
    for cb in model.codebooks_mut() {
        for m in &mut cb.mu {
            *m += 0.1 * normal(rng);
        }
        for s in &mut cb.sigma {
            *s = (*s * rng.random_range(0.7..1.5)).max(0.1);
        }
        let raw: Vec<f64> = cb.pi.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        cb.pi = raw.into_iter().map(|p| p / total).collect();
    }
    let n = rng.random_range(3..=6);
    let dim = arch.input_dim();
    let out = arch.output_dim();
    let inputs = (0..n * dim).map(|_| normal(rng)).collect();
    let (task, targets) = if out > 1 && rng.random() {
        (
            Task::Classification,
            Targets::Labels { labels: (0..n).map(|_| rng.random_range(0..out)).collect(), classes: out },
        )
    } else {
        (
            Task::Regression { sigma_eps: rng.random_range(0.3..1.0) },
            Targets::Real { values: (0..n * out).map(|_| normal(rng)).collect(), dim: out },
        )
    };
    let data = Dataset::new(inputs, dim, targets)?;
    let rows = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mask = rng.random::<bool>().then(|| (0..t).map(|_| rng.random_bool(0.75)).collect());
    Ok(GradientInstance { model, data, rows, scale: rng.random_range(0.5..3.0), task, mask })
}

impl GradientInstance {
    fn batch(&self) -> Batch<'_> {
        Batch { data: &self.data, rows: &self.rows, scale: self.scale }
    }

    /// False when some ReLU sits within `margin` of its kink or two
    /// responsibilities of a weight are within `margin` of each other.
    pub fn is_smooth(&self, margin: f64) -> Result<bool> {
        for e in self.model.evaluations()? {
            let mut r = e.responsibilities.clone();
            r.sort_by(|a, b| b.total_cmp(a));
            if r.len() > 1 && r[0] - r[1] < margin {
                return Ok(false);
            }
        }
        let net = self.model.effective_network(self.mask.as_deref())?;
        for &row in &self.rows {
            let (_, tape) = net.forward_tape(self.data.row(row))?;
            if tape.min_kink_margin(&net) < margin {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Max relative error between the analytic and the finite-difference
    /// gradient. With `fault` the analytic gradient is deliberately corrupted.
    pub fn gradient_error(&self, prior: Prior, fault: bool) -> Result<f64> {
        let mask = self.mask.as_deref();
        let (_, grad) = evaluate(&self.model, self.batch(), self.task, mask, prior)?;
        let mut analytic = grad.flatten();
        if fault {
            analytic[0] += 0.05 * analytic[0].abs() + 0.01;
        }
        let mut probe = self.model.clone();
        let f = |x: &[f64]| {
            probe.clone_from(&self.model);
            probe.set_leaves(x);
            Ok(evaluate(&probe, self.batch(), self.task, mask, prior)?.0.total)
        };
        fd_check(f, &self.model.leaves(), &analytic, FD_STEP, FD_FLOOR)
    }
}

/// Checks both objectives on `instances` smooth random instances; fails any
/// with relative error at or above `tolerance`.
pub fn gradient_suite(instances: usize, seed: u64, tolerance: f64, fault: bool) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("gradient");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while report.cases < instances {
        let inst = random_gradient_instance(&mut rng)?;
        if !inst.is_smooth(1e-4)? {
            report.skipped += 1;
            continue;
        }
        for prior in [Prior::SpikeSlab, Prior::Gaussian] {
            let err = inst.gradient_error(prior, fault)?;
            report.worst = report.worst.max(err);
            if !(err < tolerance) {
                report.failures.push(format!("case {} ({prior:?}): relative error {err:.3e}", report.cases));
            }
        }
        report.cases += 1;
    }
    Ok(report)
}

/// Bound against a stratified MC estimate on `pairs` random mixture pairs
/// with K cycling through 1..=4.
pub fn mixture_bound_suite(pairs: usize, samples: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("mixture-bound");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..pairs {
        let pair = MixturePair::random(1 + i % 4, &mut rng);
        let bound = mixture_kl_bound(&pair)?;
        let (est, se) = mc_kl(&pair.p, &pair.q, samples, &mut rng);
        let slack = bound - (est - 3.0 * se);
        report.worst = report.worst.max(-slack);
        if !(slack >= 0.0) {
            report.failures.push(format!("pair {i}: bound {bound:.6} < estimate {est:.6} - 3 x {se:.2e}"));
        }
        report.cases += 1;
    }
    Ok(report)
}

/// Random, structurally valid compressed model.
pub fn random_compressed_model<R: Rng + ?Sized>(rng: &mut R) -> CompressedModel {
    let depth = rng.random_range(0..=3);
    let dims: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
    let arch = Architecture::new(dims).expect("positive widths");
    let layers = (0..arch.num_layers())
        .map(|l| {
            let windows = if rng.random() { 1 } else { 4 };
            let mut window_sizes: Vec<u32> = (0..windows).map(|_| rng.random_range(0..=5)).collect();
            if window_sizes.iter().all(|&s| s == 0) {
                window_sizes[0] = 1;
            }
            let c: u32 = window_sizes.iter().sum();
            let mut cuts: Vec<f64> = (0..windows - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
            cuts.sort_by(f64::total_cmp);
            let bitmap: Vec<bool> = (0..arch.layer_param_count(l)).map(|_| rng.random()).collect();
            let indices = bitmap.iter().filter(|&&b| b).map(|_| rng.random_range(0..c)).collect();
            CompressedLayer {
                strategy: if rng.random() { WindowStrategy::OutlierAware } else { WindowStrategy::Equal },
                cuts,
                window_sizes,
                codebook: (0..c).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                bitmap,
                indices,
            }
        })
        .collect();
    let meta =
        CompressedMeta { k: rng.random_range(1..=64), nonzero: rng.random_range(0.01..=1.0), seed: rng.random() };
    CompressedModel { arch, meta, layers }
}

/// Round-trip, re-encode, truncation and bit-flip checks on `models` random
/// models.
pub fn codec_suite(models: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("codec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..models {
        let m = random_compressed_model(&mut rng);
        let bytes = encode(&m)?;
        match decode(&bytes) {
            Ok(back) if back == m => {
                if encode(&back)? != bytes {
                    report.failures.push(format!("model {i}: re-encoding differs"));
                }
            }
            Ok(_) => report.failures.push(format!("model {i}: decoded model differs")),
            Err(e) => report.failures.push(format!("model {i}: decode failed: {e}")),
        }
        let cut = rng.random_range(0..bytes.len());
        if decode(&bytes[..cut]).is_ok() {
            report.failures.push(format!("model {i}: truncation at {cut} accepted"));
        }
        let mut flipped = bytes.clone();
        let at = rng.random_range(0..flipped.len());
        flipped[at] ^= 1 << rng.random_range(0..8);
        if decode(&flipped).is_ok() {
            report.failures.push(format!("model {i}: bit flip at byte {at} accepted"));
        }
        report.cases += 1;
    }
    Ok(report)
}
