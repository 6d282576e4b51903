//! From learned variational parameters to a deployable model: quantile
//! pruning on the retain probabilities, stochastic and greedy quantization,
//! Bayesian averaging and the compact [`CompressedModel`].

use rand::Rng;

use crate::bytes::{ByteReader, ByteWriter};
use crate::gmm::argmax;
use crate::network::{Architecture, Network};
use crate::task::Dataset;
use crate::variational::VariationalModel;
use crate::window::WindowStrategy;
use crate::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"SQSSNAP1";

/// Largest union codebook an index stream can address.
pub const MAX_CODEBOOK: usize = 1 << 16;

/// Default number of posterior draws for Bayesian averaging.
pub const DEFAULT_SAMPLES: usize = 8;

/// Number of weights pruned out of `t` at non-zero rate `nonzero`:
/// `ceil((1 - nonzero) * t)`, evaluated so that products landing on an
/// integer up to rounding error are treated as exact.
pub fn pruned_count(t: usize, nonzero: f64) -> usize {
    let kept = nonzero.clamp(0.0, 1.0) * t as f64;
    let r = kept.round();
    let floor = if (kept - r).abs() <= 1e-9 * r.max(1.0) { r } else { kept.floor() };
    t - (floor as usize).min(t)
}

/// Keep-mask (`true` = survives) dropping the `pruned_count` smallest
/// retain probabilities, lower flat index first among ties.
pub fn prune_mask(retain: &[f64], nonzero: f64) -> Vec<bool> {
    let n = pruned_count(retain.len(), nonzero);
    let mut order: Vec<usize> = (0..retain.len()).collect();
    order.sort_by(|&a, &b| retain[a].total_cmp(&retain[b]).then(a.cmp(&b)));
    let mut keep = vec![true; retain.len()];
    for &i in &order[..n] {
        keep[i] = false;
    }
    keep
}

/// Metadata carried into the compressed artifact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressedMeta {
    /// Components per window requested at training time.
    pub k: u16,
    pub nonzero: f64,
    pub seed: u64,
}

/// Posterior of one layer over its union codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSnapshot {
    pub strategy: WindowStrategy,
    pub cuts: Vec<f64>,
    /// Live components per window; zero for collapsed windows.
    pub window_sizes: Vec<usize>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Row-major `params x mu.len()` assignment probabilities.
    pub phi: Vec<f64>,
}

impl LayerSnapshot {
    pub fn codebook_len(&self) -> usize {
        self.mu.len()
    }

    pub fn phi_row(&self, local: usize) -> &[f64] {
        let c = self.mu.len();
        &self.phi[local * c..(local + 1) * c]
    }
}

/// Learned retain probabilities and assignments, sufficient for every
/// inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSnapshot {
    pub arch: Architecture,
    pub lambda: Vec<f64>,
    pub layers: Vec<LayerSnapshot>,
    pub meta: CompressedMeta,
    /// Keep-mask at `meta.nonzero`.
    pub keep: Vec<bool>,
}

impl PosteriorSnapshot {
    pub fn from_model(model: &VariationalModel, meta: CompressedMeta) -> Result<Self> {
        let layout = model.arch.layout();
        let evals = model.evaluations()?;
        let mut layers = Vec::with_capacity(model.layers.len());
        for (l, q) in model.layers.iter().enumerate() {
            let p = &q.partition;
            let offsets = p.offsets();
            let c = p.live_components();
            let range = layout.layer_range(l);
            let mut phi = vec![0.0; range.len() * c];
            for (local, i) in range.enumerate() {
                let o = offsets[q.membership[local]];
                let a = &evals[i].assignment;
                phi[local * c + o..local * c + o + a.len()].copy_from_slice(a);
            }
            layers.push(LayerSnapshot {
                strategy: p.strategy,
                cuts: p.cuts.clone(),
                window_sizes: p.window_sizes(),
                mu: p.union_means(),
                sigma: p.union_sigmas(),
                phi,
            });
        }
        let lambda = model.retain_probs();
        let keep = prune_mask(&lambda, meta.nonzero);
        let snap = Self { arch: model.arch.clone(), lambda, layers, meta, keep };
        snap.validate()?;
        Ok(snap)
    }

    pub fn param_count(&self) -> usize {
        self.lambda.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.arch.param_count();
        if self.lambda.len() != t || self.keep.len() != t || self.layers.len() != self.arch.num_layers() {
            return Err(Error::Malformed("snapshot does not match its architecture".into()));
        }
        if self.lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::Malformed("retain probability outside [0,1]".into()));
        }
        for (l, ls) in self.layers.iter().enumerate() {
            let c = ls.mu.len();
            let n = self.arch.layer_param_count(l);
            if c == 0 || ls.sigma.len() != c || ls.phi.len() != n * c || ls.window_sizes.iter().sum::<usize>() != c {
                return Err(Error::Malformed(format!("layer {l} codebook is inconsistent")));
            }
            for j in 0..n {
                let s: f64 = ls.phi_row(j).iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Malformed(format!("layer {l} weight {j}: assignment sums to {s}")));
                }
            }
        }
        Ok(())
    }

    fn rows(&self) -> impl Iterator<Item = (&LayerSnapshot, &[f64])> + '_ {
        self.layers
            .iter()
            .enumerate()
            .flat_map(move |(l, ls)| (0..self.arch.layer_param_count(l)).map(move |j| (ls, ls.phi_row(j))))
    }

    /// Keep-mask at an arbitrary non-zero rate.
    pub fn prune(&self, nonzero: f64) -> Vec<bool> {
        prune_mask(&self.lambda, nonzero)
    }

    /// One draw of quantized weights: each surviving weight takes a codebook
    /// mean drawn from its assignment probabilities.
    pub fn sample_quantized<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.rows()
            .zip(&self.keep)
            .map(|((ls, row), &keep)| {
                // draw even for pruned weights so the stream does not depend on the mask
                let u: f64 = rng.random();
                if !keep {
                    return 0.0;
                }
                let mut acc = 0.0;
                for (k, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return ls.mu[k];
                    }
                }
                let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1);
                ls.mu[last]
            })
            .collect()
    }

    /// Union-codebook index of the most likely component of every weight.
    pub fn greedy_indices(&self) -> Vec<usize> {
        self.rows().map(|(_, row)| argmax(row)).collect()
    }

    /// Most likely codebook mean for surviving weights, zero otherwise.
    pub fn greedy_quantize(&self) -> Vec<f64> {
        self.rows().zip(&self.keep).map(|((ls, row), &keep)| if keep { ls.mu[argmax(row)] } else { 0.0 }).collect()
    }

    pub fn greedy_network(&self) -> Result<Network> {
        Network::from_flat(self.arch.clone(), &self.greedy_quantize())
    }

    /// `samples` independently drawn quantized networks.
    pub fn sample_networks<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<Vec<Network>> {
        if samples == 0 {
            return Err(Error::Input("Bayesian averaging needs at least one sample".into()));
        }
        (0..samples).map(|_| Network::from_flat(self.arch.clone(), &self.sample_quantized(rng))).collect()
    }

    /// Mean network output over `samples` posterior draws.
    pub fn predict_bayes<R: Rng + ?Sized>(&self, x: &[f64], samples: usize, rng: &mut R) -> Result<Vec<f64>> {
        let nets = self.sample_networks(samples, rng)?;
        average_outputs(&nets, x)
    }

    /// Bayesian-averaged outputs for every row of `data`, sharing one set of
    /// draws across rows.
    pub fn predict_bayes_batch<R: Rng + ?Sized>(
        &self,
        data: &Dataset,
        samples: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        let nets = self.sample_networks(samples, rng)?;
        (0..data.len()).map(|i| average_outputs(&nets, data.row(i))).collect()
    }

    /// Prunes at `nonzero` and packs greedy indices into the compact model.
    pub fn finalize(&self, nonzero: f64) -> Result<CompressedModel> {
        if !(nonzero > 0.0 && nonzero <= 1.0) {
            return Err(Error::Config(format!("nonzero must be in (0,1], got {nonzero}")));
        }
        let keep = self.prune(nonzero);
        let greedy = self.greedy_indices();
        let layout = self.arch.layout();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, ls) in self.layers.iter().enumerate() {
            if ls.mu.len() > MAX_CODEBOOK {
                return Err(Error::Unsupported(format!(
                    "layer {l} has {} codebook entries, more than {MAX_CODEBOOK}",
                    ls.mu.len()
                )));
            }
            let range = layout.layer_range(l);
            let bitmap = keep[range.clone()].to_vec();
            let indices = range.filter(|&i| keep[i]).map(|i| greedy[i] as u32).collect();
            layers.push(CompressedLayer {
                strategy: ls.strategy,
                cuts: ls.cuts.clone(),
                window_sizes: ls.window_sizes.iter().map(|&w| w as u32).collect(),
                codebook: ls.mu.iter().map(|&m| m as f32).collect(),
                bitmap,
                indices,
            });
        }
        let model = CompressedModel { arch: self.arch.clone(), meta: CompressedMeta { nonzero, ..self.meta }, layers };
        model.validate()?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(SNAPSHOT_MAGIC);
        write_arch(&mut w, &self.arch);
        w.u16(self.meta.k);
        w.f64(self.meta.nonzero);
        w.u64(self.meta.seed);
        w.f64s(&self.lambda);
        for ls in &self.layers {
            w.u8(ls.strategy.tag());
            w.f64s(&ls.cuts);
            w.u32(ls.window_sizes.len() as u32);
            for &s in &ls.window_sizes {
                w.u32(s as u32);
            }
            w.f64s(&ls.mu);
            w.f64s(&ls.sigma);
            w.f64s(&ls.phi);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != SNAPSHOT_MAGIC {
            return Err(Error::BadMagic);
        }
        let arch = read_arch(&mut r)?;
        let meta = CompressedMeta { k: r.u16()?, nonzero: r.f64()?, seed: r.u64()? };
        if !(meta.nonzero > 0.0 && meta.nonzero <= 1.0) {
            return Err(Error::Malformed("snapshot non-zero rate out of range".into()));
        }
        let lambda = r.f64s()?;
        let mut layers = Vec::with_capacity(arch.num_layers());
        for _ in 0..arch.num_layers() {
            let strategy =
                WindowStrategy::from_tag(r.u8()?).ok_or_else(|| Error::Malformed("window strategy".into()))?;
            let cuts = r.f64s()?;
            let nw = r.u32()? as usize;
            if nw > r.remaining() / 4 {
                return Err(Error::Truncated { offset: r.position(), needed: nw * 4 });
            }
            let window_sizes = (0..nw).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
            layers.push(LayerSnapshot {
                strategy,
                cuts,
                window_sizes,
                mu: r.f64s()?,
                sigma: r.f64s()?,
                phi: r.f64s()?,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::Malformed("trailing bytes after snapshot".into()));
        }
        let keep = prune_mask(&lambda, meta.nonzero);
        let snap = Self { arch, lambda, layers, meta, keep };
        snap.validate()?;
        Ok(snap)
    }
}

fn average_outputs(nets: &[Network], x: &[f64]) -> Result<Vec<f64>> {
    let mut acc: Vec<f64> = Vec::new();
    for net in nets {
        let out = net.forward(x)?;
        if acc.is_empty() {
            acc = out;
        } else {
            for (a, o) in acc.iter_mut().zip(out) {
                *a += o;
            }
        }
    }
    let inv = 1.0 / nets.len() as f64;
    Ok(acc.into_iter().map(|a| a * inv).collect())
}

pub(crate) fn write_arch(w: &mut ByteWriter, arch: &Architecture) {
    w.u32(arch.dims().len() as u32);
    for &d in arch.dims() {
        w.u32(d as u32);
    }
}

pub(crate) fn read_arch(r: &mut ByteReader<'_>) -> Result<Architecture> {
    let n = r.u32()? as usize;
    if n > r.remaining() / 4 {
        return Err(Error::Truncated { offset: r.position(), needed: n * 4 });
    }
    let dims = (0..n).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    Architecture::new(dims).map_err(|e| Error::Malformed(format!("architecture: {e}")))
}

/// One layer of the compact model.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    pub strategy: WindowStrategy,
    pub cuts: Vec<f64>,
    /// Live components per window.
    pub window_sizes: Vec<u32>,
    /// Union codebook: the live window means, window by window.
    pub codebook: Vec<f32>,
    /// `true` for surviving weights, in flat order.
    pub bitmap: Vec<bool>,
    /// Codebook index of each surviving weight, in flat order.
    pub indices: Vec<u32>,
}

impl CompressedLayer {
    /// Bits per stored index: `ceil(log2 C)`.
    pub fn index_bits(&self) -> u32 {
        index_bits(self.codebook.len())
    }

    /// `log2 C` over the union codebook.
    pub fn effective_bits(&self) -> f64 {
        (self.codebook.len() as f64).log2()
    }

    pub fn live(&self) -> usize {
        self.indices.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut idx = self.indices.iter();
        self.bitmap
            .iter()
            .map(|&b| if b { self.codebook[*idx.next().expect("index per live weight") as usize] as f64 } else { 0.0 })
            .collect()
    }

    /// Payload bits: indices, bitmap and single-precision codebook.
    pub fn payload_bits(&self) -> u64 {
        self.live() as u64 * self.index_bits() as u64 + self.bitmap.len() as u64 + 32 * self.codebook.len() as u64
    }
}

/// `ceil(log2 c)`, zero for a single-entry codebook.
pub fn index_bits(c: usize) -> u32 {
    if c <= 1 {
        0
    } else {
        usize::BITS - (c - 1).leading_zeros()
    }
}

/// Pruned, quantized network ready for storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedModel {
    pub arch: Architecture,
    pub meta: CompressedMeta,
    pub layers: Vec<CompressedLayer>,
}

impl CompressedModel {
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != self.arch.num_layers() {
            return Err(Error::Malformed("layer count differs from the architecture".into()));
        }
        for (l, cl) in self.layers.iter().enumerate() {
            let c = cl.codebook.len();
            if c == 0 || c > MAX_CODEBOOK {
                return Err(Error::Malformed(format!("layer {l} codebook size {c}")));
            }
            if cl.window_sizes.iter().map(|&s| s as usize).sum::<usize>() != c {
                return Err(Error::Malformed(format!("layer {l} window sizes do not add up")));
            }
            if cl.bitmap.len() != self.arch.layer_param_count(l) {
                return Err(Error::Malformed(format!("layer {l} bitmap length")));
            }
            if cl.bitmap.iter().filter(|&&b| b).count() != cl.indices.len() {
                return Err(Error::Malformed(format!("layer {l} index count differs from live weights")));
            }
            if cl.indices.iter().any(|&i| i as usize >= c) {
                return Err(Error::Malformed(format!("layer {l} index out of codebook range")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn live_count(&self) -> usize {
        self.layers.iter().map(|l| l.live()).sum()
    }

    /// Dequantized flat parameters.
    pub fn weights(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights()).collect()
    }

    pub fn network(&self) -> Result<Network> {
        Network::from_flat(self.arch.clone(), &self.weights())
    }

    pub fn payload_bits(&self) -> u64 {
        self.layers.iter().map(|l| l.payload_bits()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(phi: Vec<f64>, mu: Vec<f64>, lambda: Vec<f64>, nonzero: f64) -> PosteriorSnapshot {
        let arch = Architecture::new(vec![1, 1]).unwrap();
        let c = mu.len();
        let keep = prune_mask(&lambda, nonzero);
        let snap = PosteriorSnapshot {
            arch,
            lambda,
            layers: vec![LayerSnapshot {
                strategy: WindowStrategy::Equal,
                cuts: vec![],
                window_sizes: vec![c],
                sigma: vec![0.1; c],
                mu,
                phi,
            }],
            meta: CompressedMeta { k: 2, nonzero, seed: 0 },
            keep,
        };
        snap.validate().unwrap();
        snap
    }

    #[test]
    fn pruned_counts() {
        assert_eq!(pruned_count(4, 1.0), 0);
        assert_eq!(pruned_count(97, 0.9), 10);
        assert_eq!(pruned_count(97, 0.1), 88);
        assert_eq!(pruned_count(10_000, 0.1), 9000);
        assert_eq!(pruned_count(10_000, 0.9), 1000);
    }

    #[test]
    fn prune_examples() {
        assert_eq!(prune_mask(&[0.1, 0.9, 0.2, 0.8], 0.5), vec![false, true, false, true]);
        assert_eq!(prune_mask(&[0.5; 4], 0.5), vec![false, false, true, true]);
        assert!(prune_mask(&[0.3, 0.2], 1.0).iter().all(|&k| k));
    }

    #[test]
    fn greedy_ties_to_first() {
        let s = toy(vec![0.5, 0.5, 0.4, 0.6], vec![-1.0, 1.0], vec![0.9, 0.9], 1.0);
        assert_eq!(s.greedy_quantize(), vec![-1.0, 1.0]);
    }

    #[test]
    fn pruned_weights_sample_zero() {
        let s = toy(vec![0.0, 1.0, 0.0, 1.0], vec![-1.0, 1.0], vec![0.1, 0.9], 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(s.sample_quantized(&mut rng), vec![0.0, 1.0]);
        }
    }

    #[test]
    fn finalize_packs_toy() {
        // 1x1 layer plus bias: two weights, C = 2
        let s = toy(vec![0.2, 0.8, 0.9, 0.1], vec![-0.5, 0.5], vec![0.7, 0.6], 1.0);
        let m = s.finalize(1.0).unwrap();
        let l = &m.layers[0];
        assert_eq!(l.bitmap, vec![true, true]);
        assert_eq!(l.indices, vec![1, 0]);
        assert_eq!(l.index_bits(), 1);
        assert_eq!(l.payload_bits(), 2 + 2 + 64);
        assert_eq!(m.weights(), vec![0.5, -0.5]);
        let half = s.finalize(0.5).unwrap();
        assert_eq!(half.layers[0].bitmap, vec![true, false]);
        assert_eq!(half.weights(), vec![0.5, 0.0]);
    }

    #[test]
    fn index_bit_widths() {
        assert_eq!(index_bits(1), 0);
        assert_eq!(index_bits(2), 1);
        assert_eq!(index_bits(16), 4);
        assert_eq!(index_bits(17), 5);
        assert_eq!(index_bits(64), 6);
    }

    #[test]
    fn snapshot_round_trip() {
        let s = toy(vec![0.2, 0.8, 0.9, 0.1], vec![-0.5, 0.5], vec![0.7, 0.6], 0.5);
        let back = PosteriorSnapshot::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        assert!(matches!(PosteriorSnapshot::from_bytes(b"nonsense"), Err(Error::BadMagic)));
    }
}
