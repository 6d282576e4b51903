//! Learnable state of the spike-and-GMM family over a network: the latent
//! weights, one windowed codebook per layer and the retain logits.

use crate::gmm::{CodebookGrad, Evaluation, GmmCodebook};
use crate::network::{Architecture, Network};
use crate::spike_slab::{retain_prob, SpikeSlabParams};
use crate::window::{partition_windows, WindowPartition, WindowStrategy};
use crate::{Error, Result};

/// How layer codebooks are built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerConfig {
    pub k: usize,
    pub strategy: WindowStrategy,
    pub iqr_multiplier: f64,
    pub tau: f64,
    pub seed: u64,
}

/// Windows and codebooks of one layer, with the window of each parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerQuantizer {
    pub partition: WindowPartition,
    pub membership: Vec<usize>,
}

impl LayerQuantizer {
    pub fn fit(values: &[f64], qc: &QuantizerConfig, seed: u64) -> Result<Self> {
        let (partition, membership) = partition_windows(values, qc.strategy, qc.iqr_multiplier, qc.k, qc.tau, seed)?;
        Ok(Self { partition, membership })
    }

    pub fn codebook(&self, local: usize) -> &GmmCodebook {
        self.partition.codebooks[self.membership[local]].as_ref().expect("membership points at a live window")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalModel {
    pub arch: Architecture,
    /// Latent full-precision weights.
    pub theta: Vec<f64>,
    pub spike: SpikeSlabParams,
    pub layers: Vec<LayerQuantizer>,
}

impl VariationalModel {
    /// Windows and K-means codebooks fitted to each layer of `net`.
    pub fn init(net: &Network, qc: &QuantizerConfig, spike: SpikeSlabParams) -> Result<Self> {
        let theta = net.to_flat();
        if spike.s.len() != theta.len() {
            return Err(Error::Input(format!("{} retain logits for {} parameters", spike.s.len(), theta.len())));
        }
        let arch = net.architecture().clone();
        let layout = arch.layout();
        let layers = (0..arch.num_layers())
            .map(|l| LayerQuantizer::fit(&theta[layout.layer_range(l)], qc, qc.seed.wrapping_add(1000 * l as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { arch, theta, spike, layers })
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// `(layer, local index)` for every flat parameter, in order.
    pub fn param_owners(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.arch.num_layers()).flat_map(move |l| (0..self.arch.layer_param_count(l)).map(move |j| (l, j)))
    }

    pub fn codebook_of(&self, i: usize) -> &GmmCodebook {
        let layout = self.arch.layout();
        let (l, local) = locate_layer(&layout, i);
        self.layers[l].codebook(local)
    }

    pub fn evaluations(&self) -> Result<Vec<Evaluation>> {
        self.param_owners().zip(&self.theta).map(|((l, j), &x)| self.layers[l].codebook(j).evaluate(x)).collect()
    }

    pub fn retain_probs(&self) -> Vec<f64> {
        self.spike.retain_probs()
    }

    /// `mask * lambda * sum_k mu_k assignment_k` per parameter.
    pub fn effective_weights(&self, mask: Option<&[bool]>) -> Result<Vec<f64>> {
        let evals = self.evaluations()?;
        Ok(self
            .param_owners()
            .zip(evals)
            .enumerate()
            .map(|(i, ((l, j), e))| {
                if mask.is_some_and(|m| !m[i]) {
                    return 0.0;
                }
                let lt = retain_prob(self.spike.s[i], self.spike.tau_prime);
                lt * self.layers[l].codebook(j).soft_weight_of(&e)
            })
            .collect())
    }

    pub fn effective_network(&self, mask: Option<&[bool]>) -> Result<Network> {
        Network::from_flat(self.arch.clone(), &self.effective_weights(mask)?)
    }

    /// Live codebooks in leaf order.
    pub fn codebooks(&self) -> impl Iterator<Item = &GmmCodebook> {
        self.layers.iter().flat_map(|q| q.partition.codebooks.iter().flatten())
    }

    pub fn codebooks_mut(&mut self) -> impl Iterator<Item = &mut GmmCodebook> {
        self.layers.iter_mut().flat_map(|q| q.partition.codebooks.iter_mut().flatten())
    }

    /// Restores codebook invariants after an optimizer step.
    pub fn project(&mut self) {
        for cb in self.codebooks_mut() {
            cb.project();
        }
    }

    /// Learnable values flattened: theta, s, then each live codebook's
    /// mu, sigma and pi.
    pub fn leaves(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_leaves());
        out.extend_from_slice(&self.theta);
        out.extend_from_slice(&self.spike.s);
        for cb in self.codebooks() {
            out.extend_from_slice(&cb.mu);
            out.extend_from_slice(&cb.sigma);
            out.extend_from_slice(&cb.pi);
        }
        out
    }

    pub fn num_leaves(&self) -> usize {
        2 * self.theta.len() + 3 * self.codebooks().map(|c| c.len()).sum::<usize>()
    }

    /// Inverse of `leaves`. Codebook invariants are not re-projected.
    pub fn set_leaves(&mut self, leaves: &[f64]) {
        assert_eq!(leaves.len(), self.num_leaves(), "leaf vector length");
        let t = self.theta.len();
        self.theta.copy_from_slice(&leaves[..t]);
        self.spike.s.copy_from_slice(&leaves[t..2 * t]);
        let mut at = 2 * t;
        for cb in self.codebooks_mut() {
            let k = cb.len();
            cb.mu.copy_from_slice(&leaves[at..at + k]);
            cb.sigma.copy_from_slice(&leaves[at + k..at + 2 * k]);
            cb.pi.copy_from_slice(&leaves[at + 2 * k..at + 3 * k]);
            at += 3 * k;
        }
    }
}

pub(crate) fn locate_layer(layout: &crate::network::ParamLayout, i: usize) -> (usize, usize) {
    for l in 0..layout.num_layers() {
        let r = layout.layer_range(l);
        if r.contains(&i) {
            return (l, i - r.start);
        }
    }
    panic!("parameter index {i} out of range")
}

/// Gradient of an objective with respect to every leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalGrad {
    pub theta: Vec<f64>,
    pub s: Vec<f64>,
    /// Mirrors `partition.codebooks` of every layer.
    pub codebooks: Vec<Vec<Option<CodebookGrad>>>,
}

impl VariationalGrad {
    pub fn zeros_like(model: &VariationalModel) -> Self {
        let t = model.theta.len();
        let codebooks = model
            .layers
            .iter()
            .map(|q| q.partition.codebooks.iter().map(|c| c.as_ref().map(|c| CodebookGrad::zeros(c.len()))).collect())
            .collect();
        Self { theta: vec![0.0; t], s: vec![0.0; t], codebooks }
    }

    /// Same order as `VariationalModel::leaves`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.theta.clone();
        out.extend_from_slice(&self.s);
        for g in self.codebooks.iter().flatten().flatten() {
            out.extend_from_slice(&g.mu);
            out.extend_from_slice(&g.sigma);
            out.extend_from_slice(&g.pi);
        }
        out
    }

    /// Quantization-group gradients (theta and codebooks) in leaf order.
    pub fn quant_group(&self) -> Vec<f64> {
        let mut out = self.theta.clone();
        for g in self.codebooks.iter().flatten().flatten() {
            out.extend_from_slice(&g.mu);
            out.extend_from_slice(&g.sigma);
            out.extend_from_slice(&g.pi);
        }
        out
    }
}

impl VariationalModel {
    /// Quantization-group values (theta and codebooks), matching
    /// `VariationalGrad::quant_group`.
    pub fn quant_group(&self) -> Vec<f64> {
        let mut out = self.theta.clone();
        for cb in self.codebooks() {
            out.extend_from_slice(&cb.mu);
            out.extend_from_slice(&cb.sigma);
            out.extend_from_slice(&cb.pi);
        }
        out
    }

    pub fn set_quant_group(&mut self, values: &[f64]) {
        let t = self.theta.len();
        self.theta.copy_from_slice(&values[..t]);
        let mut at = t;
        for cb in self.codebooks_mut() {
            let k = cb.len();
            cb.mu.copy_from_slice(&values[at..at + k]);
            cb.sigma.copy_from_slice(&values[at + k..at + 2 * k]);
            cb.pi.copy_from_slice(&values[at + 2 * k..at + 3 * k]);
            at += 3 * k;
        }
    }
}
