//! Fully-connected network with bias-shifted ReLU activations.
//!
//! Hidden layers compute `h = max(0, W h_prev - b)`: the bias is a threshold
//! inside the activation rather than an additive offset. The output layer is
//! affine, `y = W h + b`.
//!
//! Parameters flatten to a single vector: layers in order, each layer's
//! weight matrix row-major (`out x in`) followed by its bias vector.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use crate::{Error, Result};

/// Layer dimensions of a network, input first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    /// `dims[0]` is the input width, `dims[l + 1]` the width of layer `l`.
    dims: Vec<usize>,
}

impl Architecture {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Input("architecture needs an input width".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Input("layer widths must be positive".into()));
        }
        Ok(Self { dims })
    }

    /// `input`, `hidden...`, `output`.
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        Self::new(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// `(in, out)` for layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.dims[l], self.dims[l + 1])
    }

    /// Parameter count of layer `l` (weights plus biases).
    pub fn layer_param_count(&self, l: usize) -> usize {
        let (i, o) = self.layer_shape(l);
        i * o + o
    }

    /// Total parameter count `T`.
    pub fn param_count(&self) -> usize {
        (0..self.num_layers()).map(|l| self.layer_param_count(l)).sum()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }
}

/// Where a flat parameter index lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, index: usize },
}

/// Offset table mapping flat parameter indices to layer slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    shapes: Vec<(usize, usize)>,
    /// Start offset of each layer, plus a final entry equal to `T`.
    offsets: Vec<usize>,
}

impl ParamLayout {
    fn new(arch: &Architecture) -> Self {
        let shapes: Vec<_> = (0..arch.num_layers()).map(|l| arch.layer_shape(l)).collect();
        let mut offsets = Vec::with_capacity(shapes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &(i, o) in &shapes {
            acc += i * o + o;
            offsets.push(acc);
        }
        Self { shapes, offsets }
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index range of layer `l`.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn locate(&self, index: usize) -> Option<ParamSlot> {
        if index >= self.len() {
            return None;
        }
        let layer = self.offsets.partition_point(|&o| o <= index) - 1;
        let (fan_in, out) = self.shapes[layer];
        let local = index - self.offsets[layer];
        if local < fan_in * out {
            Some(ParamSlot::Weight { layer, row: local / fan_in, col: local % fan_in })
        } else {
            Some(ParamSlot::Bias { layer, index: local - fan_in * out })
        }
    }

    pub fn index_of(&self, slot: ParamSlot) -> usize {
        match slot {
            ParamSlot::Weight { layer, row, col } => self.offsets[layer] + row * self.shapes[layer].0 + col,
            ParamSlot::Bias { layer, index } => {
                let (i, o) = self.shapes[layer];
                self.offsets[layer] + i * o + index
            }
        }
    }
}

/// One dense layer; weights row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.fan_in..(r + 1) * self.fan_in];
            *o = row.iter().zip(x).map(|(w, v)| w * v).sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    layers: Vec<Dense>,
}

impl Network {
    pub fn zeros(arch: Architecture) -> Self {
        let layers = (0..arch.num_layers())
            .map(|l| {
                let (i, o) = arch.layer_shape(l);
                Dense { fan_in: i, fan_out: o, weights: vec![0.0; i * o], bias: vec![0.0; o] }
            })
            .collect();
        Self { arch, layers }
    }

    /// He-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        for layer in &mut net.layers {
            let limit = (6.0 / layer.fan_in as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        net
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Input("network needs at least one layer".into()));
        }
        let mut dims = vec![layers[0].fan_in];
        for (l, layer) in layers.iter().enumerate() {
            if layer.fan_in != *dims.last().unwrap() {
                return Err(Error::Input(format!(
                    "layer {l} expects {} inputs but previous layer emits {}",
                    layer.fan_in,
                    dims.last().unwrap()
                )));
            }
            if layer.weights.len() != layer.fan_in * layer.fan_out || layer.bias.len() != layer.fan_out {
                return Err(Error::Input(format!("layer {l} has inconsistent buffer sizes")));
            }
            dims.push(layer.fan_out);
        }
        Ok(Self { arch: Architecture::new(dims)?, layers })
    }

    pub fn from_flat(arch: Architecture, params: &[f64]) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::Input(format!("expected {} parameters, got {}", arch.param_count(), params.len())));
        }
        let mut net = Self::zeros(arch);
        net.set_flat(params);
        Ok(net)
    }

    /// Overwrites all parameters from a flat vector of length `T`.
    ///
    /// Panics if `params` has the wrong length.
    pub fn set_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "flat parameter length");
        let mut at = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim()
    }

    /// Hash of shapes and parameter bit patterns; identifies the exact network
    /// a tape was recorded against.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.arch.hash(&mut h);
        for layer in &self.layers {
            for w in layer.weights.iter().chain(&layer.bias) {
                w.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.fan_out];
            layer.matvec(&cur, &mut z);
            if l == last {
                for (v, b) in z.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            } else {
                for (v, b) in z.iter_mut().zip(&layer.bias) {
                    *v = (*v - b).max(0.0);
                }
            }
            cur = z;
        }
        Ok(cur)
    }

    /// Row-wise forward of a row-major `n x input_dim` batch.
    pub fn forward_batch(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim();
        if !xs.len().is_multiple_of(d) {
            return Err(Error::Input(format!("batch length {} is not a multiple of {d}", xs.len())));
        }
        let mut out = Vec::with_capacity(xs.len() / d * self.output_dim());
        for row in xs.chunks(d) {
            out.extend(self.forward(row)?);
        }
        Ok(out)
    }

    /// Forward pass that records what `backward` needs.
    pub fn forward_tape(&self, x: &[f64]) -> Result<(Vec<f64>, GradientTape)> {
        self.check_input(x.len())?;
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut active = Vec::with_capacity(last);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.fan_out];
            layer.matvec(&acts[l], &mut z);
            if l == last {
                for (v, b) in z.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            } else {
                let mut mask = vec![false; layer.fan_out];
                for ((v, b), m) in z.iter_mut().zip(&layer.bias).zip(&mut mask) {
                    let shifted = *v - b;
                    *m = shifted > 0.0;
                    *v = if *m { shifted } else { 0.0 };
                }
                active.push(mask);
            }
            acts.push(z);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, GradientTape { fingerprint: self.fingerprint(), acts, active }))
    }

    /// Accumulates `d(upstream . output)/d(theta)` into `grad` (flat layout)
    /// and returns the gradient with respect to the input.
    pub fn backward_into(&self, tape: &GradientTape, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if tape.fingerprint != self.fingerprint() {
            return Err(Error::Usage("gradient tape was recorded on a different network".into()));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Input(format!(
                "upstream gradient has length {}, expected {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if grad.len() != self.param_count() {
            return Err(Error::Input("gradient buffer has the wrong length".into()));
        }
        let layout = self.arch.layout();
        let last = self.layers.len() - 1;
        // gradient w.r.t. the layer's output after activation
        let mut g_out = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let range = layout.layer_range(l);
            let (gw, gb) = grad[range].split_at_mut(layer.fan_in * layer.fan_out);
            // gradient w.r.t. the pre-activation W h
            let g_z: Vec<f64> = if l == last {
                for (b, g) in gb.iter_mut().zip(&g_out) {
                    *b += g;
                }
                g_out
            } else {
                let mask = &tape.active[l];
                let gz: Vec<f64> = g_out.iter().zip(mask).map(|(g, &m)| if m { *g } else { 0.0 }).collect();
                for (b, g) in gb.iter_mut().zip(&gz) {
                    *b -= g;
                }
                gz
            };
            let input = &tape.acts[l];
            let mut g_in = vec![0.0; layer.fan_in];
            for (r, &g) in g_z.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.fan_in..(r + 1) * layer.fan_in];
                let grow = &mut gw[r * layer.fan_in..(r + 1) * layer.fan_in];
                for c in 0..layer.fan_in {
                    grow[c] += g * input[c];
                    g_in[c] += g * row[c];
                }
            }
            g_out = g_in;
        }
        Ok(g_out)
    }

    /// Gradient of `upstream . output` with respect to every parameter.
    pub fn backward(&self, tape: &GradientTape, upstream: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.param_count()];
        self.backward_into(tape, upstream, &mut grad)?;
        Ok(grad)
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::Input(format!("input has length {len}, expected {}", self.input_dim())));
        }
        Ok(())
    }
}

/// Activations and ReLU masks of one forward pass.
#[derive(Debug, Clone)]
pub struct GradientTape {
    fingerprint: u64,
    acts: Vec<Vec<f64>>,
    active: Vec<Vec<bool>>,
}

impl GradientTape {
    /// Smallest distance between a hidden pre-activation and its threshold.
    /// Finite-difference checks skip instances where this is tiny.
    pub fn min_kink_margin(&self, net: &Network) -> f64 {
        let mut margin = f64::INFINITY;
        for (l, layer) in net.layers.iter().enumerate().take(net.layers.len().saturating_sub(1)) {
            let mut z = vec![0.0; layer.fan_out];
            layer.matvec(&self.acts[l], &mut z);
            for (v, b) in z.iter().zip(&layer.bias) {
                margin = margin.min((v - b).abs());
            }
        }
        margin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(layers: Vec<(Vec<f64>, Vec<f64>, usize, usize)>) -> Network {
        Network::from_layers(
            layers.into_iter().map(|(w, b, i, o)| Dense { fan_in: i, fan_out: o, weights: w, bias: b }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_linear_layer() {
        let n = net(vec![(vec![2.0], vec![0.0], 1, 1)]);
        assert_eq!(n.forward(&[3.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn bias_shift_kills_unit() {
        let n = net(vec![(vec![1.0], vec![5.0], 1, 1), (vec![4.0], vec![1.0], 1, 1)]);
        assert_eq!(n.forward(&[3.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Network::init(Architecture::mlp(3, &[5, 4], 2).unwrap(), &mut rng);
        assert_eq!(n.forward(&[0.0; 3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn input_dim_mismatch() {
        let n = net(vec![(vec![2.0], vec![0.0], 1, 1)]);
        assert!(matches!(n.forward(&[1.0, 2.0]), Err(Error::Input(_))));
        assert!(n.forward_batch(&[1.0, 2.0, 3.0]).is_ok());
        let n2 = net(vec![(vec![1.0, 1.0], vec![0.0], 2, 1)]);
        assert!(n2.forward_batch(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn linear_gradient_is_input() {
        let n = net(vec![(vec![0.7], vec![0.0], 1, 1)]);
        let (_, tape) = n.forward_tape(&[2.5]).unwrap();
        let g = n.backward(&tape, &[1.0]).unwrap();
        assert_eq!(g, vec![2.5, 1.0]);
    }

    #[test]
    fn dead_unit_has_zero_gradient() {
        let n = net(vec![(vec![1.0], vec![5.0], 1, 1), (vec![4.0], vec![1.0], 1, 1)]);
        let (_, tape) = n.forward_tape(&[3.0]).unwrap();
        let g = n.backward(&tape, &[1.0]).unwrap();
        assert_eq!(&g[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(g[3], 1.0);
    }

    #[test]
    fn stale_tape_rejected() {
        let mut n = net(vec![(vec![0.7], vec![0.0], 1, 1)]);
        let (_, tape) = n.forward_tape(&[1.0]).unwrap();
        n.set_flat(&[0.8, 0.0]);
        assert!(matches!(n.backward(&tape, &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn layout_locates_slots() {
        let arch = Architecture::mlp(3, &[2], 1).unwrap();
        let layout = arch.layout();
        assert_eq!(layout.len(), 3 * 2 + 2 + 2 + 1);
        assert_eq!(layout.locate(4), Some(ParamSlot::Weight { layer: 0, row: 1, col: 1 }));
        assert_eq!(layout.locate(7), Some(ParamSlot::Bias { layer: 0, index: 1 }));
        assert_eq!(layout.locate(8), Some(ParamSlot::Weight { layer: 1, row: 0, col: 0 }));
        assert_eq!(layout.locate(10), Some(ParamSlot::Bias { layer: 1, index: 0 }));
        assert_eq!(layout.locate(11), None);
        for i in 0..layout.len() {
            assert_eq!(layout.index_of(layout.locate(i).unwrap()), i);
        }
    }
}
