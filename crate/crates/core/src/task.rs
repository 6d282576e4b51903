//! Datasets held in memory and the per-sample negative log-likelihoods used
//! for training.

use std::f64::consts::PI;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Row-major `n x dim` real targets.
    Real {
        values: Vec<f64>,
        dim: usize,
    },
    Labels {
        labels: Vec<usize>,
        classes: usize,
    },
}

/// Row-major inputs with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub dim: usize,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, targets: Targets) -> Result<Self> {
        if dim == 0 || !inputs.len().is_multiple_of(dim) {
            return Err(Error::Input("input buffer is not a whole number of rows".into()));
        }
        let n = inputs.len() / dim;
        let ok = match &targets {
            Targets::Real { values, dim } => *dim > 0 && values.len() == n * dim,
            Targets::Labels { labels, classes } => labels.len() == n && labels.iter().all(|&l| l < *classes),
        };
        if !ok {
            return Err(Error::Input("targets do not match the inputs".into()));
        }
        Ok(Self { inputs, dim, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Real { dim, .. } => *dim,
            Targets::Labels { classes, .. } => *classes,
        }
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            inputs.extend_from_slice(self.row(i));
        }
        let targets = match &self.targets {
            Targets::Real { values, dim } => {
                let mut v = Vec::with_capacity(idx.len() * dim);
                for &i in idx {
                    v.extend_from_slice(&values[i * dim..(i + 1) * dim]);
                }
                Targets::Real { values: v, dim: *dim }
            }
            Targets::Labels { labels, classes } => {
                Targets::Labels { labels: idx.iter().map(|&i| labels[i]).collect(), classes: *classes }
            }
        };
        Dataset { inputs, dim: self.dim, targets }
    }
}

/// Likelihood model of the targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Task {
    /// Gaussian noise with known standard deviation.
    Regression { sigma_eps: f64 },
    /// Softmax cross-entropy over logits.
    Classification,
}

impl Task {
    /// Negative log-likelihood of row `i` given the network output, and its
    /// gradient with respect to the output.
    pub fn nll(&self, data: &Dataset, i: usize, output: &[f64]) -> (f64, Vec<f64>) {
        match (self, &data.targets) {
            (Task::Regression { sigma_eps }, Targets::Real { values, dim }) => {
                let var = sigma_eps * sigma_eps;
                let y = &values[i * dim..(i + 1) * dim];
                let norm = 0.5 * (2.0 * PI * var).ln();
                let mut loss = 0.0;
                let grad = output
                    .iter()
                    .zip(y)
                    .map(|(o, t)| {
                        let r = o - t;
                        loss += r * r / (2.0 * var) + norm;
                        r / var
                    })
                    .collect();
                (loss, grad)
            }
            (Task::Classification, Targets::Labels { labels, .. }) => {
                let label = labels[i];
                let m = output.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = output.iter().map(|&o| (o - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                let loss = z.ln() + m - output[label];
                let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
                grad[label] -= 1.0;
                (loss, grad)
            }
            _ => panic!("task does not match dataset targets"),
        }
    }

    pub fn check(&self, data: &Dataset) -> Result<()> {
        match (self, &data.targets) {
            (Task::Regression { sigma_eps }, Targets::Real { .. }) if *sigma_eps > 0.0 => Ok(()),
            (Task::Regression { .. }, Targets::Real { .. }) => {
                Err(Error::Config("regression noise level must be positive".into()))
            }
            (Task::Classification, Targets::Labels { .. }) => Ok(()),
            _ => Err(Error::Input("task does not match dataset targets".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let d = Dataset::new(vec![0.0], 1, Targets::Labels { labels: vec![1], classes: 3 }).unwrap();
        let out = [1.0, 2.0, 0.5];
        let (l, g) = Task::Classification.nll(&d, 0, &out);
        let z: f64 = out.iter().map(|o: &f64| o.exp()).sum();
        assert!((l - (z.ln() - 2.0)).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn gaussian_nll_at_target_is_normalizer() {
        let d = Dataset::new(vec![0.0], 1, Targets::Real { values: vec![0.3], dim: 1 }).unwrap();
        let (l, g) = Task::Regression { sigma_eps: 0.1 }.nll(&d, 0, &[0.3]);
        assert!((l - 0.5 * (2.0 * PI * 0.01f64).ln()).abs() < 1e-12);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn mismatched_targets_rejected() {
        assert!(Dataset::new(vec![0.0, 1.0], 1, Targets::Labels { labels: vec![0, 3], classes: 2 }).is_err());
        assert!(Dataset::new(vec![0.0, 1.0, 2.0], 2, Targets::Real { values: vec![], dim: 1 }).is_err());
    }
}
