//! Gaussian-mixture codebook: responsibilities, temperature-scaled
//! assignments, the soft (expected) codebook value of a weight, and the
//! reverse pass through all three.
//!
//! For a weight `x` the responsibility of component `k` is
//! `softmax_k(pi_k * N(x | mu_k, sigma_k^2))`, and the assignment is
//! `softmax_k(responsibility_k / tau)`. The soft weight is
//! `sum_k mu_k * assignment_k`.

use crate::{Error, Result};

/// Floor for standard deviations of degenerate K-means groups.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Lower bound kept on `sigma` while training.
pub const SIGMA_MIN: f64 = 1e-6;

/// Lower bound kept on mixture weights while training.
pub const PI_MIN: f64 = 1e-8;

/// Limit applied to `pi_k * density` before exponentiation.
pub const EXPONENT_CLAMP: f64 = 500.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmCodebook {
    pub mu: Vec<f64>,
    /// Standard deviations.
    pub sigma: Vec<f64>,
    /// Mixture weights on the simplex.
    pub pi: Vec<f64>,
    pub tau: f64,
}

/// Per-weight intermediate values shared by the forward and reverse passes.
#[derive(Debug, Clone)]
pub struct Evaluation {
    density: Vec<f64>,
    clamped: Vec<bool>,
    pub responsibilities: Vec<f64>,
    pub assignment: Vec<f64>,
}

impl Evaluation {
    /// Index of the largest assignment, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.assignment)
    }
}

/// Gradient buffers matching one codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookGrad {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub pi: Vec<f64>,
}

impl CodebookGrad {
    pub fn zeros(k: usize) -> Self {
        Self { mu: vec![0.0; k], sigma: vec![0.0; k], pi: vec![0.0; k] }
    }
}

/// First index of the maximum; NaN entries never win.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of `z / temperature`.
pub fn softmax_scaled(z: &[f64], temperature: f64) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| ((v - m) / temperature).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

/// Reverse pass of `y = softmax(z / temperature)`.
fn softmax_backward(y: &[f64], g_y: &[f64], temperature: f64) -> Vec<f64> {
    let dot: f64 = y.iter().zip(g_y).map(|(a, b)| a * b).sum();
    y.iter().zip(g_y).map(|(yi, gi)| yi * (gi - dot) / temperature).collect()
}

/// Gaussian density `N(x | mu, sigma^2)`.
pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    INV_SQRT_2PI / sigma * (-0.5 * z * z).exp()
}

impl GmmCodebook {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, pi: Vec<f64>, tau: f64) -> Result<Self> {
        let cb = Self { mu, sigma, pi, tau };
        cb.validate()?;
        Ok(cb)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.mu.len();
        if k == 0 {
            return Err(Error::Input("codebook needs at least one component".into()));
        }
        if self.sigma.len() != k || self.pi.len() != k {
            return Err(Error::Input("codebook field lengths differ".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Input("codebook standard deviations must be positive".into()));
        }
        if self.pi.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Input("mixture weights must be nonnegative".into()));
        }
        let total: f64 = self.pi.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("mixture weights sum to {total}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Restores the invariants after an unconstrained gradient step.
    pub fn project(&mut self) {
        for s in &mut self.sigma {
            if !(*s >= SIGMA_MIN) {
                *s = SIGMA_MIN;
            }
        }
        for p in &mut self.pi {
            if !(*p >= PI_MIN) {
                *p = PI_MIN;
            }
        }
        let total: f64 = self.pi.iter().sum();
        for p in &mut self.pi {
            *p /= total;
        }
    }

    pub fn evaluate(&self, x: f64) -> Result<Evaluation> {
        let k = self.len();
        let mut density = Vec::with_capacity(k);
        let mut clamped = Vec::with_capacity(k);
        let mut exponents = Vec::with_capacity(k);
        for j in 0..k {
            let d = normal_pdf(x, self.mu[j], self.sigma[j]);
            let a = self.pi[j] * d;
            if a.is_nan() {
                return Err(Error::Numeric { term: "mixture density" });
            }
            let c = a.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
            clamped.push(c != a);
            density.push(d);
            exponents.push(c);
        }
        let responsibilities = softmax_scaled(&exponents, 1.0);
        let assignment = softmax_scaled(&responsibilities, self.tau);
        Ok(Evaluation { density, clamped, responsibilities, assignment })
    }

    /// Posterior component weights of `x`.
    pub fn responsibilities(&self, x: f64) -> Result<Vec<f64>> {
        Ok(self.evaluate(x)?.responsibilities)
    }

    /// Temperature-scaled assignment probabilities of `x`.
    pub fn assignment(&self, x: f64) -> Result<Vec<f64>> {
        Ok(self.evaluate(x)?.assignment)
    }

    /// Expected codebook value of `x` under its assignment.
    pub fn soft_weight(&self, x: f64) -> Result<f64> {
        let e = self.evaluate(x)?;
        Ok(self.soft_weight_of(&e))
    }

    pub fn soft_weight_of(&self, e: &Evaluation) -> f64 {
        self.mu.iter().zip(&e.assignment).map(|(m, p)| m * p).sum()
    }

    /// Propagates a gradient on the assignment vector back to `x` and the
    /// codebook parameters. Codebook gradients are accumulated into `grad`;
    /// the gradient with respect to `x` is returned.
    pub fn assignment_backward(&self, x: f64, e: &Evaluation, g_assign: &[f64], grad: &mut CodebookGrad) -> f64 {
        let g_resp = softmax_backward(&e.assignment, g_assign, self.tau);
        let g_exp = softmax_backward(&e.responsibilities, &g_resp, 1.0);
        let mut g_x = 0.0;
        for k in 0..self.len() {
            if e.clamped[k] {
                continue;
            }
            let g = g_exp[k];
            let d = e.density[k];
            let s = self.sigma[k];
            let diff = x - self.mu[k];
            // d(pi * N)/d(.)
            let scaled = g * self.pi[k] * d;
            grad.pi[k] += g * d;
            grad.mu[k] += scaled * diff / (s * s);
            grad.sigma[k] += scaled * (diff * diff / (s * s * s) - 1.0 / s);
            g_x -= scaled * diff / (s * s);
        }
        g_x
    }

    /// Reverse pass of `soft_weight`: accumulates codebook gradients scaled by
    /// `upstream` and returns `upstream * d soft_weight / dx`.
    pub fn soft_weight_backward(&self, x: f64, e: &Evaluation, upstream: f64, grad: &mut CodebookGrad) -> f64 {
        if upstream == 0.0 {
            return 0.0;
        }
        for (g, p) in grad.mu.iter_mut().zip(&e.assignment) {
            *g += upstream * p;
        }
        let g_assign: Vec<f64> = self.mu.iter().map(|m| upstream * m).collect();
        self.assignment_backward(x, e, &g_assign, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cb(mu: &[f64], sigma: &[f64], pi: &[f64], tau: f64) -> GmmCodebook {
        GmmCodebook::new(mu.to_vec(), sigma.to_vec(), pi.to_vec(), tau).unwrap()
    }

    #[test]
    fn single_component_responsibility_is_one() {
        let c = cb(&[0.3], &[0.1], &[1.0], 0.5);
        assert_eq!(c.responsibilities(1.7).unwrap(), vec![1.0]);
        assert_eq!(c.assignment(1.7).unwrap(), vec![1.0]);
        assert_eq!(c.soft_weight(-4.0).unwrap(), 0.3);
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let c = cb(&[-1.0, 1.0], &[0.4, 0.4], &[0.5, 0.5], 0.1);
        let r = c.responsibilities(0.0).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
        assert!(c.soft_weight(0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn responsibilities_match_direct_formula() {
        let c = cb(&[0.0, 1.0], &[1.0, 1.0], &[0.5, 0.5], 1.0);
        let r = c.responsibilities(0.0).unwrap();
        // exp(pi_k N_k) / sum_j exp(pi_j N_j), N(0|0,1)=0.39894, N(0|1,1)=0.24197
        let e0 = (0.5f64 * 0.398_942_280_4).exp();
        let e1 = (0.5f64 * 0.241_970_724_5).exp();
        assert!((r[0] - e0 / (e0 + e1)).abs() < 1e-9);
        assert!((r[1] - e1 / (e0 + e1)).abs() < 1e-9);
    }

    #[test]
    fn temperature_softmax_examples() {
        let p = softmax_scaled(&[0.7, 0.3], 0.2);
        let hi = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((p[0] - hi).abs() < 1e-12 && (p[1] - (1.0 - hi)).abs() < 1e-12);
        assert!((p[0] - 0.8808).abs() < 1e-4);

        let sharp = softmax_scaled(&[0.9, 0.1], 1e-4);
        assert!((sharp[0] - 1.0).abs() < 1e-6 && sharp[1] < 1e-6);

        let flat = softmax_scaled(&[0.25; 4], 1e-3);
        assert!(flat.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn soft_weight_of_assignment() {
        let c = cb(&[0.0, 1.0], &[1.0, 1.0], &[0.5, 0.5], 1.0);
        let e = Evaluation {
            density: vec![1.0, 1.0],
            clamped: vec![false, false],
            responsibilities: vec![0.7, 0.3],
            assignment: softmax_scaled(&[0.7, 0.3], 0.2),
        };
        assert!((c.soft_weight_of(&e) - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let err = GmmCodebook::new(vec![0.0], vec![1.0], vec![1.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn degenerate_sigma_is_numeric_error() {
        let c = GmmCodebook { mu: vec![0.0, 1.0], sigma: vec![0.0, 1.0], pi: vec![0.5, 0.5], tau: 1.0 };
        assert!(matches!(c.evaluate(0.0), Err(Error::Numeric { .. })));
    }

    #[test]
    fn huge_density_is_clamped() {
        let c = cb(&[0.0, 1.0], &[1e-9, 1.0], &[0.5, 0.5], 1.0);
        let r = c.responsibilities(0.0).unwrap();
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r[0] > 0.999);
    }

    #[test]
    fn project_restores_simplex() {
        let mut c = GmmCodebook { mu: vec![0.0, 1.0], sigma: vec![-1.0, 0.5], pi: vec![-0.2, 0.9], tau: 1.0 };
        c.project();
        c.validate().unwrap();
        assert_eq!(c.sigma[0], SIGMA_MIN);
    }
}
