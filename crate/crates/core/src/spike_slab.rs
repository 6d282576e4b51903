//! Retain probabilities and the closed-form divergences of the spike-and-slab
//! family.

use crate::{Error, Result};

/// Per-weight retain logits and the prior they are regularized towards.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSlabParams {
    pub s: Vec<f64>,
    pub tau_prime: f64,
    /// Prior retain probability.
    pub lambda_prior: f64,
    /// Prior slab variance.
    pub sigma0_sq: f64,
}

impl SpikeSlabParams {
    pub fn new(s: Vec<f64>, tau_prime: f64, lambda_prior: f64, sigma0_sq: f64) -> Result<Self> {
        if !(tau_prime > 0.0) {
            return Err(Error::Config(format!("tau_prime must be positive, got {tau_prime}")));
        }
        if !(lambda_prior > 0.0 && lambda_prior < 1.0) {
            return Err(Error::Config(format!("prior retain probability must be in (0,1), got {lambda_prior}")));
        }
        if !(sigma0_sq > 0.0) {
            return Err(Error::Config(format!("slab prior variance must be positive, got {sigma0_sq}")));
        }
        Ok(Self { s, tau_prime, lambda_prior, sigma0_sq })
    }

    pub fn retain_probs(&self) -> Vec<f64> {
        self.s.iter().map(|&s| retain_prob(s, self.tau_prime)).collect()
    }
}

/// `sigmoid(s / tau_prime)`.
pub fn retain_prob(s: f64, tau_prime: f64) -> f64 {
    let z = s / tau_prime;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of `retain_prob` with respect to `s`.
pub fn retain_prob_grad(s: f64, tau_prime: f64) -> f64 {
    let p = retain_prob(s, tau_prime);
    p * (1.0 - p) / tau_prime
}

/// Logit whose retain probability is `p`.
pub fn retain_logit(p: f64, tau_prime: f64) -> f64 {
    tau_prime * (p / (1.0 - p)).ln()
}

fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// `KL(Bern(lt) || Bern(l))`.
pub fn bern_kl(lt: f64, l: f64) -> Result<f64> {
    if !(l > 0.0 && l < 1.0) {
        return Err(Error::Config(format!("prior retain probability must be in (0,1), got {l}")));
    }
    if !(0.0..=1.0).contains(&lt) {
        return Err(Error::Input(format!("retain probability {lt} outside [0,1]")));
    }
    Ok((xlogy_ratio(lt, l) + xlogy_ratio(1.0 - lt, 1.0 - l)).max(0.0))
}

/// `KL(N(mu, var) || N(0, var0))`.
pub fn gauss_kl(mu: f64, var: f64, var0: f64) -> Result<f64> {
    if !(var > 0.0 && var0 > 0.0) {
        return Err(Error::Input(format!("variances must be positive, got {var} and {var0}")));
    }
    Ok(0.5 * ((var0 / var).ln() + (var + mu * mu) / var0 - 1.0))
}

/// Partial derivatives of `gauss_kl(mu, sigma^2, var0)` with respect to
/// `mu` and `sigma`.
pub fn gauss_kl_grad(mu: f64, sigma: f64, var0: f64) -> (f64, f64) {
    (mu / var0, -1.0 / sigma + sigma / var0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retain_prob_values() {
        assert_eq!(retain_prob(0.0, 0.3), 0.5);
        assert!((retain_prob(0.0125 * 3f64.ln(), 0.0125) - 0.75).abs() < 1e-12);
        assert!(retain_prob(26.0, 1.0) > 1.0 - 1e-9);
        assert!(retain_prob(-26.0, 1.0) < 1e-9);
        assert!(retain_prob(-1e6, 1e-3) >= 0.0);
        assert!((retain_prob(retain_logit(0.99, 0.0125), 0.0125) - 0.99).abs() < 1e-12);
    }

    #[test]
    fn bern_kl_values() {
        assert_eq!(bern_kl(0.5, 0.5).unwrap(), 0.0);
        assert!((bern_kl(1.0, 0.5).unwrap() - 2f64.ln()).abs() < 1e-12);
        let want = 0.9 * 9f64.ln() + 0.1 * (1.0f64 / 9.0).ln();
        assert!((bern_kl(0.9, 0.1).unwrap() - want).abs() < 1e-12);
        assert!(matches!(bern_kl(0.3, 1.0), Err(Error::Config(_))));
        assert!(matches!(bern_kl(0.3, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn gauss_kl_values() {
        assert_eq!(gauss_kl(0.0, 2.5, 2.5).unwrap(), 0.0);
        assert!((gauss_kl(1.0, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let want = 0.5 * (4f64.ln() + 0.25 - 1.0);
        assert!((gauss_kl(0.0, 1.0, 4.0).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.318147).abs() < 1e-6);
        assert!(gauss_kl(0.0, 0.0, 1.0).is_err());
        assert!(gauss_kl(0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(SpikeSlabParams::new(vec![], 0.0, 0.5, 1.0).is_err());
        assert!(SpikeSlabParams::new(vec![], 1.0, 1.0, 1.0).is_err());
        assert!(SpikeSlabParams::new(vec![], 1.0, 0.5, 0.0).is_err());
        assert!(SpikeSlabParams::new(vec![], 1.0, 0.5, 1.0).is_ok());
    }
}
