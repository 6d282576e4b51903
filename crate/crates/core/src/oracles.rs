//! Independent checks: Monte-Carlo and quadrature KL between Gaussian
//! mixtures, the componentwise mixture-KL upper bound, and central finite
//! differences.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::spike_slab::gauss_kl;
use crate::{Error, Result};

/// Finite one-dimensional Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub w: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Mixture {
    pub fn new(w: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if w.is_empty() || mu.len() != w.len() || sigma.len() != w.len() {
            return Err(Error::Input("mixture arrays must be nonempty and of equal length".into()));
        }
        if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Input("mixture weights must lie on the simplex".into()));
        }
        if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Input("component scales must be positive".into()));
        }
        Ok(Self { w, mu, sigma })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = (0..self.len())
            .filter(|&k| self.w[k] > 0.0)
            .map(|k| {
                let z = (x - self.mu[k]) / self.sigma[k];
                self.w[k].ln() - 0.5 * z * z - self.sigma[k].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }
}

/// Two mixtures with matched component counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePair {
    pub p: Mixture,
    pub q: Mixture,
}

impl MixturePair {
    pub fn new(p: Mixture, q: Mixture) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::Input("mixtures must have the same number of components".into()));
        }
        Ok(Self { p, q })
    }

    /// Random pair: means in `[-3,3]`, scales in `[0.1,2]`, weights uniform on
    /// the simplex.
    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        let mut one = || {
            let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = e.iter().sum();
            Mixture {
                w: e.iter().map(|x| x / s).collect(),
                mu: (0..k).map(|_| rng.random_range(-3.0..=3.0)).collect(),
                sigma: (0..k).map(|_| rng.random_range(0.1..=2.0)).collect(),
            }
        };
        let p = one();
        let q = one();
        Self { p, q }
    }
}

/// Stratified Monte-Carlo estimate of `KL(p || q)` and its standard error.
/// Draws are allocated to p's components in proportion to their weights
/// (at least two per component with positive weight).
pub fn mc_kl<R: Rng + ?Sized>(p: &Mixture, q: &Mixture, n: usize, rng: &mut R) -> (f64, f64) {
    let mut estimate = 0.0;
    let mut var = 0.0;
    for k in 0..p.len() {
        if p.w[k] == 0.0 {
            continue;
        }
        let nk = ((p.w[k] * n as f64).round() as usize).max(2);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..nk {
            let z: f64 = StandardNormal.sample(rng);
            let x = p.mu[k] + p.sigma[k] * z;
            let d = p.ln_pdf(x) - q.ln_pdf(x);
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / nk as f64;
        let s2 = ((sum_sq - nk as f64 * mean * mean) / (nk as f64 - 1.0)).max(0.0);
        estimate += p.w[k] * mean;
        var += p.w[k] * p.w[k] * s2 / nk as f64;
    }
    (estimate, var.sqrt())
}

/// `KL(p || q)` by composite Simpson quadrature on a grid covering ten
/// standard deviations around every component of either mixture.
pub fn quadrature_kl(p: &Mixture, q: &Mixture, intervals: usize) -> f64 {
    let lo = (0..p.len())
        .map(|k| p.mu[k] - 10.0 * p.sigma[k])
        .chain((0..q.len()).map(|k| q.mu[k] - 10.0 * q.sigma[k]))
        .fold(f64::INFINITY, f64::min);
    let hi = (0..p.len())
        .map(|k| p.mu[k] + 10.0 * p.sigma[k])
        .chain((0..q.len()).map(|k| q.mu[k] + 10.0 * q.sigma[k]))
        .fold(f64::NEG_INFINITY, f64::max);
    let n = intervals + intervals % 2;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let lp = p.ln_pdf(x);
        lp.exp() * (lp - q.ln_pdf(x))
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// `sum_k w_k KL(g_k || g~_k) + sum_k w_k ln(w_k / w~_k)`; `+inf` when some
/// `w~_k = 0` while `w_k > 0`.
pub fn mixture_kl_bound(pair: &MixturePair) -> Result<f64> {
    let (p, q) = (&pair.p, &pair.q);
    let mut total = 0.0;
    for k in 0..p.len() {
        let w = p.w[k];
        if w == 0.0 {
            continue;
        }
        if q.w[k] == 0.0 {
            return Ok(f64::INFINITY);
        }
        // KL between N(mu_p, s_p^2) and N(mu_q, s_q^2) via a shift to q's mean
        let kl = gauss_kl(p.mu[k] - q.mu[k], p.sigma[k] * p.sigma[k], q.sigma[k] * q.sigma[k])?;
        total += w * kl + w * (w / q.w[k]).ln();
    }
    Ok(total)
}

/// Max over coordinates of `|analytic - numeric| / max(|analytic|, |numeric|,
/// floor)` with central differences of step `h`.
pub fn fd_check<F>(mut f: F, params: &[f64], analytic: &[f64], h: f64, floor: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != params.len() {
        return Err(Error::Input("gradient length differs from parameter count".into()));
    }
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x)?;
        x[i] = orig - h;
        let down = f(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        if !numeric.is_finite() || !analytic[i].is_finite() {
            return Err(Error::Numeric { term: "finite difference" });
        }
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
