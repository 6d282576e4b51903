//! Training objectives over a [`VariationalModel`].
//!
//! Both objectives evaluate the data term at the expected weights
//! `lambda_i * sum_k mu_k assignment_k(theta_i)`.
//!
//! * Spike-and-slab: adds `sum_i KL(Bern(lambda_i) || Bern(lambda))` and
//!   `sum_i lambda_i KL(N(mu_k*, sigma_k*^2) || N(0, sigma0^2))` with `k*` the
//!   dominant assignment of weight `i`.
//! * Gaussian prior (ablation): drops the Bernoulli term and uses the
//!   assignment-weighted sum of component KLs as the slab term.
//!
//! The dominant index `k*` is piecewise constant: no gradient flows through
//! the argmax.

use crate::gmm::Evaluation;
use crate::spike_slab::{bern_kl, gauss_kl, gauss_kl_grad, retain_prob};
use crate::task::{Dataset, Task};
use crate::variational::{VariationalGrad, VariationalModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prior {
    SpikeSlab,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveBreakdown {
    pub nll: f64,
    pub bern_kl: f64,
    pub slab_kl: f64,
    pub total: f64,
}

/// Which data rows enter the likelihood, and how they are weighted.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub data: &'a Dataset,
    pub rows: &'a [usize],
    /// Multiplier on the summed batch NLL, typically `n_train / batch_len`.
    pub scale: f64,
}

impl<'a> Batch<'a> {
    pub fn full(data: &'a Dataset, rows: &'a [usize]) -> Self {
        Self { data, rows, scale: 1.0 }
    }
}

/// Spike-and-slab approximate objective and its gradient.
pub fn objective(
    model: &VariationalModel,
    batch: Batch<'_>,
    task: Task,
    mask: Option<&[bool]>,
) -> Result<(ObjectiveBreakdown, VariationalGrad)> {
    evaluate(model, batch, task, mask, Prior::SpikeSlab)
}

/// Gaussian-prior ablation objective and its gradient.
pub fn objective_gaussian_prior(
    model: &VariationalModel,
    batch: Batch<'_>,
    task: Task,
    mask: Option<&[bool]>,
) -> Result<(ObjectiveBreakdown, VariationalGrad)> {
    evaluate(model, batch, task, mask, Prior::Gaussian)
}

pub fn evaluate(
    model: &VariationalModel,
    batch: Batch<'_>,
    task: Task,
    mask: Option<&[bool]>,
    prior: Prior,
) -> Result<(ObjectiveBreakdown, VariationalGrad)> {
    if batch.rows.is_empty() {
        return Err(Error::Input("objective needs a nonempty batch".into()));
    }
    task.check(batch.data)?;
    let t = model.param_count();
    if let Some(m) = mask {
        if m.len() != t {
            return Err(Error::Input("mask length differs from parameter count".into()));
        }
    }
    let spike = &model.spike;
    let evals: Vec<Evaluation> = model.evaluations()?;
    let owners: Vec<(usize, usize)> = model.param_owners().collect();
    let lambdas: Vec<f64> = spike.s.iter().map(|&s| retain_prob(s, spike.tau_prime)).collect();

    let mut eff = vec![0.0; t];
    let mut soft = vec![0.0; t];
    for i in 0..t {
        let (l, j) = owners[i];
        soft[i] = model.layers[l].codebook(j).soft_weight_of(&evals[i]);
        if mask.is_none_or(|m| m[i]) {
            eff[i] = lambdas[i] * soft[i];
        }
    }
    let net = crate::network::Network::from_flat(model.arch.clone(), &eff)?;

    let mut g_eff = vec![0.0; t];
    let mut nll = 0.0;
    for &r in batch.rows {
        let (out, tape) = net.forward_tape(batch.data.row(r))?;
        let (loss, mut g_out) = task.nll(batch.data, r, &out);
        nll += loss;
        for g in &mut g_out {
            *g *= batch.scale;
        }
        net.backward_into(&tape, &g_out, &mut g_eff)?;
    }
    nll *= batch.scale;
    if !nll.is_finite() {
        return Err(Error::Numeric { term: "negative log-likelihood" });
    }

    let mut grad = VariationalGrad::zeros_like(model);
    let mut bern = 0.0;
    let mut slab = 0.0;
    let var0 = spike.sigma0_sq;
    let logit_prior = (spike.lambda_prior / (1.0 - spike.lambda_prior)).ln();
    for i in 0..t {
        let (l, j) = owners[i];
        let quant = &model.layers[l];
        let w = quant.membership[j];
        let cb = quant.codebook(j);
        let cg = grad.codebooks[l][w].as_mut().expect("gradient slot for live window");
        let e = &evals[i];
        let lt = lambdas[i];
        let dl_ds = lt * (1.0 - lt) / spike.tau_prime;
        let x = model.theta[i];
        let mut g_lambda = 0.0;

        // data term
        if mask.is_none_or(|m| m[i]) && g_eff[i] != 0.0 {
            g_lambda += g_eff[i] * soft[i];
            grad.theta[i] += cb.soft_weight_backward(x, e, g_eff[i] * lt, cg);
        }

        match prior {
            Prior::SpikeSlab => {
                bern += bern_kl(lt, spike.lambda_prior)?;
                // d KL / d lambda = logit(lambda_i) - logit(lambda), logit(lambda_i) = s / tau'
                g_lambda += spike.s[i] / spike.tau_prime - logit_prior;

                let k = e.argmax();
                let kl = gauss_kl(cb.mu[k], cb.sigma[k] * cb.sigma[k], var0)?;
                slab += lt * kl;
                g_lambda += kl;
                let (gm, gs) = gauss_kl_grad(cb.mu[k], cb.sigma[k], var0);
                cg.mu[k] += lt * gm;
                cg.sigma[k] += lt * gs;
            }
            Prior::Gaussian => {
                let mut mix = 0.0;
                let mut g_assign = vec![0.0; cb.len()];
                for k in 0..cb.len() {
                    let kl = gauss_kl(cb.mu[k], cb.sigma[k] * cb.sigma[k], var0)?;
                    let p = e.assignment[k];
                    mix += p * kl;
                    g_assign[k] = lt * kl;
                    let (gm, gs) = gauss_kl_grad(cb.mu[k], cb.sigma[k], var0);
                    cg.mu[k] += lt * p * gm;
                    cg.sigma[k] += lt * p * gs;
                }
                slab += lt * mix;
                g_lambda += mix;
                grad.theta[i] += cb.assignment_backward(x, e, &g_assign, cg);
            }
        }
        grad.s[i] += g_lambda * dl_ds;
    }
    if !bern.is_finite() {
        return Err(Error::Numeric { term: "Bernoulli KL" });
    }
    if !slab.is_finite() {
        return Err(Error::Numeric { term: "slab KL" });
    }
    let total = nll + bern + slab;
    Ok((ObjectiveBreakdown { nll, bern_kl: bern, slab_kl: slab, total }, grad))
}
