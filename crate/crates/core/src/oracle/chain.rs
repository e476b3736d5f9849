//! Latent Monte-Carlo density estimation over a diffusion chain.
//!
//! A diffusion model's density at `x` is `E[p(x | x_1)]` over latents
//! `x_1` produced by running the reverse chain from noise. The estimator
//! draws `K` trajectories and averages the final Gaussian kernel in log
//! space. [`GaussianChain`] builds the chain for a Gaussian data model with
//! exact posterior reverse kernels, so its implied density is known in
//! closed form and the estimator can be checked against it.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::density::{DensityModel, Mvn};
use crate::error::{Error, Result};
use crate::numeric::log_mean_exp;
use crate::rng;

/// Number of latent trajectories used when none is configured.
pub const DEFAULT_LATENT_SAMPLES: usize = 20;

/// Floor for reverse-kernel covariance eigenvalues.
const KERNEL_FLOOR: f64 = 1e-12;

/// Forward retention factors: `x_t = sqrt(a_t) x_{t-1} + sqrt(1 - a_t) eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Config("noise schedule needs at least one step".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Config(format!("schedule entry {a} outside (0, 1]")));
        }
        Ok(Self { alphas })
    }

    pub fn constant(steps: usize, alpha: f64) -> Result<Self> {
        Self::new(vec![alpha; steps])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }
}

/// A reverse chain reduced to what the estimator needs: a sampler for the
/// first latent and the final Gaussian kernel `p(x | x_1)`.
pub trait ReverseChain: Send + Sync {
    fn dim(&self) -> usize;

    /// Runs the reverse process from `x_T` down to `x_1`.
    fn sample_latent(&self, rng: &mut ChaCha8Rng) -> DVector<f64>;

    fn final_kernel_log_density(&self, x1: &DVector<f64>, x: &DVector<f64>) -> Result<f64>;
}

#[derive(Debug, Clone)]
struct ReverseStep {
    /// `E[x_{t-1} | x_t] = offset + gain * x_t`
    gain: DMatrix<f64>,
    offset: DVector<f64>,
    noise: Mvn,
}

impl ReverseStep {
    fn conditional(&self, xt: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.gain * xt
    }
}

/// Linear-Gaussian chain for a Gaussian data model `N(m, C)`.
///
/// Steps with `alpha = 1` add no noise and are dropped. The terminal latent
/// is drawn from the forward marginal `N(sqrt(abar) m, abar C + (1 - abar) I)`,
/// which is `N(0, I)` for standard-normal data.
#[derive(Debug, Clone)]
pub struct GaussianChain {
    data: Mvn,
    terminal: Option<Mvn>,
    /// Reverse steps ordered from `t = T` down to `t = 2`.
    steps: Vec<ReverseStep>,
    /// `p(x_0 | x_1)`; `None` when no step adds noise.
    last: Option<ReverseStep>,
}

pub fn gaussian_ddpm_chain(data_model: &DensityModel, schedule: &NoiseSchedule) -> Result<GaussianChain> {
    let data = data_model
        .as_gaussian()
        .ok_or_else(|| Error::Config("diffusion chain needs a gaussian data model".into()))?
        .clone();
    let d = data.dim();
    let eye = DMatrix::<f64>::identity(d, d);

    let effective: Vec<f64> = schedule.alphas().iter().copied().filter(|&a| a < 1.0).collect();
    if effective.is_empty() {
        return Ok(GaussianChain { data, terminal: None, steps: vec![], last: None });
    }

    // Forward marginals (mean, cov) for t = 0..=T.
    let mut marginals = vec![(data.mean().clone(), data.cov().clone())];
    for &a in &effective {
        let (m, c) = marginals.last().unwrap();
        let next = (m * a.sqrt(), c * a + &eye * (1.0 - a));
        marginals.push(next);
    }

    let mut reverse = Vec::with_capacity(effective.len());
    for (t, &a) in effective.iter().enumerate().rev() {
        let (m_prev, c_prev) = &marginals[t];
        let (m_cur, c_cur) = &marginals[t + 1];
        let c_cur_inv = c_cur
            .clone()
            .cholesky()
            .ok_or_else(|| Error::OracleFailure("forward marginal covariance not positive definite".into()))?
            .inverse();
        let gain = c_prev * &c_cur_inv * a.sqrt();
        let cov = c_prev - &gain * c_prev * a.sqrt();
        let offset = m_prev - &gain * m_cur;
        let noise = Mvn::new(DVector::zeros(d), cov, KERNEL_FLOOR)?;
        reverse.push(ReverseStep { gain, offset, noise });
    }
    let last = reverse.pop();
    let (m_t, c_t) = marginals.last().unwrap();
    let terminal = Some(Mvn::new(m_t.clone(), c_t.clone(), KERNEL_FLOOR)?);
    Ok(GaussianChain { data, terminal, steps: reverse, last })
}

impl GaussianChain {
    /// Closed-form log density of the chain's output, i.e. the data model.
    pub fn analytic_log_density(&self, x: &[f64]) -> f64 {
        self.data.log_pdf(&DVector::from_column_slice(x))
    }

    /// Mean and covariance of `x_T`, or `None` for a noiseless schedule.
    pub fn terminal(&self) -> Option<(&DVector<f64>, &DMatrix<f64>)> {
        self.terminal.as_ref().map(|m| (m.mean(), m.cov()))
    }

    pub fn noisy_steps(&self) -> usize {
        self.steps.len() + usize::from(self.last.is_some())
    }
}

impl ReverseChain for GaussianChain {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn sample_latent(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let Some(terminal) = &self.terminal else {
            return DVector::zeros(self.dim());
        };
        let mut x = terminal.sample(rng);
        for step in &self.steps {
            x = step.conditional(&x) + step.noise.sample(rng);
        }
        x
    }

    fn final_kernel_log_density(&self, x1: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
        match &self.last {
            None => Ok(self.data.log_pdf(x)),
            Some(step) => Ok(step.noise.log_pdf(&(x - step.conditional(x1)))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentEstimate {
    pub log_density: f64,
    /// Delta-method standard error of `log_density`.
    pub stderr: f64,
}

/// `log(mean_k p(x | x_1^(k)))` over `samples` seeded latent trajectories.
pub fn latent_mc_log_density<C: ReverseChain + ?Sized>(chain: &C, x: &[f64], samples: usize, seed: u64) -> Result<f64> {
    Ok(latent_mc_estimate(chain, x, samples, seed)?.log_density)
}

pub fn latent_mc_estimate<C: ReverseChain + ?Sized>(
    chain: &C,
    x: &[f64],
    samples: usize,
    seed: u64,
) -> Result<LatentEstimate> {
    if samples == 0 {
        return Err(Error::Config("latent sample count must be at least 1".into()));
    }
    if x.len() != chain.dim() {
        return Err(Error::DimensionMismatch { expected: chain.dim(), got: x.len() });
    }
    let x = DVector::from_column_slice(x);
    let terms: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, k);
            let x1 = chain.sample_latent(&mut r);
            chain.final_kernel_log_density(&x1, &x)
        })
        .collect::<Result<_>>()?;
    let log_density = log_mean_exp(&terms);
    let stderr = if samples > 1 && log_density.is_finite() {
        // Relative spread of the weights exp(term - estimate).
        let w: Vec<f64> = terms.iter().map(|t| (t - log_density).exp()).collect();
        let var = w.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / (samples - 1) as f64;
        (var / samples as f64).sqrt()
    } else {
        0.0
    };
    Ok(LatentEstimate { log_density, stderr })
}
