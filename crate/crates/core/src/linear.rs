//! Two-level linear Bayesian model for improvement rates.
//!
//! ```text
//! ρ[x,t]            ~ N(β1[x] + β2[x]·t, σ²)
//! (β1[x], β2[x])    ~ N2((μ1, μ2), Ω),  Ω = [[ω1², r·ω1·ω2], [r·ω1·ω2, ω2²]]
//! σ ~ U(0,1)   μ1, μ2 ~ U(−0.1, 0.1)   ω1, ω2 ~ U(0,1)   r ~ U(−1,1)
//! ```
//!
//! The hierarchical layer is evaluated through the precision matrix
//! τ = Ω⁻¹, recomputed from (ω1, ω2, r) at every evaluation.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::improvement::ImprovementSurface;
use crate::projection::{age_block, ols, param_index, ModelError, RhoForecast, TimeIndex};
use crate::sampler::{run_chains, substream, McmcConfig, PosteriorDraws, Support, Target, NOISE_STREAM};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Bounds of the uniform hyperpriors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPriors {
    pub sigma: (f64, f64),
    pub mu: (f64, f64),
    pub omega: (f64, f64),
    pub rho_corr: (f64, f64),
}

impl Default for LinearPriors {
    fn default() -> Self {
        Self {
            sigma: (0.0, 1.0),
            mu: (-0.1, 0.1),
            // Truncated at zero: a standard deviation cannot be negative.
            omega: (0.0, 1.0),
            rho_corr: (-1.0, 1.0),
        }
    }
}

fn inside((lo, hi): (f64, f64), v: f64) -> bool {
    v > lo && v < hi
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelParams {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub mu1: f64,
    pub mu2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub rho_corr: f64,
    pub sigma: f64,
}

impl LinearModelParams {
    /// Flat layout used by the sampler.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.beta1.len() + 6);
        v.extend(&self.beta1);
        v.extend(&self.beta2);
        v.extend([self.mu1, self.mu2, self.omega1, self.omega2, self.rho_corr, self.sigma]);
        v
    }

    pub fn from_slice(x: &[f64], n_ages: usize) -> Self {
        let h = &x[2 * n_ages..];
        Self {
            beta1: x[..n_ages].to_vec(),
            beta2: x[n_ages..2 * n_ages].to_vec(),
            mu1: h[0],
            mu2: h[1],
            omega1: h[2],
            omega2: h[3],
            rho_corr: h[4],
            sigma: h[5],
        }
    }
}

/// The three additive pieces of the log posterior density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDensityTerms {
    pub likelihood: f64,
    pub hierarchy: f64,
    pub prior: f64,
}

impl LinearDensityTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.hierarchy + self.prior
    }
}

/// Precision matrix entries (τ11, τ12, τ22) and ln det Ω.
fn precision(omega1: f64, omega2: f64, r: f64) -> (f64, f64, f64, f64) {
    let v1 = omega1 * omega1;
    let v2 = omega2 * omega2;
    let c = r * omega1 * omega2;
    let det = v1 * v2 - c * c;
    (v2 / det, -c / det, v1 / det, det.ln())
}

fn log_uniform((lo, hi): (f64, f64)) -> f64 {
    -(hi - lo).ln()
}

fn row_sse(row: &[f64], ts: &[f64], b1: f64, b2: f64) -> f64 {
    row.iter()
        .zip(ts)
        .map(|(r, t)| {
            let e = r - b1 - b2 * t;
            e * e
        })
        .sum()
}

/// Log posterior split into likelihood, hierarchy and hyperprior parts.
/// Parameters outside the prior support give −∞ in `prior`.
pub fn linear_log_density_terms(
    params: &LinearModelParams,
    data: &ImprovementSurface,
    time: &TimeIndex,
    priors: &LinearPriors,
) -> Result<LinearDensityTerms, ModelError> {
    let na = data.n_ages();
    if params.beta1.len() != na || params.beta2.len() != na {
        return Err(ModelError::DimensionMismatch(format!(
            "{} ages in data, {}/{} coefficients",
            na,
            params.beta1.len(),
            params.beta2.len()
        )));
    }
    if data.values().iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteData);
    }
    let hyper_ok = inside(priors.sigma, params.sigma)
        && inside(priors.mu, params.mu1)
        && inside(priors.mu, params.mu2)
        && inside(priors.omega, params.omega1)
        && inside(priors.omega, params.omega2)
        && inside(priors.rho_corr, params.rho_corr)
        && params.beta1.iter().chain(&params.beta2).all(|b| b.is_finite());
    if !hyper_ok {
        return Ok(LinearDensityTerms {
            likelihood: f64::NEG_INFINITY,
            hierarchy: f64::NEG_INFINITY,
            prior: f64::NEG_INFINITY,
        });
    }
    let ts: Vec<f64> = data.years().iter().map(|&y| time.t(y)).collect();
    let s2 = params.sigma * params.sigma;
    let sse: f64 = (0..na)
        .map(|a| row_sse(data.row(a), &ts, params.beta1[a], params.beta2[a]))
        .sum();
    let n = data.values().len() as f64;
    let likelihood = -0.5 * n * (LN_2PI + s2.ln()) - sse / (2.0 * s2);

    let (t11, t12, t22, logdet) = precision(params.omega1, params.omega2, params.rho_corr);
    let quad: f64 = (0..na)
        .map(|a| {
            let q1 = params.beta1[a] - params.mu1;
            let q2 = params.beta2[a] - params.mu2;
            t11 * q1 * q1 + 2.0 * t12 * q1 * q2 + t22 * q2 * q2
        })
        .sum();
    let hierarchy = -(na as f64) * (2.0 * PI).ln() - 0.5 * na as f64 * logdet - 0.5 * quad;

    let prior = log_uniform(priors.sigma)
        + 2.0 * log_uniform(priors.mu)
        + 2.0 * log_uniform(priors.omega)
        + log_uniform(priors.rho_corr);
    Ok(LinearDensityTerms {
        likelihood,
        hierarchy,
        prior,
    })
}

/// log p(data | params) + log p(params) under the default priors.
pub fn linear_log_density(
    params: &LinearModelParams,
    data: &ImprovementSurface,
    time: &TimeIndex,
) -> Result<f64, ModelError> {
    Ok(linear_log_density_terms(params, data, time, &LinearPriors::default())?.total())
}

/// The linear model as a sampler target.
pub struct LinearModel<'a> {
    data: &'a ImprovementSurface,
    ts: Vec<f64>,
    priors: LinearPriors,
    n_ages: usize,
}

impl<'a> LinearModel<'a> {
    pub fn new(data: &'a ImprovementSurface, time: &TimeIndex, priors: LinearPriors) -> Result<Self, ModelError> {
        time.check_data(data)?;
        if data.n_years() < 3 {
            return Err(ModelError::TooFewYears {
                need: 3,
                have: data.n_years(),
            });
        }
        Ok(Self {
            data,
            ts: data.years().iter().map(|&y| time.t(y)).collect(),
            priors,
            n_ages: data.n_ages(),
        })
    }

    /// Per-age OLS fits give β; μ is their mean, ω their spread, σ the
    /// residual scale, all clipped into the prior support; r starts at 0.
    pub fn initial_values(&self) -> LinearModelParams {
        let fits: Vec<(f64, f64)> = (0..self.n_ages)
            .map(|a| ols(&self.ts, self.data.row(a)).expect("≥3 distinct time points"))
            .collect();
        let beta1: Vec<f64> = fits.iter().map(|f| f.0).collect();
        let beta2: Vec<f64> = fits.iter().map(|f| f.1).collect();
        let sse: f64 = (0..self.n_ages)
            .map(|a| row_sse(self.data.row(a), &self.ts, beta1[a], beta2[a]))
            .sum();
        let sigma = (sse / self.data.values().len() as f64).sqrt();
        let p = &self.priors;
        LinearModelParams {
            mu1: clip_into(p.mu, mean(&beta1)),
            mu2: clip_into(p.mu, mean(&beta2)),
            omega1: clip_into(p.omega, sd(&beta1)),
            omega2: clip_into(p.omega, sd(&beta2)),
            rho_corr: clip_into(p.rho_corr, 0.0),
            sigma: clip_into(p.sigma, sigma),
            beta1,
            beta2,
        }
    }

    fn age_row_term(&self, x: &[f64], a: usize) -> f64 {
        let na = self.n_ages;
        let h = &x[2 * na..];
        let (b1, b2) = (x[a], x[na + a]);
        let s2 = h[5] * h[5];
        let (t11, t12, t22, _) = precision(h[2], h[3], h[4]);
        let q1 = b1 - h[0];
        let q2 = b2 - h[1];
        -row_sse(self.data.row(a), &self.ts, b1, b2) / (2.0 * s2)
            - 0.5 * (t11 * q1 * q1 + 2.0 * t12 * q1 * q2 + t22 * q2 * q2)
    }

    fn hierarchy_term(&self, x: &[f64]) -> f64 {
        let na = self.n_ages;
        let h = &x[2 * na..];
        let (t11, t12, t22, logdet) = precision(h[2], h[3], h[4]);
        let quad: f64 = (0..na)
            .map(|a| {
                let q1 = x[a] - h[0];
                let q2 = x[na + a] - h[1];
                t11 * q1 * q1 + 2.0 * t12 * q1 * q2 + t22 * q2 * q2
            })
            .sum();
        -0.5 * na as f64 * logdet - 0.5 * quad
    }

    fn likelihood_term(&self, x: &[f64]) -> f64 {
        let na = self.n_ages;
        let sigma = x[2 * na + 5];
        let sse: f64 = (0..na)
            .map(|a| row_sse(self.data.row(a), &self.ts, x[a], x[na + a]))
            .sum();
        -(self.data.values().len() as f64) * sigma.ln() - sse / (2.0 * sigma * sigma)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub(crate) fn clip_into((lo, hi): (f64, f64), v: f64) -> f64 {
    let margin = 1e-3 * (hi - lo);
    v.clamp(lo + margin, hi - margin)
}

impl Target for LinearModel<'_> {
    fn parameter_names(&self) -> Vec<String> {
        let ages = self.data.ages();
        let mut names: Vec<String> = ages.iter().map(|a| format!("beta1[{a}]")).collect();
        names.extend(ages.iter().map(|a| format!("beta2[{a}]")));
        names.extend(["mu1", "mu2", "omega1", "omega2", "rho_corr", "sigma"].map(String::from));
        names
    }

    fn support(&self, index: usize) -> Support {
        let p = &self.priors;
        let bounds = match index.checked_sub(2 * self.n_ages) {
            None => return Support::Real,
            Some(0 | 1) => p.mu,
            Some(2 | 3) => p.omega,
            Some(4) => p.rho_corr,
            Some(_) => p.sigma,
        };
        Support::Interval(bounds.0, bounds.1)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        if (0..x.len()).any(|i| !self.support(i).contains(x[i])) {
            return f64::NEG_INFINITY;
        }
        self.likelihood_term(x) + self.hierarchy_term(x)
    }

    fn conditional_log_density(&self, x: &[f64], index: usize) -> f64 {
        let na = self.n_ages;
        match index {
            i if i < 2 * na => self.age_row_term(x, i % na),
            i if i == 2 * na + 5 => self.likelihood_term(x),
            _ => self.hierarchy_term(x),
        }
    }

    fn initial_step(&self, index: usize, x: &[f64]) -> f64 {
        let na = self.n_ages;
        let n = self.ts.len() as f64;
        let sigma = x[2 * na + 5];
        let tbar = self.ts.iter().sum::<f64>() / n;
        let sxx: f64 = self.ts.iter().map(|t| (t - tbar).powi(2)).sum();
        match index {
            i if i < na => sigma * (1.0 / n + tbar * tbar / sxx).sqrt(),
            i if i < 2 * na => sigma / sxx.sqrt(),
            i => match i - 2 * na {
                0 => x[2 * na + 2] / (na as f64).sqrt(),
                1 => x[2 * na + 3] / (na as f64).sqrt(),
                2 => x[2 * na + 2] / (2.0 * na as f64).sqrt(),
                3 => x[2 * na + 3] / (2.0 * na as f64).sqrt(),
                4 => 0.1,
                _ => sigma / (2.0 * self.data.values().len() as f64).sqrt(),
            },
        }
    }
}

/// Posterior draws of the linear model, every chain started at the OLS
/// initial values.
pub fn fit_linear(
    data: &ImprovementSurface,
    time: &TimeIndex,
    config: &McmcConfig,
) -> Result<PosteriorDraws, ModelError> {
    fit_linear_with_priors(data, time, config, LinearPriors::default())
}

pub fn fit_linear_with_priors(
    data: &ImprovementSurface,
    time: &TimeIndex,
    config: &McmcConfig,
    priors: LinearPriors,
) -> Result<PosteriorDraws, ModelError> {
    config.validate()?;
    let model = LinearModel::new(data, time, priors)?;
    let init = model.initial_values().to_vec();
    Ok(run_chains(&model, config, &vec![init; config.n_chains])?)
}

/// ρ̂(x, t) = β1[x] + β2[x]·t per draw; the noise channel adds N(0, σ²)
/// from the run's forecast-noise stream.
pub fn project_linear(
    draws: &PosteriorDraws,
    time: &TimeIndex,
    horizon_years: &[i32],
) -> Result<RhoForecast, ModelError> {
    time.check_horizon(horizon_years)?;
    let (ages, b1) = age_block(draws, "beta1")?;
    let (ages2, b2) = age_block(draws, "beta2")?;
    if ages != ages2 {
        return Err(ModelError::DimensionMismatch("beta1/beta2 ages differ".into()));
    }
    let sigma = param_index(draws, "sigma")?;
    let ts: Vec<f64> = horizon_years.iter().map(|&y| time.t(y)).collect();
    let mut rng = substream(draws.config.seed, NOISE_STREAM);
    let n = draws.n_draws() * ages.len() * ts.len();
    let mut values = Vec::with_capacity(n);
    let mut means = Vec::with_capacity(n);
    for d in 0..draws.n_draws() {
        let x = draws.draw(d);
        for a in 0..ages.len() {
            for &t in &ts {
                let m = x[b1[a]] + x[b2[a]] * t;
                let z: f64 = rng.sample(StandardNormal);
                means.push(m);
                values.push(m + x[sigma] * z);
            }
        }
    }
    Ok(RhoForecast::new(ages, horizon_years.to_vec(), draws.n_draws(), values, means))
}
