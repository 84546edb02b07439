//! Bayesian log-log model: a least-squares pre-fit of ln ρ on ln t, then
//!
//! ```text
//! ρ[x,t] ~ N(exp(β1[x] + β2[x]·ln t), σ²)
//! β1[x]  ~ N(θ1[x], σ1²)      β2[x] ~ N(θ2[x], σ2²)
//! σ, σ1, σ2 ~ U(0,1)
//! ```
//!
//! β2 is the elasticity of the improvement rate with respect to time; a
//! negative value gives an improvement rate that dampens as t grows.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::improvement::ImprovementSurface;
use crate::linear::clip_into;
use crate::projection::{age_block, ols, param_index, ModelError, RhoForecast, TimeIndex};
use crate::sampler::{run_chains, substream, McmcConfig, PosteriorDraws, Support, Target, NOISE_STREAM};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Fallback level for ages whose pre-fit has fewer than two positive rates.
pub const DEFAULT_PREFIT_FLOOR: f64 = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct LogLogPrefit {
    pub ages: Vec<u32>,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub n_used: Vec<usize>,
    /// Years dropped per age because ρ ≤ 0.
    pub excluded: Vec<Vec<i32>>,
}

impl LogLogPrefit {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("age,theta1,theta2,n_used\n");
        for i in 0..self.ages.len() {
            let _ = writeln!(out, "{},{},{},{}", self.ages[i], self.theta1[i], self.theta2[i], self.n_used[i]);
        }
        out
    }
}

/// Per-age OLS of ln ρ on ln t over the positive rates.
///
/// Ages left with fewer than two positive rates get θ2 = 0 and
/// θ1 = ln `floor`, i.e. a flat improvement rate at the floor.
pub fn prefit_loglog(data: &ImprovementSurface, time: &TimeIndex, floor: f64) -> Result<LogLogPrefit, ModelError> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(ModelError::DegenerateRegression(format!("floor {floor} is not positive")));
    }
    time.check_data(data)?;
    if data.values().iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteData);
    }
    if data.n_years() < 2 {
        return Err(ModelError::DegenerateRegression("ln t has zero variance".into()));
    }
    let log_t: Vec<f64> = data.years().iter().map(|&y| time.t(y).ln()).collect();
    let mut out = LogLogPrefit {
        ages: data.ages().to_vec(),
        theta1: Vec::new(),
        theta2: Vec::new(),
        n_used: Vec::new(),
        excluded: Vec::new(),
    };
    for a in 0..data.n_ages() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut dropped = Vec::new();
        for (j, &r) in data.row(a).iter().enumerate() {
            if r > 0.0 {
                xs.push(log_t[j]);
                ys.push(r.ln());
            } else {
                dropped.push(data.years()[j]);
            }
        }
        let (t1, t2) = if xs.len() >= 2 {
            ols(&xs, &ys).ok_or_else(|| ModelError::DegenerateRegression(format!("age {}", data.ages()[a])))?
        } else {
            (floor.ln(), 0.0)
        };
        out.theta1.push(t1);
        out.theta2.push(t2);
        out.n_used.push(xs.len());
        out.excluded.push(dropped);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogLogModelParams {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub sigma: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl LogLogModelParams {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.beta1.len() + 3);
        v.extend(&self.beta1);
        v.extend(&self.beta2);
        v.extend([self.sigma, self.sigma1, self.sigma2]);
        v
    }

    pub fn from_slice(x: &[f64], n_ages: usize) -> Self {
        Self {
            beta1: x[..n_ages].to_vec(),
            beta2: x[n_ages..2 * n_ages].to_vec(),
            sigma: x[2 * n_ages],
            sigma1: x[2 * n_ages + 1],
            sigma2: x[2 * n_ages + 2],
        }
    }
}

/// Upper bounds of the U(0, ·) priors on the three standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogPriors {
    pub sigma_max: f64,
    pub sigma1_max: f64,
    pub sigma2_max: f64,
}

impl Default for LogLogPriors {
    fn default() -> Self {
        Self {
            sigma_max: 1.0,
            sigma1_max: 1.0,
            sigma2_max: 1.0,
        }
    }
}

fn normal_ln(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (LN_2PI + z * z) - sd.ln()
}

fn row_sse(row: &[f64], log_t: &[f64], b1: f64, b2: f64) -> f64 {
    row.iter()
        .zip(log_t)
        .map(|(r, lt)| {
            let e = r - (b1 + b2 * lt).exp();
            e * e
        })
        .sum()
}

/// Log posterior of the log-log model under the given priors; −∞ outside
/// the support.
pub fn loglog_log_density_with_priors(
    params: &LogLogModelParams,
    prefit: &LogLogPrefit,
    data: &ImprovementSurface,
    time: &TimeIndex,
    priors: &LogLogPriors,
) -> Result<f64, ModelError> {
    let na = data.n_ages();
    if params.beta1.len() != na || params.beta2.len() != na || prefit.theta1.len() != na {
        return Err(ModelError::DimensionMismatch(format!(
            "{na} ages in data, {}/{} coefficients, {} prefit rows",
            params.beta1.len(),
            params.beta2.len(),
            prefit.theta1.len()
        )));
    }
    if data.values().iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteData);
    }
    let ok = |v: f64, hi: f64| v > 0.0 && v < hi;
    if !(ok(params.sigma, priors.sigma_max)
        && ok(params.sigma1, priors.sigma1_max)
        && ok(params.sigma2, priors.sigma2_max)
        && params.beta1.iter().chain(&params.beta2).all(|b| b.is_finite()))
    {
        return Ok(f64::NEG_INFINITY);
    }
    let log_t: Vec<f64> = data.years().iter().map(|&y| time.t(y).ln()).collect();
    let mut lp = -(priors.sigma_max.ln() + priors.sigma1_max.ln() + priors.sigma2_max.ln());
    for a in 0..na {
        for (r, lt) in data.row(a).iter().zip(&log_t) {
            lp += normal_ln(*r, (params.beta1[a] + params.beta2[a] * lt).exp(), params.sigma);
        }
        lp += normal_ln(params.beta1[a], prefit.theta1[a], params.sigma1);
        lp += normal_ln(params.beta2[a], prefit.theta2[a], params.sigma2);
    }
    Ok(lp)
}

pub fn loglog_log_density(
    params: &LogLogModelParams,
    prefit: &LogLogPrefit,
    data: &ImprovementSurface,
    time: &TimeIndex,
) -> Result<f64, ModelError> {
    loglog_log_density_with_priors(params, prefit, data, time, &LogLogPriors::default())
}

/// The log-log model as a sampler target.
pub struct LogLogModel<'a> {
    data: &'a ImprovementSurface,
    prefit: LogLogPrefit,
    log_t: Vec<f64>,
    priors: LogLogPriors,
    n_ages: usize,
}

impl<'a> LogLogModel<'a> {
    pub fn new(
        data: &'a ImprovementSurface,
        time: &TimeIndex,
        priors: LogLogPriors,
        floor: f64,
    ) -> Result<Self, ModelError> {
        let prefit = prefit_loglog(data, time, floor)?;
        Ok(Self {
            log_t: data.years().iter().map(|&y| time.t(y).ln()).collect(),
            prefit,
            data,
            priors,
            n_ages: data.n_ages(),
        })
    }

    pub fn prefit(&self) -> &LogLogPrefit {
        &self.prefit
    }

    /// β at the pre-fit θ; σ from the residuals there; σ1, σ2 at 0.1 or
    /// half their prior bound, whichever is smaller.
    pub fn initial_values(&self) -> LogLogModelParams {
        let sse: f64 = (0..self.n_ages)
            .map(|a| row_sse(self.data.row(a), &self.log_t, self.prefit.theta1[a], self.prefit.theta2[a]))
            .sum();
        let sigma = (sse / self.data.values().len() as f64).sqrt();
        let p = &self.priors;
        LogLogModelParams {
            beta1: self.prefit.theta1.clone(),
            beta2: self.prefit.theta2.clone(),
            sigma: clip_into((0.0, p.sigma_max), sigma),
            sigma1: (0.5 * p.sigma1_max).min(0.1),
            sigma2: (0.5 * p.sigma2_max).min(0.1),
        }
    }

    fn age_term(&self, x: &[f64], a: usize) -> f64 {
        let na = self.n_ages;
        let (b1, b2) = (x[a], x[na + a]);
        let (sigma, s1, s2) = (x[2 * na], x[2 * na + 1], x[2 * na + 2]);
        let z1 = (b1 - self.prefit.theta1[a]) / s1;
        let z2 = (b2 - self.prefit.theta2[a]) / s2;
        -row_sse(self.data.row(a), &self.log_t, b1, b2) / (2.0 * sigma * sigma) - 0.5 * (z1 * z1 + z2 * z2)
    }

    fn layer_term(&self, x: &[f64], which: usize) -> f64 {
        let na = self.n_ages;
        let (theta, off) = if which == 1 {
            (&self.prefit.theta1, 0)
        } else {
            (&self.prefit.theta2, na)
        };
        let s = x[2 * na + which];
        let ss: f64 = (0..na).map(|a| (x[off + a] - theta[a]).powi(2)).sum();
        -(na as f64) * s.ln() - ss / (2.0 * s * s)
    }

    fn likelihood_term(&self, x: &[f64]) -> f64 {
        let na = self.n_ages;
        let sigma = x[2 * na];
        let sse: f64 = (0..na)
            .map(|a| row_sse(self.data.row(a), &self.log_t, x[a], x[na + a]))
            .sum();
        -(self.data.values().len() as f64) * sigma.ln() - sse / (2.0 * sigma * sigma)
    }

    fn mean_level(&self) -> f64 {
        let v = self.data.values();
        (v.iter().map(|r| r.abs()).sum::<f64>() / v.len() as f64).max(1e-4)
    }
}

impl Target for LogLogModel<'_> {
    fn parameter_names(&self) -> Vec<String> {
        let ages = self.data.ages();
        let mut names: Vec<String> = ages.iter().map(|a| format!("beta1[{a}]")).collect();
        names.extend(ages.iter().map(|a| format!("beta2[{a}]")));
        names.extend(["sigma", "sigma1", "sigma2"].map(String::from));
        names
    }

    fn support(&self, index: usize) -> Support {
        let p = &self.priors;
        match index.checked_sub(2 * self.n_ages) {
            None => Support::Real,
            Some(0) => Support::Interval(0.0, p.sigma_max),
            Some(1) => Support::Interval(0.0, p.sigma1_max),
            Some(_) => Support::Interval(0.0, p.sigma2_max),
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        if (0..x.len()).any(|i| !self.support(i).contains(x[i])) {
            return f64::NEG_INFINITY;
        }
        self.likelihood_term(x) + self.layer_term(x, 1) + self.layer_term(x, 2)
    }

    fn conditional_log_density(&self, x: &[f64], index: usize) -> f64 {
        let na = self.n_ages;
        match index {
            i if i < 2 * na => self.age_term(x, i % na),
            i if i == 2 * na => self.likelihood_term(x),
            i => self.layer_term(x, i - 2 * na),
        }
    }

    fn initial_step(&self, index: usize, x: &[f64]) -> f64 {
        let na = self.n_ages;
        let n = self.log_t.len() as f64;
        let sigma = x[2 * na];
        let level = self.mean_level();
        let lbar = self.log_t.iter().sum::<f64>() / n;
        let sxx: f64 = self.log_t.iter().map(|l| (l - lbar).powi(2)).sum();
        match index {
            i if i < na => (sigma / (level * n.sqrt())).min(x[2 * na + 1]),
            i if i < 2 * na => (sigma / (level * sxx.sqrt())).min(x[2 * na + 2]),
            i if i == 2 * na => sigma / (2.0 * self.data.values().len() as f64).sqrt(),
            i => x[i] / (2.0 * na as f64).sqrt(),
        }
    }
}

pub fn fit_loglog(
    data: &ImprovementSurface,
    time: &TimeIndex,
    config: &McmcConfig,
) -> Result<PosteriorDraws, ModelError> {
    fit_loglog_with_priors(data, time, config, LogLogPriors::default(), DEFAULT_PREFIT_FLOOR)
}

pub fn fit_loglog_with_priors(
    data: &ImprovementSurface,
    time: &TimeIndex,
    config: &McmcConfig,
    priors: LogLogPriors,
    floor: f64,
) -> Result<PosteriorDraws, ModelError> {
    config.validate()?;
    let model = LogLogModel::new(data, time, priors, floor)?;
    let init = model.initial_values().to_vec();
    Ok(run_chains(&model, config, &vec![init; config.n_chains])?)
}

/// ρ̂(x, t) = exp(β1[x] + β2[x]·ln t) per draw; the noise channel adds
/// N(0, σ²) from the run's forecast-noise stream.
pub fn project_loglog(
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
    let log_t: Vec<f64> = horizon_years.iter().map(|&y| time.t(y).ln()).collect();
    let mut rng = substream(draws.config.seed, NOISE_STREAM);
    let n = draws.n_draws() * ages.len() * log_t.len();
    let mut values = Vec::with_capacity(n);
    let mut means = Vec::with_capacity(n);
    for d in 0..draws.n_draws() {
        let x = draws.draw(d);
        for a in 0..ages.len() {
            for &lt in &log_t {
                let m = (x[b1[a]] + x[b2[a]] * lt).exp();
                let z: f64 = rng.sample(StandardNormal);
                means.push(m);
                values.push(m + x[sigma] * z);
            }
        }
    }
    Ok(RhoForecast::new(ages, horizon_years.to_vec(), draws.n_draws(), values, means))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surface_from(ages: Vec<u32>, years: Vec<i32>, f: impl Fn(usize, f64) -> f64) -> ImprovementSurface {
        let mut v = Vec::new();
        for a in 0..ages.len() {
            for j in 0..years.len() {
                v.push(f(a, (j + 1) as f64));
            }
        }
        ImprovementSurface::new(ages, years, v).unwrap()
    }

    #[test]
    fn prefit_exact_power_law() {
        let data = surface_from(vec![50], (1966..1991).collect(), |_, t| (1.0 + 0.5 * t.ln()).exp());
        let p = prefit_loglog(&data, &TimeIndex::for_data(&data), DEFAULT_PREFIT_FLOOR).unwrap();
        assert!((p.theta1[0] - 1.0).abs() < 1e-10);
        assert!((p.theta2[0] - 0.5).abs() < 1e-10);
        assert_eq!(p.n_used[0], 25);
    }

    #[test]
    fn prefit_constant_rate() {
        let data = surface_from(vec![50], (1966..1991).collect(), |_, _| 0.02);
        let p = prefit_loglog(&data, &TimeIndex::for_data(&data), DEFAULT_PREFIT_FLOOR).unwrap();
        assert!((p.theta1[0] - 0.02f64.ln()).abs() < 1e-10);
        assert!(p.theta2[0].abs() < 1e-10);
    }

    #[test]
    fn prefit_drops_nonpositive_and_falls_back() {
        let data = ImprovementSurface::new(
            vec![0, 1],
            vec![1966, 1967, 1968],
            vec![0.02, -0.01, 0.03, -0.01, 0.0, 0.02],
        )
        .unwrap();
        let p = prefit_loglog(&data, &TimeIndex::for_data(&data), 0.001).unwrap();
        assert_eq!(p.n_used, vec![2, 1]);
        assert_eq!(p.excluded, vec![vec![1967], vec![1966, 1967]]);
        assert_eq!(p.theta1[1], 0.001f64.ln());
        assert_eq!(p.theta2[1], 0.0);
        assert!(p.to_csv().starts_with("age,theta1,theta2,n_used\n0,"));
    }

    #[test]
    fn density_single_cell_and_support() {
        let data = ImprovementSurface::new(vec![0], vec![1966], vec![(0.3f64).exp()]).unwrap();
        let time = TimeIndex::new(1966, 1966);
        let prefit = LogLogPrefit {
            ages: vec![0],
            theta1: vec![0.3],
            theta2: vec![0.0],
            n_used: vec![1],
            excluded: vec![vec![]],
        };
        let mut p = LogLogModelParams {
            beta1: vec![0.3],
            beta2: vec![0.7],
            sigma: 0.1,
            sigma1: 0.5,
            sigma2: 0.5,
        };
        let lp = loglog_log_density(&p, &prefit, &data, &time).unwrap();
        let layers = normal_ln(0.3, 0.3, 0.5) + normal_ln(0.7, 0.0, 0.5);
        assert!((lp - layers - (-0.5 * (2.0 * std::f64::consts::PI * 0.01).ln())).abs() < 1e-12);
        p.sigma1 = -0.2;
        assert_eq!(loglog_log_density(&p, &prefit, &data, &time).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn conditional_matches_full_differences() {
        let data = surface_from(vec![0, 1, 2], (1966..1972).collect(), |a, t| {
            0.01 + 0.004 * a as f64 + 0.002 * (t * 1.7).sin()
        });
        let time = TimeIndex::for_data(&data);
        let model = LogLogModel::new(&data, &time, LogLogPriors::default(), DEFAULT_PREFIT_FLOOR).unwrap();
        let x = model.initial_values().to_vec();
        for i in 0..x.len() {
            let mut y = x.clone();
            y[i] += 1e-3;
            let full = model.log_density(&y) - model.log_density(&x);
            let cond = model.conditional_log_density(&y, i) - model.conditional_log_density(&x, i);
            assert!((full - cond).abs() < 1e-8 * full.abs().max(1.0), "param {i}: {full} vs {cond}");
        }
    }

    #[test]
    fn projection_examples() {
        let draws = PosteriorDraws::from_parts(
            ["beta1[0]", "beta1[1]", "beta2[0]", "beta2[1]", "sigma"].map(String::from).to_vec(),
            1,
            1,
            vec![0.03f64.ln(), -3.0, 0.0, 0.1, 0.01],
            McmcConfig::default(),
        );
        // Origin 1944 puts 1990 at t = 47.
        let time = TimeIndex::new(1944, 1989);
        let f = project_loglog(&draws, &time, &[1990, 1991, 1992]).unwrap();
        for s in 0..3 {
            assert!((f.mean_get(0, 0, s) - 0.03).abs() < 1e-15);
        }
        let expected = (-3.0 + 0.1 * 47f64.ln()).exp();
        assert!((f.mean_get(0, 1, 0) - expected).abs() < 1e-15);
        assert!((expected - 0.0732).abs() < 5e-5);
    }
}
