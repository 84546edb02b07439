//! Types shared by both core models: the time index and per-draw forecasts
//! of improvement rates.

use thiserror::Error;

use crate::improvement::ImprovementSurface;
use crate::sampler::{PosteriorDraws, SamplerError};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("data contain a non-finite value")]
    NonFiniteData,
    #[error("parameter vector does not match the data: {0}")]
    DimensionMismatch(String),
    #[error("need at least {need} years of improvement rates per age, have {have}")]
    TooFewYears { need: usize, have: usize },
    #[error("log-log pre-fit is degenerate: {0}")]
    DegenerateRegression(String),
    #[error("forecast years must be contiguous and non-empty")]
    NonContiguousHorizon,
    #[error("forecast year {year} is not after the base period ending {base_end}")]
    HorizonBeforeBase { year: i32, base_end: i32 },
    #[error("draws lack parameter `{0}`")]
    MissingParameter(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Maps calendar years to model time: t = year − origin_year + 1.
///
/// The origin is the first year of improvement data, so base-period years
/// run 1..=n and the first forecast year is n + 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeIndex {
    pub origin_year: i32,
    /// Last year of the base period; forecasts must start after it.
    pub base_end: i32,
}

impl TimeIndex {
    pub fn new(origin_year: i32, base_end: i32) -> Self {
        Self {
            origin_year,
            base_end,
        }
    }

    pub fn for_data(data: &ImprovementSurface) -> Self {
        Self::new(data.years()[0], *data.years().last().unwrap())
    }

    pub fn t(&self, year: i32) -> f64 {
        (year - self.origin_year + 1) as f64
    }

    pub fn check_horizon(&self, years: &[i32]) -> Result<(), ModelError> {
        if years.is_empty() || years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(ModelError::NonContiguousHorizon);
        }
        if years[0] <= self.base_end {
            return Err(ModelError::HorizonBeforeBase {
                year: years[0],
                base_end: self.base_end,
            });
        }
        Ok(())
    }

    pub(crate) fn check_data(&self, data: &ImprovementSurface) -> Result<(), ModelError> {
        if self.t(data.years()[0]) < 1.0 {
            return Err(ModelError::DimensionMismatch(format!(
                "data start {} before time origin {}",
                data.years()[0],
                self.origin_year
            )));
        }
        Ok(())
    }
}

/// Forecast ρ for every pooled posterior draw, age and horizon year, with
/// forecast noise (`values`) and without it (`mean`).
#[derive(Debug, Clone, PartialEq)]
pub struct RhoForecast {
    ages: Vec<u32>,
    years: Vec<i32>,
    n_draws: usize,
    values: Vec<f64>,
    mean: Vec<f64>,
}

impl RhoForecast {
    pub fn new(
        ages: Vec<u32>,
        years: Vec<i32>,
        n_draws: usize,
        values: Vec<f64>,
        mean: Vec<f64>,
    ) -> Self {
        let n = n_draws * ages.len() * years.len();
        assert_eq!(values.len(), n, "noise channel has wrong size");
        assert_eq!(mean.len(), n, "mean channel has wrong size");
        Self {
            ages,
            years,
            n_draws,
            values,
            mean,
        }
    }

    /// Same value in both channels everywhere; handy for tests and examples.
    pub fn constant(ages: Vec<u32>, years: Vec<i32>, n_draws: usize, rho: f64) -> Self {
        let n = n_draws * ages.len() * years.len();
        Self::new(ages, years, n_draws, vec![rho; n], vec![rho; n])
    }

    pub fn ages(&self) -> &[u32] {
        &self.ages
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn horizon(&self) -> usize {
        self.years.len()
    }

    pub fn index(&self, draw: usize, age: usize, step: usize) -> usize {
        (draw * self.ages.len() + age) * self.years.len() + step
    }

    pub fn get(&self, draw: usize, age: usize, step: usize) -> f64 {
        self.values[self.index(draw, age, step)]
    }

    pub fn mean_get(&self, draw: usize, age: usize, step: usize) -> f64 {
        self.mean[self.index(draw, age, step)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub(crate) fn channels_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.mean)
    }

    /// Forecast for one draw: the `(age, step)` block of the noise channel.
    pub fn draw_block(&self, draw: usize) -> &[f64] {
        let n = self.ages.len() * self.years.len();
        &self.values[draw * n..(draw + 1) * n]
    }

    /// Noise-channel values of one `(age, step)` cell across all draws.
    pub fn cell(&self, age: usize, step: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.get(d, age, step)).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_draws == other.n_draws && self.ages == other.ages && self.years == other.years
    }
}

/// Finds the per-age block `prefix[age]` in the draws' parameter names.
pub(crate) fn age_block(draws: &PosteriorDraws, prefix: &str) -> Result<(Vec<u32>, Vec<usize>), ModelError> {
    let open = format!("{prefix}[");
    let mut ages = Vec::new();
    let mut idx = Vec::new();
    for (i, name) in draws.parameter_names().iter().enumerate() {
        if let Some(rest) = name.strip_prefix(&open) {
            if let Some(age) = rest.strip_suffix(']').and_then(|a| a.parse::<u32>().ok()) {
                ages.push(age);
                idx.push(i);
            }
        }
    }
    if ages.is_empty() {
        return Err(ModelError::MissingParameter(format!("{prefix}[*]")));
    }
    Ok((ages, idx))
}

pub(crate) fn param_index(draws: &PosteriorDraws, name: &str) -> Result<usize, ModelError> {
    draws
        .index_of(name)
        .map_err(|_| ModelError::MissingParameter(name.to_string()))
}

/// Ordinary least squares of `y` on `x`; returns `(intercept, slope)`.
pub(crate) fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let xbar = x.iter().sum::<f64>() / n;
    let ybar = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xbar) * (b - ybar)).sum();
    let slope = sxy / sxx;
    Some((ybar - slope * xbar, slope))
}
