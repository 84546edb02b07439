//! From forecast improvement rates to death-rate and life-expectancy fans.
//!
//! The default route takes quantiles of ρ first and then propagates each
//! quantile path from the jump-off rates with m[y] = m[y−1]·(1 − ρ[y]).
//! A higher ρ quantile therefore gives lower death rates and a higher e0,
//! so the e0 value at level p is the p-quantile of e0. Propagating each
//! draw and taking quantiles afterwards is available as
//! [`propagate_draws`] + [`quantiles_of_paths`].

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::lifetable::{life_expectancy_at_birth, LifeTableError};
use crate::projection::RhoForecast;
use crate::sampler::{check_probabilities, empirical_quantiles, SamplerError};

/// Levels covering the 50, 67, 80 and 95% central intervals plus the median.
pub const DEFAULT_LEVELS: [f64; 9] = [0.025, 0.10, 0.165, 0.25, 0.5, 0.75, 0.835, 0.90, 0.975];

#[derive(Debug, Error, PartialEq)]
pub enum FanError {
    #[error("improvement rate {rho} ≥ 1 at age {age}, year {year} would make the death rate nonpositive")]
    RhoGeqOne { age: u32, year: i32, rho: f64 },
    #[error("{got} jump-off rates for {expected} ages")]
    JumpoffLength { expected: usize, got: usize },
    #[error("jump-off rate at age {age} is not positive: {value}")]
    BadJumpoff { age: u32, value: f64 },
    #[error("life expectancy needs ages 0, 1, 2, … without gaps")]
    AgesNotFromZero,
    #[error("forecast and observed years differ")]
    YearMismatch,
    #[error(transparent)]
    Quantile(#[from] SamplerError),
    #[error(transparent)]
    LifeTable(#[from] LifeTableError),
}

/// How one step of improvement acts on a death rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Propagation {
    /// m·(1 − ρ).
    #[default]
    Literal,
    /// m·exp(−ρ), consistent with the log-ratio definition of ρ.
    ExactLog,
}

impl Propagation {
    pub fn step(self, m: f64, rho: f64) -> f64 {
        match self {
            Propagation::Literal => m * (1.0 - rho),
            Propagation::ExactLog => m * (-rho).exp(),
        }
    }
}

/// Which channel of a [`RhoForecast`] to summarise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Channel {
    /// Parameter uncertainty plus forecast noise.
    #[default]
    WithNoise,
    /// Parameter uncertainty only.
    Mean,
}

/// Values indexed `(level, age, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFan {
    pub levels: Vec<f64>,
    pub ages: Vec<u32>,
    pub years: Vec<i32>,
    values: Vec<f64>,
}

impl QuantileFan {
    pub fn new(levels: Vec<f64>, ages: Vec<u32>, years: Vec<i32>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), levels.len() * ages.len() * years.len());
        Self {
            levels,
            ages,
            years,
            values,
        }
    }

    fn index(&self, level: usize, age: usize, step: usize) -> usize {
        (level * self.ages.len() + age) * self.years.len() + step
    }

    pub fn get(&self, level: usize, age: usize, step: usize) -> f64 {
        self.values[self.index(level, age, step)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rates of every age for one level and step.
    pub fn age_profile(&self, level: usize, step: usize) -> Vec<f64> {
        (0..self.ages.len()).map(|a| self.get(level, a, step)).collect()
    }

    /// CSV with header `quantile,age,year,<value_name>`.
    pub fn to_csv(&self, value_name: &str) -> String {
        let mut out = format!("quantile,age,year,{value_name}\n");
        for (k, q) in self.levels.iter().enumerate() {
            for (a, age) in self.ages.iter().enumerate() {
                for (s, year) in self.years.iter().enumerate() {
                    let _ = writeln!(out, "{q},{age},{year},{}", self.get(k, a, s));
                }
            }
        }
        out
    }
}

/// Pointwise quantiles of ρ across draws for every `(age, step)`.
pub fn rho_fan(forecast: &RhoForecast, levels: &[f64], channel: Channel) -> Result<QuantileFan, FanError> {
    check_probabilities(levels)?;
    let (na, h) = (forecast.n_ages(), forecast.horizon());
    let source = match channel {
        Channel::WithNoise => forecast.values(),
        Channel::Mean => forecast.mean(),
    };
    let cells: Vec<Vec<f64>> = (0..na * h)
        .into_par_iter()
        .map(|c| {
            let (a, s) = (c / h, c % h);
            let col: Vec<f64> = (0..forecast.n_draws())
                .map(|d| source[forecast.index(d, a, s)])
                .collect();
            empirical_quantiles(&col, levels)
        })
        .collect();
    let mut values = vec![0.0; levels.len() * na * h];
    for (c, qs) in cells.iter().enumerate() {
        for (k, v) in qs.iter().enumerate() {
            values[k * na * h + c] = *v;
        }
    }
    Ok(QuantileFan::new(
        levels.to_vec(),
        forecast.ages().to_vec(),
        forecast.years().to_vec(),
        values,
    ))
}

fn check_jumpoff(jumpoff: &[f64], ages: &[u32]) -> Result<(), FanError> {
    if jumpoff.len() != ages.len() {
        return Err(FanError::JumpoffLength {
            expected: ages.len(),
            got: jumpoff.len(),
        });
    }
    if let Some(a) = jumpoff.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(FanError::BadJumpoff {
            age: ages[a],
            value: jumpoff[a],
        });
    }
    Ok(())
}

fn propagate_path(
    m0: f64,
    rho: impl Iterator<Item = f64>,
    mode: Propagation,
    age: u32,
    years: &[i32],
    out: &mut Vec<f64>,
) -> Result<(), FanError> {
    let mut m = m0;
    for (s, r) in rho.enumerate() {
        if mode == Propagation::Literal && r >= 1.0 {
            return Err(FanError::RhoGeqOne {
                age,
                year: years[s],
                rho: r,
            });
        }
        m = mode.step(m, r);
        out.push(m);
    }
    Ok(())
}

/// Propagates each ρ quantile path from the jump-off death rates.
pub fn propagate_quantiles(jumpoff: &[f64], rho: &QuantileFan, mode: Propagation) -> Result<QuantileFan, FanError> {
    check_jumpoff(jumpoff, &rho.ages)?;
    let h = rho.years.len();
    let mut values = Vec::with_capacity(rho.values.len());
    for k in 0..rho.levels.len() {
        for (a, &age) in rho.ages.iter().enumerate() {
            propagate_path(jumpoff[a], (0..h).map(|s| rho.get(k, a, s)), mode, age, &rho.years, &mut values)?;
        }
    }
    Ok(QuantileFan::new(rho.levels.clone(), rho.ages.clone(), rho.years.clone(), values))
}

/// Death-rate trajectories, one per draw, indexed `(draw, age, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawPaths {
    pub ages: Vec<u32>,
    pub years: Vec<i32>,
    pub n_draws: usize,
    pub values: Vec<f64>,
}

impl DrawPaths {
    pub fn get(&self, draw: usize, age: usize, step: usize) -> f64 {
        self.values[(draw * self.ages.len() + age) * self.years.len() + step]
    }

    pub fn age_profile(&self, draw: usize, step: usize) -> Vec<f64> {
        (0..self.ages.len()).map(|a| self.get(draw, a, step)).collect()
    }
}

/// Propagates every draw's ρ path from the jump-off rates.
pub fn propagate_draws(
    jumpoff: &[f64],
    forecast: &RhoForecast,
    channel: Channel,
    mode: Propagation,
) -> Result<DrawPaths, FanError> {
    check_jumpoff(jumpoff, forecast.ages())?;
    let h = forecast.horizon();
    let source = match channel {
        Channel::WithNoise => forecast.values(),
        Channel::Mean => forecast.mean(),
    };
    let mut values = Vec::with_capacity(source.len());
    for d in 0..forecast.n_draws() {
        for (a, &age) in forecast.ages().iter().enumerate() {
            let start = forecast.index(d, a, 0);
            propagate_path(
                jumpoff[a],
                source[start..start + h].iter().copied(),
                mode,
                age,
                forecast.years(),
                &mut values,
            )?;
        }
    }
    Ok(DrawPaths {
        ages: forecast.ages().to_vec(),
        years: forecast.years().to_vec(),
        n_draws: forecast.n_draws(),
        values,
    })
}

/// Pointwise quantiles of death-rate trajectories. Levels are reversed so
/// that, as with [`propagate_quantiles`], level p holds the (1 − p) quantile
/// of m — the one matching the p quantile of ρ.
pub fn quantiles_of_paths(paths: &DrawPaths, levels: &[f64]) -> Result<QuantileFan, FanError> {
    check_probabilities(levels)?;
    let (na, h) = (paths.ages.len(), paths.years.len());
    let flipped: Vec<f64> = levels.iter().map(|p| 1.0 - p).collect();
    let mut values = vec![0.0; levels.len() * na * h];
    for a in 0..na {
        for s in 0..h {
            let col: Vec<f64> = (0..paths.n_draws).map(|d| paths.get(d, a, s)).collect();
            for (k, v) in empirical_quantiles(&col, &flipped).into_iter().enumerate() {
                values[(k * na + a) * h + s] = v;
            }
        }
    }
    Ok(QuantileFan::new(levels.to_vec(), paths.ages.clone(), paths.years.clone(), values))
}

/// e0 indexed `(level, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct E0Fan {
    pub levels: Vec<f64>,
    pub years: Vec<i32>,
    values: Vec<f64>,
}

impl E0Fan {
    pub fn new(levels: Vec<f64>, years: Vec<i32>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), levels.len() * years.len());
        Self { levels, years, values }
    }

    pub fn get(&self, level: usize, step: usize) -> f64 {
        self.values[level * self.years.len() + step]
    }

    pub fn series(&self, level: usize) -> &[f64] {
        let h = self.years.len();
        &self.values[level * h..(level + 1) * h]
    }

    pub fn level_index(&self, p: f64) -> Option<usize> {
        self.levels.iter().position(|&l| (l - p).abs() < 1e-12)
    }

    /// Width of the central interval with coverage `coverage` at each step,
    /// if both bounding levels are in the fan.
    pub fn interval_width(&self, coverage: f64) -> Option<Vec<f64>> {
        let lo = self.level_index((1.0 - coverage) / 2.0)?;
        let hi = self.level_index((1.0 + coverage) / 2.0)?;
        Some((0..self.years.len()).map(|s| self.get(hi, s) - self.get(lo, s)).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantile,year,e0\n");
        for (k, q) in self.levels.iter().enumerate() {
            for (s, year) in self.years.iter().enumerate() {
                let _ = writeln!(out, "{q},{year},{}", self.get(k, s));
            }
        }
        out
    }
}

fn check_ages_from_zero(ages: &[u32]) -> Result<(), FanError> {
    if ages.iter().enumerate().any(|(i, &a)| a as usize != i) {
        return Err(FanError::AgesNotFromZero);
    }
    Ok(())
}

/// Life expectancy at birth for every level and year of a death-rate fan.
pub fn e0_fan(m_fan: &QuantileFan) -> Result<E0Fan, FanError> {
    check_ages_from_zero(&m_fan.ages)?;
    let h = m_fan.years.len();
    let values = (0..m_fan.levels.len() * h)
        .map(|c| Ok(life_expectancy_at_birth(&m_fan.age_profile(c / h, c % h))?))
        .collect::<Result<Vec<f64>, FanError>>()?;
    Ok(E0Fan::new(m_fan.levels.clone(), m_fan.years.clone(), values))
}

/// e0 per draw and step, indexed `(draw, step)`.
pub fn e0_of_paths(paths: &DrawPaths) -> Result<Vec<f64>, FanError> {
    check_ages_from_zero(&paths.ages)?;
    let h = paths.years.len();
    (0..paths.n_draws * h)
        .into_par_iter()
        .map(|c| Ok(life_expectancy_at_birth(&paths.age_profile(c / h, c % h))?))
        .collect()
}

/// Everything a forecast run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastFan {
    pub quantile_levels: Vec<f64>,
    pub m_fan: QuantileFan,
    pub e0_fan: E0Fan,
    pub jumpoff_year: i32,
    /// The configuration that produced the fan, as written to the manifest.
    pub provenance: String,
}

/// E_t = e0 forecast − e0 observed, year by year.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastError {
    pub years: Vec<i32>,
    pub errors: Vec<f64>,
    pub mean_absolute: f64,
    pub max_absolute: f64,
}

impl ForecastError {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("year,E_t\n");
        for (y, e) in self.years.iter().zip(&self.errors) {
            let _ = writeln!(out, "{y},{e}");
        }
        out
    }
}

pub fn forecast_error(
    years: &[i32],
    e0_forecast: &[f64],
    observed_years: &[i32],
    e0_observed: &[f64],
) -> Result<ForecastError, FanError> {
    if years != observed_years || years.len() != e0_forecast.len() || years.len() != e0_observed.len() || years.is_empty()
    {
        return Err(FanError::YearMismatch);
    }
    let errors: Vec<f64> = e0_forecast.iter().zip(e0_observed).map(|(f, o)| f - o).collect();
    let mean_absolute = errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64;
    let max_absolute = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    Ok(ForecastError {
        years: years.to_vec(),
        errors,
        mean_absolute,
        max_absolute,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_level(rho: Vec<f64>) -> QuantileFan {
        let years = (1991..1991 + rho.len() as i32).collect();
        QuantileFan::new(vec![0.5], vec![60], years, rho)
    }

    #[test]
    fn one_step_plug_in() {
        let m = propagate_quantiles(&[0.01], &single_level(vec![0.02]), Propagation::Literal).unwrap();
        assert!((m.get(0, 0, 0) - 0.0098).abs() < 1e-16);
    }

    #[test]
    fn zero_rho_keeps_rates() {
        let m = propagate_quantiles(&[0.01], &single_level(vec![0.0; 10]), Propagation::Literal).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.01));
    }

    #[test]
    fn geometric_product() {
        let m = propagate_quantiles(&[0.04], &single_level(vec![0.035; 20]), Propagation::Literal).unwrap();
        assert!((m.get(0, 0, 19) - 0.04 * 0.965f64.powi(20)).abs() < 1e-15);
        assert!((m.get(0, 0, 19) - 0.019616).abs() < 1e-6);
    }

    #[test]
    fn exact_log_mode() {
        let m = propagate_quantiles(&[0.01], &single_level(vec![0.02]), Propagation::ExactLog).unwrap();
        assert!((m.get(0, 0, 0) - 0.01 * (-0.02f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn rho_of_one_is_rejected() {
        assert!(matches!(
            propagate_quantiles(&[0.01], &single_level(vec![0.1, 1.0]), Propagation::Literal),
            Err(FanError::RhoGeqOne { year: 1992, .. })
        ));
    }

    #[test]
    fn forecast_error_examples() {
        let e = forecast_error(&[2000], &[81.0], &[2000], &[80.5]).unwrap();
        assert!((e.errors[0] - 0.5).abs() < 1e-12);
        let e = forecast_error(&[1, 2, 3], &[0.1, -0.2, 0.3], &[1, 2, 3], &[0.0; 3]).unwrap();
        assert!((e.mean_absolute - 0.2).abs() < 1e-15);
        assert_eq!(e.max_absolute, 0.3);
        assert_eq!(forecast_error(&[1], &[0.0], &[2], &[0.0]).unwrap_err(), FanError::YearMismatch);
        assert!(e.to_csv().starts_with("year,E_t\n1,0.1\n"));
    }

    #[test]
    fn fan_from_draws() {
        let vals: Vec<f64> = (0..101).map(|d| d as f64 / 100.0 * 0.02).collect();
        let f = RhoForecast::new(vec![0], vec![1991], 101, vals.clone(), vals);
        let fan = rho_fan(&f, &[0.25, 0.5], Channel::WithNoise).unwrap();
        assert!((fan.get(0, 0, 0) - 0.005).abs() < 1e-15);
        assert!((fan.get(1, 0, 0) - 0.01).abs() < 1e-15);
        assert!(rho_fan(&f, &[0.0], Channel::Mean).is_err());
    }
}
