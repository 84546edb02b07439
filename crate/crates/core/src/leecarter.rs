//! Lee-Carter baseline: ln m(x, t) = a(x) + b(x)·k(t), with k extrapolated
//! as a random walk with drift.
//!
//! Identification: Σb = 1 and Σk = 0. Forecasts are anchored at the
//! observed jump-off rates, m(x, T + h) = m(x, T)·exp(b(x)·(k(T + h) − k(T))),
//! so the first forecast year connects to the data without a jump.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::fan::{e0_fan, FanError, ForecastFan, QuantileFan};
use crate::sampler::{check_probabilities, SamplerError};
use crate::surface::MortalitySurface;

#[derive(Debug, Error, PartialEq)]
pub enum LeeCarterError {
    #[error("death rate at age {age}, year {year} is not positive")]
    NonpositiveRate { age: u32, year: i32 },
    #[error("need at least 3 years to estimate drift and its error, have {0}")]
    TooFewYears(usize),
    #[error("log-rate matrix has no variation over time")]
    Degenerate,
    #[error("forecast years must be contiguous and start after {0}")]
    BadHorizon(i32),
    #[error("{got} jump-off rates for {expected} ages")]
    JumpoffLength { expected: usize, got: usize },
    #[error(transparent)]
    Levels(#[from] SamplerError),
    #[error(transparent)]
    Fan(#[from] FanError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeeCarterFit {
    pub ages: Vec<u32>,
    pub years: Vec<i32>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub k: Vec<f64>,
    /// Mean annual change of k.
    pub drift: f64,
    /// Standard error of the drift estimate.
    pub drift_se: f64,
    /// Standard deviation of the random-walk innovations.
    pub sigma_rw: f64,
}

impl LeeCarterFit {
    /// Fitted log rate at age index `x`, year index `t`.
    pub fn log_rate(&self, x: usize, t: usize) -> f64 {
        self.a[x] + self.b[x] * self.k[t]
    }

    pub fn last_year(&self) -> i32 {
        *self.years.last().unwrap()
    }
}

pub fn fit_leecarter(surface: &MortalitySurface) -> Result<LeeCarterFit, LeeCarterError> {
    let (na, ny) = (surface.n_ages(), surface.n_years());
    if ny < 3 {
        return Err(LeeCarterError::TooFewYears(ny));
    }
    let mut log_m = DMatrix::<f64>::zeros(na, ny);
    for x in 0..na {
        for t in 0..ny {
            let m = surface.rates()[x * ny + t];
            if !(m > 0.0) {
                return Err(LeeCarterError::NonpositiveRate {
                    age: surface.ages()[x],
                    year: surface.years()[t],
                });
            }
            log_m[(x, t)] = m.ln();
        }
    }
    let mut a: Vec<f64> = (0..na).map(|x| log_m.row(x).mean()).collect();
    let mut z = log_m;
    for x in 0..na {
        for t in 0..ny {
            z[(x, t)] -= a[x];
        }
    }
    let svd = z.svd(true, true);
    let (i, &s1) = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|p, q| p.1.total_cmp(q.1))
        .ok_or(LeeCarterError::Degenerate)?;
    let u = svd.u.as_ref().unwrap().column(i).into_owned();
    let v = svd.v_t.as_ref().unwrap().row(i).transpose();
    let sum_u: f64 = u.iter().sum();
    if !(s1 > 0.0) || sum_u.abs() < 1e-300 {
        return Err(LeeCarterError::Degenerate);
    }
    let b: Vec<f64> = u.iter().map(|v| v / sum_u).collect();
    let mut k: Vec<f64> = v.iter().map(|v| v * s1 * sum_u).collect();
    // Rows of z are centred, so k already sums to ~0; make it exact.
    let k_bar = k.iter().sum::<f64>() / ny as f64;
    for kt in &mut k {
        *kt -= k_bar;
    }
    for x in 0..na {
        a[x] += b[x] * k_bar;
    }

    let n_steps = (ny - 1) as f64;
    let drift = (k[ny - 1] - k[0]) / n_steps;
    let ss: f64 = k.windows(2).map(|w| (w[1] - w[0] - drift).powi(2)).sum();
    let sigma_rw = (ss / (ny - 2) as f64).sqrt();
    Ok(LeeCarterFit {
        ages: surface.ages().to_vec(),
        years: surface.years().to_vec(),
        a,
        b,
        k,
        drift,
        drift_se: sigma_rw / n_steps.sqrt(),
        sigma_rw,
    })
}

/// The p quantile of k(T + h): k(T) + h·drift + z_p·√(h·σ² + h²·se²).
pub fn k_quantile(fit: &LeeCarterFit, h: usize, p: f64) -> f64 {
    let h = h as f64;
    let z = Normal::standard().inverse_cdf(p);
    let var = h * fit.sigma_rw.powi(2) + h * h * fit.drift_se.powi(2);
    fit.k.last().unwrap() + h * fit.drift + z * var.sqrt()
}

/// Death-rate and e0 fan. Level p uses the (1 − p) quantile of k, so as
/// in the main pipeline higher levels carry lower death rates.
pub fn forecast_leecarter(
    fit: &LeeCarterFit,
    jumpoff: &[f64],
    horizon_years: &[i32],
    levels: &[f64],
) -> Result<ForecastFan, LeeCarterError> {
    check_probabilities(levels)?;
    let last = fit.last_year();
    if horizon_years.is_empty()
        || horizon_years[0] <= last
        || horizon_years.windows(2).any(|w| w[1] != w[0] + 1)
    {
        return Err(LeeCarterError::BadHorizon(last));
    }
    if jumpoff.len() != fit.ages.len() {
        return Err(LeeCarterError::JumpoffLength {
            expected: fit.ages.len(),
            got: jumpoff.len(),
        });
    }
    let k_t = *fit.k.last().unwrap();
    let mut values = Vec::with_capacity(levels.len() * fit.ages.len() * horizon_years.len());
    for &p in levels {
        let ks: Vec<f64> = horizon_years
            .iter()
            .map(|&y| k_quantile(fit, (y - last) as usize, 1.0 - p))
            .collect();
        for (x, &m0) in jumpoff.iter().enumerate() {
            values.extend(ks.iter().map(|k| m0 * (fit.b[x] * (k - k_t)).exp()));
        }
    }
    let m_fan = QuantileFan::new(levels.to_vec(), fit.ages.clone(), horizon_years.to_vec(), values);
    let e0 = e0_fan(&m_fan)?;
    Ok(ForecastFan {
        quantile_levels: levels.to_vec(),
        m_fan,
        e0_fan: e0,
        jumpoff_year: last,
        provenance: String::from("lee-carter"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::Sex;

    fn synthetic(a: &[f64], b: &[f64], k: &[f64]) -> MortalitySurface {
        let mut rates = Vec::new();
        for x in 0..a.len() {
            for t in 0..k.len() {
                rates.push((a[x] + b[x] * k[t]).exp());
            }
        }
        MortalitySurface::new(
            (0..a.len() as u32).collect(),
            (1960..1960 + k.len() as i32).collect(),
            rates,
            Sex::Female,
            "synthetic",
        )
        .unwrap()
    }

    #[test]
    fn recovers_exact_rank_one() {
        let a = [-6.0, -5.0, -4.2, -3.1];
        let b = [0.4, 0.3, 0.2, 0.1];
        let k = [3.0, 2.0, 0.5, -0.5, -1.5, -3.5];
        let fit = fit_leecarter(&synthetic(&a, &b, &k)).unwrap();
        for x in 0..4 {
            assert!((fit.a[x] - a[x]).abs() < 1e-8);
            assert!((fit.b[x] - b[x]).abs() < 1e-8);
        }
        for t in 0..6 {
            assert!((fit.k[t] - k[t]).abs() < 1e-8);
        }
        assert!((fit.b.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(fit.k.iter().sum::<f64>().abs() < 1e-10);
        assert!((fit.drift - (-6.5 / 5.0)).abs() < 1e-8);
    }

    #[test]
    fn flat_drift_keeps_jumpoff() {
        let a = [-6.0, -4.0];
        let b = [0.5, 0.5];
        let k = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
        let mut fit = fit_leecarter(&synthetic(&a, &b, &k)).unwrap();
        fit.drift = 0.0;
        fit.sigma_rw = 0.0;
        fit.drift_se = 0.0;
        let fan = forecast_leecarter(&fit, &[0.01, 0.02], &[1967, 1968], &[0.1, 0.5, 0.9]).unwrap();
        assert!(fan.m_fan.values().chunks(2).all(|c| c[0] == c[1]));
        assert_eq!(fan.m_fan.get(1, 1, 1), 0.02);
    }

    #[test]
    fn median_path_closed_form() {
        let a = [-6.0, -4.0, -2.0];
        let b = [0.5, 0.3, 0.2];
        let k = [2.0, 1.2, 0.9, -0.3, -1.1, -2.7];
        let fit = fit_leecarter(&synthetic(&a, &b, &k)).unwrap();
        let jump = [0.001, 0.01, 0.1];
        let fan = forecast_leecarter(&fit, &jump, &[1966, 1967, 1968], &[0.5]).unwrap();
        for x in 0..3 {
            for h in 1..=3 {
                let expected = jump[x] * (fit.b[x] * fit.drift * h as f64).exp();
                assert!((fan.m_fan.get(0, x, h - 1) - expected).abs() < 1e-15 * expected.max(1.0) * 10.0);
            }
        }
        assert!(matches!(
            forecast_leecarter(&fit, &jump, &[1965], &[0.5]),
            Err(LeeCarterError::BadHorizon(1965))
        ));
    }

    #[test]
    fn rejects_zero_rates() {
        let s = MortalitySurface::new(vec![0], vec![1, 2, 3], vec![0.1, 0.0, 0.1], Sex::Male, "x").unwrap();
        assert!(matches!(fit_leecarter(&s), Err(LeeCarterError::NonpositiveRate { year: 2, .. })));
    }
}
