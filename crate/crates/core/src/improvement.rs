//! Rates of mortality improvement, ρ(x, y) = −ln(m(x, y) / m(x, y − 1)).
//!
//! Positive values mean mortality fell between consecutive years. An
//! optional smoothing pass works on each age row of log-rates with a
//! second-order difference penalty before the ratios are taken.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::surface::{check_axis, write_grid_csv, MortalitySurface, SurfaceError};

pub const DEFAULT_SMOOTHING_LAMBDA: f64 = 1e2;

#[derive(Debug, Error, PartialEq)]
pub enum ImprovementError {
    #[error("rate at age {age}, year {year} is not positive")]
    NonpositiveRate { age: u32, year: i32 },
    #[error("need at least {need} years per age row, have {have}")]
    TooFewYears { need: usize, have: usize },
    #[error("smoothing parameter must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("heatmap breaks must be strictly increasing")]
    UnsortedBreaks,
    #[error("improvement value at age {age}, year {year} is not finite")]
    NonFinite { age: u32, year: i32 },
    #[error("linear system for smoothing could not be factorised")]
    Factorisation,
    #[error(transparent)]
    Surface(#[from] SurfaceError),
}

/// ρ on an age × year grid; `years` starts one year after the source
/// surface's first year.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementSurface {
    ages: Vec<u32>,
    years: Vec<i32>,
    rho: Vec<f64>,
    pub smoothed_input: bool,
}

impl ImprovementSurface {
    pub fn new(ages: Vec<u32>, years: Vec<i32>, rho: Vec<f64>) -> Result<Self, ImprovementError> {
        check_axis(&ages, "ages")?;
        check_axis(&years, "years")?;
        let expected = ages.len() * years.len();
        if rho.len() != expected {
            return Err(SurfaceError::DimensionMismatch {
                expected,
                got: rho.len(),
            }
            .into());
        }
        if let Some(i) = rho.iter().position(|v| !v.is_finite()) {
            return Err(ImprovementError::NonFinite {
                age: ages[i / years.len()],
                year: years[i % years.len()],
            });
        }
        Ok(Self {
            ages,
            years,
            rho,
            smoothed_input: false,
        })
    }

    pub fn ages(&self) -> &[u32] {
        &self.ages
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn get(&self, age_idx: usize, year_idx: usize) -> f64 {
        self.rho[age_idx * self.years.len() + year_idx]
    }

    pub fn row(&self, age_idx: usize) -> &[f64] {
        let n = self.years.len();
        &self.rho[age_idx * n..(age_idx + 1) * n]
    }

    /// Canonical `age,year,value` CSV.
    pub fn to_csv(&self) -> String {
        write_grid_csv(&self.ages, &self.years, &self.rho)
    }

    /// Rebuilds death rates from a starting column by chaining
    /// m(x, y) = m(x, y − 1)·e^(−ρ(x, y)).
    pub fn reconstruct(&self, first_year_rates: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_ages())
            .map(|a| {
                let mut m = first_year_rates[a];
                let mut path = vec![m];
                for &r in self.row(a) {
                    m *= (-r).exp();
                    path.push(m);
                }
                path
            })
            .collect()
    }

    /// `age,year,value,bin` rows; `bin` is 0 below the first break, `i` for
    /// `[breaks[i-1], breaks[i])` and `breaks.len()` at or above the last.
    pub fn to_heatmap_csv(&self, breaks: &[f64]) -> Result<String, ImprovementError> {
        if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| b.is_nan()) {
            return Err(ImprovementError::UnsortedBreaks);
        }
        let mut out = String::from("age,year,value,bin\n");
        for (a, age) in self.ages.iter().enumerate() {
            for (y, year) in self.years.iter().enumerate() {
                let v = self.get(a, y);
                out.push_str(&format!("{age},{year},{v},{}\n", heatmap_bin(v, breaks)));
            }
        }
        Ok(out)
    }
}

/// Index of the half-open break interval containing `value`.
pub fn heatmap_bin(value: f64, breaks: &[f64]) -> usize {
    breaks.partition_point(|&b| b <= value)
}

/// ρ(x, y) for every age and every year after the first.
pub fn improvement_rates(surface: &MortalitySurface) -> Result<ImprovementSurface, ImprovementError> {
    let ny = surface.n_years();
    if ny < 2 {
        return Err(ImprovementError::TooFewYears { need: 2, have: ny });
    }
    let mut rho = Vec::with_capacity(surface.n_ages() * (ny - 1));
    for a in 0..surface.n_ages() {
        let row = surface.row(a);
        for y in 0..ny {
            if row[y] <= 0.0 {
                return Err(ImprovementError::NonpositiveRate {
                    age: surface.ages()[a],
                    year: surface.years()[y],
                });
            }
        }
        rho.extend(row.windows(2).map(|w| -(w[1] / w[0]).ln()));
    }
    let mut out = ImprovementSurface::new(
        surface.ages().to_vec(),
        surface.years()[1..].to_vec(),
        rho,
    )?;
    out.smoothed_input = surface.provenance.smoothing_lambda.is_some();
    Ok(out)
}

/// Whittaker smoother: minimiser of Σ(z − ẑ)² + λ Σ(Δ²ẑ)².
pub fn whittaker(z: &[f64], lambda: f64) -> Result<Vec<f64>, ImprovementError> {
    let n = z.len();
    if n < 3 {
        return Ok(z.to_vec());
    }
    // I + λ DᵀD with D the (n-2)×n second-difference operator.
    let mut a = DMatrix::<f64>::identity(n, n);
    for r in 0..n - 2 {
        let coef = [1.0, -2.0, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                a[(r + i, r + j)] += lambda * coef[i] * coef[j];
            }
        }
    }
    let chol = a.cholesky().ok_or(ImprovementError::Factorisation)?;
    Ok(chol.solve(&DVector::from_column_slice(z)).iter().copied().collect())
}

/// Smooths log-rates independently along each age row.
pub fn smooth_surface(surface: &MortalitySurface, lambda: f64) -> Result<MortalitySurface, ImprovementError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ImprovementError::BadLambda(lambda));
    }
    if surface.n_years() < 5 {
        return Err(ImprovementError::TooFewYears {
            need: 5,
            have: surface.n_years(),
        });
    }
    let mut rates = Vec::with_capacity(surface.rates().len());
    for a in 0..surface.n_ages() {
        let row = surface.row(a);
        if let Some(y) = row.iter().position(|&m| m <= 0.0) {
            return Err(ImprovementError::NonpositiveRate {
                age: surface.ages()[a],
                year: surface.years()[y],
            });
        }
        let logs: Vec<f64> = row.iter().map(|m| m.ln()).collect();
        rates.extend(whittaker(&logs, lambda)?.into_iter().map(f64::exp));
    }
    let mut out = surface.with_rates(rates);
    out.provenance.smoothing_lambda = Some(lambda);
    Ok(out)
}
