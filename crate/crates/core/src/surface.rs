//! Age × year grids of death rates and the canonical `age,year,value` CSV
//! format shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Which sex column of an HMD table a surface was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sex {
    Female,
    Male,
    Total,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Total => "total",
        })
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "females" | "f" => Ok(Sex::Female),
            "male" | "males" | "m" => Ok(Sex::Male),
            "total" | "t" | "both" => Ok(Sex::Total),
            other => Err(format!("unknown sex `{other}`")),
        }
    }
}

/// Record of every transformation applied to a surface after it was read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    /// Cells whose value was imputed by a fill policy, as `(age, year)`.
    pub filled_cells: Vec<(u32, i32)>,
    /// Smoothing parameter when the log-rates were passed through the
    /// per-age difference-penalty smoother.
    pub smoothing_lambda: Option<f64>,
}

impl Provenance {
    pub fn is_pristine(&self) -> bool {
        self.filled_cells.is_empty() && self.smoothing_lambda.is_none()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SurfaceError {
    #[error("axis `{0}` must be non-empty and strictly increasing with step 1")]
    BadAxis(&'static str),
    #[error("expected {expected} cells but got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rate at age {age}, year {year} is {value}; rates must be finite and >= 0")]
    InvalidRate { age: u32, year: i32, value: f64 },
    #[error("CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("surface CSV is missing cell at age {age}, year {year}")]
    MissingCsvCell { age: u32, year: i32 },
    #[error("age {0} not in surface")]
    UnknownAge(u32),
    #[error("year {0} not in surface")]
    UnknownYear(i32),
}

pub(crate) fn check_axis<T>(axis: &[T], name: &'static str) -> Result<(), SurfaceError>
where
    T: Copy + Into<i64>,
{
    if axis.is_empty() || axis.windows(2).any(|w| w[1].into() - w[0].into() != 1) {
        return Err(SurfaceError::BadAxis(name));
    }
    Ok(())
}

/// Death rates m(x, y) on a contiguous age × year rectangle.
///
/// Rates are stored row-major: one row per age, one column per year.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalitySurface {
    ages: Vec<u32>,
    years: Vec<i32>,
    rates: Vec<f64>,
    pub sex: Sex,
    pub source_label: String,
    pub provenance: Provenance,
}

impl MortalitySurface {
    pub fn new(
        ages: Vec<u32>,
        years: Vec<i32>,
        rates: Vec<f64>,
        sex: Sex,
        source_label: impl Into<String>,
    ) -> Result<Self, SurfaceError> {
        check_axis(&ages, "ages")?;
        check_axis(&years, "years")?;
        let expected = ages.len() * years.len();
        if rates.len() != expected {
            return Err(SurfaceError::DimensionMismatch {
                expected,
                got: rates.len(),
            });
        }
        for (i, &v) in rates.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(SurfaceError::InvalidRate {
                    age: ages[i / years.len()],
                    year: years[i % years.len()],
                    value: v,
                });
            }
        }
        Ok(Self {
            ages,
            years,
            rates,
            sex,
            source_label: source_label.into(),
            provenance: Provenance::default(),
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

    /// Row-major rate matrix.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, age_idx: usize, year_idx: usize) -> f64 {
        self.rates[age_idx * self.years.len() + year_idx]
    }

    /// All years for one age.
    pub fn row(&self, age_idx: usize) -> &[f64] {
        let n = self.years.len();
        &self.rates[age_idx * n..(age_idx + 1) * n]
    }

    /// All ages for one year.
    pub fn column(&self, year_idx: usize) -> Vec<f64> {
        (0..self.ages.len()).map(|a| self.rate(a, year_idx)).collect()
    }

    pub fn year_index(&self, year: i32) -> Result<usize, SurfaceError> {
        self.years
            .iter()
            .position(|&y| y == year)
            .ok_or(SurfaceError::UnknownYear(year))
    }

    pub fn age_index(&self, age: u32) -> Result<usize, SurfaceError> {
        self.ages
            .iter()
            .position(|&a| a == age)
            .ok_or(SurfaceError::UnknownAge(age))
    }

    /// Column of rates for a calendar year.
    pub fn rates_in_year(&self, year: i32) -> Result<Vec<f64>, SurfaceError> {
        Ok(self.column(self.year_index(year)?))
    }

    /// Sub-rectangle over an inclusive year window.
    pub fn window(&self, first: i32, last: i32) -> Result<Self, SurfaceError> {
        let lo = self.year_index(first)?;
        let hi = self.year_index(last)?;
        if hi < lo {
            return Err(SurfaceError::BadAxis("years"));
        }
        let years = self.years[lo..=hi].to_vec();
        let rates = (0..self.n_ages())
            .flat_map(|a| self.row(a)[lo..=hi].iter().copied())
            .collect();
        Ok(Self {
            ages: self.ages.clone(),
            years,
            rates,
            sex: self.sex,
            source_label: self.source_label.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// Sub-rectangle over an inclusive age window.
    pub fn age_window(&self, first: u32, last: u32) -> Result<Self, SurfaceError> {
        let lo = self.age_index(first)?;
        let hi = self.age_index(last)?;
        if hi < lo {
            return Err(SurfaceError::BadAxis("ages"));
        }
        let rates = (lo..=hi).flat_map(|a| self.row(a).iter().copied()).collect();
        Ok(Self {
            ages: self.ages[lo..=hi].to_vec(),
            years: self.years.clone(),
            rates,
            sex: self.sex,
            source_label: self.source_label.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// Same grid with new rates; used by transforms that keep the geometry.
    pub(crate) fn with_rates(&self, rates: Vec<f64>) -> Self {
        debug_assert_eq!(rates.len(), self.rates.len());
        Self {
            ages: self.ages.clone(),
            years: self.years.clone(),
            rates,
            sex: self.sex,
            source_label: self.source_label.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Writes the canonical `age,year,value` CSV, ages outer, years inner.
    pub fn to_csv(&self) -> String {
        write_grid_csv(&self.ages, &self.years, &self.rates)
    }

    pub fn from_csv(
        text: &str,
        sex: Sex,
        source_label: impl Into<String>,
    ) -> Result<Self, SurfaceError> {
        let (ages, years, values) = read_grid_csv(text)?;
        Self::new(ages, years, values, sex, source_label)
    }
}

pub(crate) fn write_grid_csv(ages: &[u32], years: &[i32], values: &[f64]) -> String {
    let mut out = String::from("age,year,value\n");
    for (a, age) in ages.iter().enumerate() {
        for (y, year) in years.iter().enumerate() {
            out.push_str(&format!("{age},{year},{}\n", values[a * years.len() + y]));
        }
    }
    out
}

/// Reads an `age,year,value` CSV in any row order into a dense row-major grid.
pub(crate) fn read_grid_csv(text: &str) -> Result<(Vec<u32>, Vec<i32>, Vec<f64>), SurfaceError> {
    let mut cells = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if i == 0 {
            if line.replace(' ', "") != "age,year,value" {
                return Err(SurfaceError::Csv {
                    line: 1,
                    msg: format!("expected header `age,year,value`, found `{line}`"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| SurfaceError::Csv {
            line: i + 1,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let age: u32 = fields[0].parse().map_err(|_| bad("bad age"))?;
        let year: i32 = fields[1].parse().map_err(|_| bad("bad year"))?;
        let value: f64 = fields[2].parse().map_err(|_| bad("bad value"))?;
        cells.push((age, year, value));
    }
    if cells.is_empty() {
        return Err(SurfaceError::Csv {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    let a0 = cells.iter().map(|c| c.0).min().unwrap();
    let a1 = cells.iter().map(|c| c.0).max().unwrap();
    let y0 = cells.iter().map(|c| c.1).min().unwrap();
    let y1 = cells.iter().map(|c| c.1).max().unwrap();
    let ages: Vec<u32> = (a0..=a1).collect();
    let years: Vec<i32> = (y0..=y1).collect();
    let mut grid = vec![None; ages.len() * years.len()];
    for (age, year, value) in cells {
        let idx = (age - a0) as usize * years.len() + (year - y0) as usize;
        grid[idx] = Some(value);
    }
    let mut values = Vec::with_capacity(grid.len());
    for (i, v) in grid.into_iter().enumerate() {
        match v {
            Some(v) => values.push(v),
            None => {
                return Err(SurfaceError::MissingCsvCell {
                    age: ages[i / years.len()],
                    year: years[i % years.len()],
                })
            }
        }
    }
    Ok((ages, years, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MortalitySurface {
        MortalitySurface::new(
            vec![0, 1],
            vec![2000, 2001, 2002],
            vec![0.01, 0.009, 0.008, 0.001, 0.0009, 0.0008],
            Sex::Female,
            "TST",
        )
        .unwrap()
    }

    #[test]
    fn rejects_gapped_years() {
        let err = MortalitySurface::new(vec![0], vec![2000, 2002], vec![0.1, 0.1], Sex::Male, "x");
        assert_eq!(err.unwrap_err(), SurfaceError::BadAxis("years"));
    }

    #[test]
    fn rejects_negative_rate() {
        let err = MortalitySurface::new(vec![0], vec![2000], vec![-0.1], Sex::Male, "x");
        assert!(matches!(err, Err(SurfaceError::InvalidRate { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let s = tiny();
        let back = MortalitySurface::from_csv(&s.to_csv(), Sex::Female, "TST").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn csv_detects_hole() {
        let text = "age,year,value\n0,2000,0.1\n0,2001,0.1\n1,2000,0.1\n";
        assert_eq!(
            MortalitySurface::from_csv(text, Sex::Female, "x").unwrap_err(),
            SurfaceError::MissingCsvCell {
                age: 1,
                year: 2001
            }
        );
    }

    #[test]
    fn windows() {
        let s = tiny();
        let w = s.window(2001, 2002).unwrap();
        assert_eq!(w.years(), &[2001, 2002]);
        assert_eq!(w.row(1), &[0.0009, 0.0008]);
        let a = s.age_window(1, 1).unwrap();
        assert_eq!(a.rates(), &[0.001, 0.0009, 0.0008]);
    }
}
