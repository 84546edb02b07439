//! Reader and writer for Human Mortality Database 1×1 period tables
//! (`Mx_1x1`, `Deaths_1x1`, `Exposures_1x1`).
//!
//! The layout is a free-text header followed by whitespace-separated
//! columns `Year Age Female Male Total`. The open age group is written
//! `110+` and missing values are a lone `.`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::surface::{MortalitySurface, Sex, SurfaceError};

/// Highest single-year age in an HMD 1×1 table; stands for `110+`.
pub const OPEN_AGE: u32 = 110;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    DeathRates,
    Deaths,
    Exposures,
}

impl TableKind {
    /// File stem HMD uses for the table, e.g. `Mx_1x1`.
    pub fn file_stem(self) -> &'static str {
        match self {
            TableKind::DeathRates => "Mx_1x1",
            TableKind::Deaths => "Deaths_1x1",
            TableKind::Exposures => "Exposures_1x1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmdRow {
    pub year: i32,
    pub age: u32,
    pub female: Option<f64>,
    pub male: Option<f64>,
    pub total: Option<f64>,
}

impl HmdRow {
    pub fn value(&self, sex: Sex) -> Option<f64> {
        match sex {
            Sex::Female => self.female,
            Sex::Male => self.male,
            Sex::Total => self.total,
        }
    }
}

/// A fully parsed HMD table. Rows are sorted by year, then age, and every
/// year carries the complete 0..=110 age range.
#[derive(Debug, Clone, PartialEq)]
pub struct HmdTable {
    pub country_code: String,
    pub kind: TableKind,
    rows: Vec<HmdRow>,
}

/// What to do with cells that cannot enter a logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FillPolicy {
    /// Absent cells are an error.
    #[default]
    Error,
    /// Absent or zero cells take the last positive rate at a younger age
    /// in the same year. Every filled cell is recorded in the surface
    /// provenance.
    CarryDownAge,
}

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("line {line}: {msg}")]
    MalformedRow { line: usize, msg: String },
    #[error("year {year} does not carry the full 0-110+ age range")]
    RaggedYear { year: i32 },
    #[error("duplicate row for year {year}, age {age}")]
    DuplicateRow { year: i32, age: u32 },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("no value at age {age}, year {year} and no fill policy")]
    MissingCell { age: u32, year: i32 },
    #[error("requested years {first}-{last} not contained in table years {have_first}-{have_last}")]
    WindowOutOfRange {
        first: i32,
        last: i32,
        have_first: i32,
        have_last: i32,
    },
    #[error("expected a {expected:?} table, got {got:?}")]
    WrongKind { expected: TableKind, got: TableKind },
    #[error("deaths and exposures tables cover different (year, age) grids")]
    GridMismatch,
    #[error("negative count at age {age}, year {year}")]
    NegativeCount { age: u32, year: i32 },
    #[error("cannot read {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error(transparent)]
    Surface(#[from] SurfaceError),
}

fn parse_value(tok: &str) -> Result<Option<f64>, String> {
    if tok == "." {
        return Ok(None);
    }
    let v: f64 = tok
        .parse()
        .map_err(|_| format!("unparsable number `{tok}`"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("value `{tok}` is not a finite non-negative number"));
    }
    Ok(Some(v))
}

fn is_year_token(tok: &str) -> bool {
    tok.len() == 4 && tok.bytes().all(|b| b.is_ascii_digit())
}

/// Parses an HMD 1×1 text table.
///
/// Header lines are skipped until the first line whose leading token is a
/// four-digit year; from there on every non-blank line must be a data row.
pub fn parse_hmd_file(
    bytes: &[u8],
    kind: TableKind,
    country_code: &str,
) -> Result<HmdTable, IngestError> {
    let text = String::from_utf8_lossy(bytes);
    let mut rows = Vec::new();
    let mut in_body = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if !in_body {
            if is_year_token(toks[0]) {
                in_body = true;
            } else {
                continue;
            }
        }
        let bad = |msg: String| IngestError::MalformedRow { line: line_no, msg };
        if toks.len() != 5 {
            return Err(bad(format!("expected 5 columns, found {}", toks.len())));
        }
        if !is_year_token(toks[0]) {
            return Err(bad(format!("bad year `{}`", toks[0])));
        }
        let year: i32 = toks[0].parse().map_err(|_| bad("bad year".into()))?;
        let age = match toks[1] {
            "110+" => OPEN_AGE,
            a => match a.parse::<u32>() {
                Ok(v) if v < OPEN_AGE => v,
                _ => return Err(bad(format!("bad age `{a}`"))),
            },
        };
        rows.push(HmdRow {
            year,
            age,
            female: parse_value(toks[2]).map_err(bad)?,
            male: parse_value(toks[3]).map_err(bad)?,
            total: parse_value(toks[4]).map_err(bad)?,
        });
    }
    HmdTable::from_rows(country_code, kind, rows)
}

/// Reads `<dir>/<code>.<stem>.txt`, also trying `<code>_NP` and a
/// per-country subdirectory, which are the two layouts HMD downloads use.
pub fn read_hmd_file(dir: &Path, country_code: &str, kind: TableKind) -> Result<HmdTable, IngestError> {
    let path = locate_hmd_file(dir, country_code, kind).ok_or_else(|| IngestError::Io {
        path: dir.join(format!("{country_code}.{}.txt", kind.file_stem())),
        msg: "file not found".into(),
    })?;
    let bytes = std::fs::read(&path).map_err(|e| IngestError::Io {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    parse_hmd_file(&bytes, kind, country_code)
}

pub fn locate_hmd_file(dir: &Path, country_code: &str, kind: TableKind) -> Option<PathBuf> {
    let stem = kind.file_stem();
    let codes = [country_code.to_string(), format!("{country_code}_NP")];
    codes
        .iter()
        .flat_map(|c| {
            [
                dir.join(format!("{c}.{stem}.txt")),
                dir.join(c).join(format!("{c}.{stem}.txt")),
                dir.join(c).join("STATS").join(format!("{stem}.txt")),
            ]
        })
        .find(|p| p.is_file())
}

impl HmdTable {
    /// Validates and sorts rows.
    pub fn from_rows(
        country_code: &str,
        kind: TableKind,
        mut rows: Vec<HmdRow>,
    ) -> Result<Self, IngestError> {
        if rows.is_empty() {
            return Err(IngestError::EmptyFile);
        }
        rows.sort_by_key(|r| (r.year, r.age));
        if let Some(w) = rows
            .windows(2)
            .find(|w| (w[0].year, w[0].age) == (w[1].year, w[1].age))
        {
            return Err(IngestError::DuplicateRow {
                year: w[0].year,
                age: w[0].age,
            });
        }
        let mut per_year: BTreeMap<i32, usize> = BTreeMap::new();
        for r in &rows {
            *per_year.entry(r.year).or_default() += 1;
        }
        // Sorted and duplicate-free, so 111 rows per year means 0..=110.
        if let Some((&year, _)) = per_year
            .iter()
            .find(|(_, &n)| n != OPEN_AGE as usize + 1)
        {
            return Err(IngestError::RaggedYear { year });
        }
        Ok(Self {
            country_code: country_code.to_string(),
            kind,
            rows,
        })
    }

    pub fn rows(&self) -> &[HmdRow] {
        &self.rows
    }

    /// Distinct years in ascending order.
    pub fn years(&self) -> Vec<i32> {
        let mut ys: Vec<i32> = self.rows.iter().map(|r| r.year).collect();
        ys.dedup();
        ys
    }

    fn row(&self, year: i32, age: u32) -> Option<&HmdRow> {
        self.rows
            .binary_search_by_key(&(year, age), |r| (r.year, r.age))
            .ok()
            .map(|i| &self.rows[i])
    }

    /// Writes the table back in HMD 1×1 layout.
    pub fn to_hmd_text(&self) -> String {
        let fmt_v = |v: Option<f64>| v.map_or_else(|| ".".to_string(), |v| v.to_string());
        let mut out = format!(
            "{}, {} (period 1x1)\n\n  Year          Age             Female            Male           Total\n",
            self.country_code,
            self.kind.file_stem()
        );
        for r in &self.rows {
            let age = if r.age == OPEN_AGE {
                "110+".to_string()
            } else {
                r.age.to_string()
            };
            out.push_str(&format!(
                "  {}  {:>9}  {:>16}  {:>16}  {:>16}\n",
                r.year,
                age,
                fmt_v(r.female),
                fmt_v(r.male),
                fmt_v(r.total)
            ));
        }
        out
    }

    /// Wraps a complete 0..=110 surface into a death-rate table with only
    /// the surface's sex column populated.
    pub fn from_surface(surface: &MortalitySurface, country_code: &str) -> Result<Self, IngestError> {
        let mut rows = Vec::with_capacity(surface.rates().len());
        for (y, &year) in surface.years().iter().enumerate() {
            for (a, &age) in surface.ages().iter().enumerate() {
                let v = Some(surface.rate(a, y));
                let mut row = HmdRow {
                    year,
                    age,
                    female: None,
                    male: None,
                    total: None,
                };
                match surface.sex {
                    Sex::Female => row.female = v,
                    Sex::Male => row.male = v,
                    Sex::Total => row.total = v,
                }
                rows.push(row);
            }
        }
        Self::from_rows(country_code, TableKind::DeathRates, rows)
    }

    /// Extracts a rectangular 0..=110 × `first..=last` surface of death rates.
    pub fn to_surface(
        &self,
        sex: Sex,
        first: i32,
        last: i32,
        fill: FillPolicy,
    ) -> Result<MortalitySurface, IngestError> {
        if self.kind != TableKind::DeathRates {
            return Err(IngestError::WrongKind {
                expected: TableKind::DeathRates,
                got: self.kind,
            });
        }
        let years = self.years();
        let (have_first, have_last) = (years[0], *years.last().unwrap());
        let contiguous = years.windows(2).all(|w| w[1] == w[0] + 1);
        if first > last || first < have_first || last > have_last || !contiguous {
            return Err(IngestError::WindowOutOfRange {
                first,
                last,
                have_first,
                have_last,
            });
        }
        let ages: Vec<u32> = (0..=OPEN_AGE).collect();
        let window: Vec<i32> = (first..=last).collect();
        let mut rates = vec![0.0; ages.len() * window.len()];
        let mut filled = Vec::new();
        for (y, &year) in window.iter().enumerate() {
            let mut last_positive: Option<f64> = None;
            for &age in &ages {
                // Every year in range has all ages (checked in from_rows).
                let cell = self.row(year, age).and_then(|r| r.value(sex));
                let value = match (cell, fill) {
                    (Some(v), FillPolicy::CarryDownAge) if v <= 0.0 => None,
                    (c, _) => c,
                };
                let v = match value {
                    Some(v) => v,
                    None => match (fill, last_positive) {
                        (FillPolicy::CarryDownAge, Some(prev)) => {
                            filled.push((age, year));
                            prev
                        }
                        _ => return Err(IngestError::MissingCell { age, year }),
                    },
                };
                if v > 0.0 {
                    last_positive = Some(v);
                }
                rates[age as usize * window.len() + y] = v;
            }
        }
        let mut s = MortalitySurface::new(ages, window, rates, sex, self.country_code.clone())?;
        s.provenance.filled_cells = filled;
        Ok(s)
    }
}

/// Occurrence-exposure rates D/E for every sex column. Cells with zero
/// exposure are absent.
pub fn rates_table_from_counts(deaths: &HmdTable, exposures: &HmdTable) -> Result<HmdTable, IngestError> {
    for (t, kind) in [(deaths, TableKind::Deaths), (exposures, TableKind::Exposures)] {
        if t.kind != kind {
            return Err(IngestError::WrongKind {
                expected: kind,
                got: t.kind,
            });
        }
    }
    if deaths.rows.len() != exposures.rows.len() {
        return Err(IngestError::GridMismatch);
    }
    let mut rows = Vec::with_capacity(deaths.rows.len());
    for (d, e) in deaths.rows.iter().zip(&exposures.rows) {
        if (d.year, d.age) != (e.year, e.age) {
            return Err(IngestError::GridMismatch);
        }
        let ratio = |dv: Option<f64>, ev: Option<f64>| -> Option<f64> {
            match (dv, ev) {
                (Some(dv), Some(ev)) if ev > 0.0 => Some(dv / ev),
                _ => None,
            }
        };
        rows.push(HmdRow {
            year: d.year,
            age: d.age,
            female: ratio(d.female, e.female),
            male: ratio(d.male, e.male),
            total: ratio(d.total, e.total),
        });
    }
    HmdTable::from_rows(&deaths.country_code, TableKind::DeathRates, rows)
}

/// Death-rate surface over the whole year range shared by the two tables.
pub fn rates_from_counts(
    deaths: &HmdTable,
    exposures: &HmdTable,
    sex: Sex,
    fill: FillPolicy,
) -> Result<MortalitySurface, IngestError> {
    let table = rates_table_from_counts(deaths, exposures)?;
    let years = table.years();
    table.to_surface(sex, years[0], *years.last().unwrap(), fill)
}
