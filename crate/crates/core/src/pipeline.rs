//! End-to-end runs: retrospective backtests and prospective forecasts.
//!
//! A run reads HMD files for the country of interest and any reference
//! countries, fits the chosen core model to each, blends and clamps the ρ
//! forecasts, propagates a death-rate fan from the observed jump-off rates
//! and turns it into an e0 fan. Backtests also compare the median e0 path
//! and a Lee-Carter baseline with the observed life expectancy.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::blend::{blend_with_mean, clamp_rho_in_place, BlendError, BlendPlan, Coupling, ReferenceMean};
use crate::config::{ConfigError, CoreModel, RatesSource, RunConfig, YearSpan};
use crate::fan::{e0_fan, forecast_error, propagate_quantiles, rho_fan, FanError, ForecastError, ForecastFan, QuantileFan};
use crate::hmd::{locate_hmd_file, parse_hmd_file, rates_table_from_counts, HmdTable, IngestError, TableKind};
use crate::improvement::{improvement_rates, smooth_surface, ImprovementError, ImprovementSurface};
use crate::leecarter::{fit_leecarter, forecast_leecarter, LeeCarterError};
use crate::lifetable::{life_expectancy_at_birth, LifeTableError};
use crate::linear::{fit_linear, project_linear};
use crate::loglog::{fit_loglog, project_loglog};
use crate::projection::{ModelError, RhoForecast, TimeIndex};
use crate::sampler::{McmcConfig, PosteriorDraws};
use crate::surface::{MortalitySurface, SurfaceError};

/// Environment variable naming the directory that holds the HMD files.
pub const DATA_DIR_ENV: &str = "MORTICAST_DATA_DIR";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no {kind:?} file for `{country}` under {dir}")]
    MissingInput { country: String, kind: TableKind, dir: PathBuf },
    #[error("cannot read or write {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("{country}: {source}")]
    Ingest { country: String, source: IngestError },
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Improvement(#[from] ImprovementError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Blend(#[from] BlendError),
    #[error(transparent)]
    Fan(#[from] FanError),
    #[error(transparent)]
    LifeTable(#[from] LifeTableError),
    #[error(transparent)]
    LeeCarter(#[from] LeeCarterError),
    #[error("reports cover different years: {0}")]
    HorizonMismatch(String),
}

impl PipelineError {
    /// Process exit code: 2 configuration, 3 input data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::HorizonMismatch(_) => 2,
            PipelineError::MissingInput { .. }
            | PipelineError::Io { .. }
            | PipelineError::Ingest { .. }
            | PipelineError::Surface(_)
            | PipelineError::Improvement(_) => 3,
            PipelineError::Model(_)
            | PipelineError::Blend(_)
            | PipelineError::Fan(_)
            | PipelineError::LifeTable(_)
            | PipelineError::LeeCarter(_) => 4,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// An input file and the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Reads HMD files and keeps a checksum of every file read.
#[derive(Debug)]
pub struct HmdSource {
    pub dir: PathBuf,
    pub inputs: Vec<InputFile>,
}

impl HmdSource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            inputs: Vec::new(),
        }
    }

    /// Directory from `MORTICAST_DATA_DIR`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(DATA_DIR_ENV).map(Self::new)
    }

    pub fn has(&self, country: &str, kind: TableKind) -> bool {
        locate_hmd_file(&self.dir, country, kind).is_some()
    }

    fn table(&mut self, country: &str, kind: TableKind) -> Result<HmdTable, PipelineError> {
        let path = locate_hmd_file(&self.dir, country, kind).ok_or_else(|| PipelineError::MissingInput {
            country: country.to_string(),
            kind,
            dir: self.dir.clone(),
        })?;
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        if !self.inputs.iter().any(|f| f.path == path) {
            self.inputs.push(InputFile {
                path: path.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        parse_hmd_file(&bytes, kind, country).map_err(|source| PipelineError::Ingest {
            country: country.to_string(),
            source,
        })
    }

    /// Death rates of one country over `span` and the configured ages.
    pub fn surface(&mut self, country: &str, cfg: &RunConfig, span: YearSpan) -> Result<MortalitySurface, PipelineError> {
        let ingest = |source| PipelineError::Ingest {
            country: country.to_string(),
            source,
        };
        let table = match cfg.rates_source {
            RatesSource::Mx => self.table(country, TableKind::DeathRates)?,
            RatesSource::Counts => {
                let deaths = self.table(country, TableKind::Deaths)?;
                let exposures = self.table(country, TableKind::Exposures)?;
                rates_table_from_counts(&deaths, &exposures).map_err(ingest)?
            }
        };
        let surface = table
            .to_surface(cfg.sex, span.first, span.last, cfg.fill_policy)
            .map_err(ingest)?;
        Ok(surface.age_window(cfg.minimum_age, cfg.maximum_age)?)
    }
}

/// Improvement rates of a base-period surface, smoothed first if configured.
pub fn base_improvement(surface: &MortalitySurface, cfg: &RunConfig) -> Result<ImprovementSurface, PipelineError> {
    Ok(match cfg.smoothing {
        Some(lambda) => improvement_rates(&smooth_surface(surface, lambda)?)?,
        None => improvement_rates(surface)?,
    })
}

/// Posterior draws and ρ forecast of one country.
#[derive(Debug, Clone)]
pub struct CountryFit {
    pub country: String,
    pub time: TimeIndex,
    pub draws: PosteriorDraws,
    pub forecast: RhoForecast,
}

pub fn fit_country(
    country: &str,
    rho: &ImprovementSurface,
    cfg: &RunConfig,
    seed: u64,
) -> Result<CountryFit, PipelineError> {
    let time = TimeIndex::for_data(rho);
    let mcmc = McmcConfig { seed, ..cfg.mcmc };
    let horizon = cfg.forecast_horizon.years();
    let (draws, forecast) = match cfg.core_model {
        CoreModel::Linear => {
            let d = fit_linear(rho, &time, &mcmc)?;
            let f = project_linear(&d, &time, &horizon)?;
            (d, f)
        }
        CoreModel::LogLog => {
            let d = fit_loglog(rho, &time, &mcmc)?;
            let f = project_loglog(&d, &time, &horizon)?;
            (d, f)
        }
    };
    Ok(CountryFit {
        country: country.to_string(),
        time,
        draws,
        forecast,
    })
}

/// e0 for each year of an observed surface whose ages start at 0.
pub fn observed_e0(surface: &MortalitySurface) -> Result<Vec<f64>, PipelineError> {
    (0..surface.n_years())
        .map(|j| Ok(life_expectancy_at_birth(&surface.column(j))?))
        .collect()
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub retrospective: bool,
    /// Draws of the country of interest.
    pub draws: PosteriorDraws,
    /// Blended (if configured) and clamped (if configured) ρ fan.
    pub rho_fan: QuantileFan,
    pub fan: ForecastFan,
    pub inputs: Vec<InputFile>,
    /// Observed e0 over the horizon (backtests only).
    pub observed_e0: Option<Vec<f64>>,
    /// Median e0 minus observed e0 (backtests only).
    pub errors: Option<ForecastError>,
    /// Lee-Carter fan and errors on the same data (backtests only).
    pub baseline: Option<(ForecastFan, ForecastError)>,
}

impl RunReport {
    pub fn label(&self) -> String {
        self.config.core_model.to_string()
    }

    /// The manifest: the effective configuration plus run bookkeeping.
    /// It parses back as a configuration that reproduces the run.
    pub fn manifest(&self) -> String {
        let mut out = self.config.to_ini();
        let _ = writeln!(out, "\n[manifest]");
        let _ = writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(
            out,
            "mode = {}",
            if self.retrospective { "retrospective" } else { "prospective" }
        );
        let _ = writeln!(out, "jumpoff_year = {}", self.fan.jumpoff_year);
        for (i, f) in self.inputs.iter().enumerate() {
            let name = f.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let _ = writeln!(out, "input_{i} = {name} sha256:{}", f.sha256);
        }
        out
    }

    /// Median and central intervals of e0 per year, as CSV.
    pub fn interval_summary(&self) -> String {
        let e0 = &self.fan.e0_fan;
        let coverages = [0.5, 0.67, 0.8, 0.95];
        let mut out = String::from("year,median");
        for c in coverages {
            let pct = (c * 100.0_f64).round();
            let _ = write!(out, ",lower_{pct},upper_{pct}");
        }
        out.push('\n');
        let median = e0.level_index(0.5);
        for (s, year) in e0.years.iter().enumerate() {
            let _ = write!(out, "{year}");
            match median {
                Some(m) => {
                    let _ = write!(out, ",{}", e0.get(m, s));
                }
                None => out.push(','),
            }
            for c in coverages {
                let lo = e0.level_index(((1.0 - c) / 2.0 * 1000.0).round() / 1000.0);
                let hi = e0.level_index(((1.0 + c) / 2.0 * 1000.0).round() / 1000.0);
                match (lo, hi) {
                    (Some(l), Some(h)) => {
                        let _ = write!(out, ",{},{}", e0.get(l, s), e0.get(h, s));
                    }
                    _ => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Model-vs-baseline comparison table (backtests only).
    pub fn comparison(&self) -> Option<Result<Comparison, PipelineError>> {
        let errors = self.errors.as_ref()?;
        let mut reports = vec![(self.label(), errors.clone())];
        if let Some((_, lc)) = &self.baseline {
            reports.push(("lee-carter".to_string(), lc.clone()));
        }
        Some(compare_models(&reports))
    }

    /// Writes every output file into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut files: Vec<(&str, String)> = vec![
            ("manifest.ini", self.manifest()),
            ("rho_fan.csv", self.rho_fan.to_csv("rho")),
            ("m_fan.csv", self.fan.m_fan.to_csv("m")),
            ("e0_fan.csv", self.fan.e0_fan.to_csv()),
            ("e0_intervals.csv", self.interval_summary()),
        ];
        if let Some(e) = &self.errors {
            files.push(("errors.csv", e.to_csv()));
        }
        if let Some((fan, e)) = &self.baseline {
            files.push(("lc_e0_fan.csv", fan.e0_fan.to_csv()));
            files.push(("lc_errors.csv", e.to_csv()));
        }
        if let Some(c) = self.comparison() {
            let c = c?;
            files.push(("comparison.csv", c.to_csv()));
            files.push(("comparison.txt", c.to_text()));
        }
        let mut written = Vec::new();
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| io_err(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn blend_plan(cfg: &RunConfig) -> Result<BlendPlan, BlendError> {
    let refs: Vec<&str> = cfg.reference_countries.iter().map(String::as_str).collect();
    let mut plan = BlendPlan::new(&cfg.country_of_interest, &refs, cfg.forecast_horizon.len())?;
    plan.reference_weights = cfg.reference_weights.clone();
    if cfg.shuffle_references {
        plan.coupling = Coupling::Shuffled { seed: cfg.mcmc.seed };
    }
    Ok(plan)
}

/// Fits, blends, clamps and propagates; shared by both run modes.
fn forecast_core(
    source: &mut HmdSource,
    cfg: &RunConfig,
    base: &MortalitySurface,
) -> Result<(PosteriorDraws, QuantileFan, ForecastFan), PipelineError> {
    let interest = fit_country(&cfg.country_of_interest, &base_improvement(base, cfg)?, cfg, cfg.country_seed(0))?;
    let mut rho = if cfg.blend {
        let plan = blend_plan(cfg)?;
        let mut acc = ReferenceMean::new(&plan)?;
        for (i, country) in cfg.reference_countries.iter().enumerate() {
            let surface = source.surface(country, cfg, cfg.base_period)?;
            let fit = fit_country(country, &base_improvement(&surface, cfg)?, cfg, cfg.country_seed(i + 1))?;
            acc.add(&fit.forecast)?;
        }
        blend_with_mean(&interest.forecast, &acc.finish()?, &plan)?
    } else {
        interest.forecast
    };
    if cfg.adjust_rho {
        clamp_rho_in_place(&mut rho, cfg.clamp);
    }
    let rho_quantiles = rho_fan(&rho, &cfg.quantile_levels, cfg.channel)?;
    drop(rho);
    let jumpoff = base.column(base.n_years() - 1);
    let m_fan = propagate_quantiles(&jumpoff, &rho_quantiles, cfg.propagation)?;
    let e0 = e0_fan(&m_fan)?;
    let fan = ForecastFan {
        quantile_levels: cfg.quantile_levels.clone(),
        m_fan,
        e0_fan: e0,
        jumpoff_year: cfg.base_period.last,
        provenance: cfg.to_ini(),
    };
    Ok((interest.draws, rho_quantiles, fan))
}

/// Backtest: forecast the horizon from the base period and compare with
/// what was observed, for the model and for a Lee-Carter baseline.
pub fn run_retrospective(cfg: &RunConfig, source: &mut HmdSource) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let median = cfg
        .quantile_levels
        .iter()
        .position(|&p| p == 0.5)
        .ok_or_else(|| ConfigError::Invalid("backtests need 0.5 among quantile_levels".into()))?;
    let whole = source.surface(
        &cfg.country_of_interest,
        cfg,
        YearSpan::new(cfg.base_period.first, cfg.forecast_horizon.last),
    )?;
    let base = whole.window(cfg.base_period.first, cfg.base_period.last)?;
    let observed = whole.window(cfg.forecast_horizon.first, cfg.forecast_horizon.last)?;
    let (draws, rho_quantiles, fan) = forecast_core(source, cfg, &base)?;

    let years = cfg.forecast_horizon.years();
    let obs = observed_e0(&observed)?;
    let errors = forecast_error(&years, fan.e0_fan.series(median), &years, &obs)?;

    let lc = fit_leecarter(&base)?;
    let lc_fan = forecast_leecarter(&lc, &base.column(base.n_years() - 1), &years, &cfg.quantile_levels)?;
    let lc_errors = forecast_error(&years, lc_fan.e0_fan.series(median), &years, &obs)?;

    Ok(RunReport {
        config: cfg.clone(),
        retrospective: true,
        draws,
        rho_fan: rho_quantiles,
        fan,
        inputs: source.inputs.clone(),
        observed_e0: Some(obs),
        errors: Some(errors),
        baseline: Some((lc_fan, lc_errors)),
    })
}

/// Forecast beyond the data.
pub fn run_prospective(cfg: &RunConfig, source: &mut HmdSource) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let base = source.surface(&cfg.country_of_interest, cfg, cfg.base_period)?;
    let (draws, rho_quantiles, fan) = forecast_core(source, cfg, &base)?;
    Ok(RunReport {
        config: cfg.clone(),
        retrospective: false,
        draws,
        rho_fan: rho_quantiles,
        fan,
        inputs: source.inputs.clone(),
        observed_e0: None,
        errors: None,
        baseline: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub mean_absolute: f64,
    pub max_absolute: f64,
    /// Error in the last horizon year.
    pub terminal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub years: Vec<i32>,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,mae,max_abs,terminal_error\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.label, r.mean_absolute, r.max_absolute, r.terminal);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let last = self.years.last().copied().unwrap_or_default();
        let mut out = format!("{:<width$}  {:>7}  {:>7}  {:>9}\n", "model", "MAE", "max|E|", format!("E({last})"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.3}  {:>7.3}  {:>9.3}",
                r.label, r.mean_absolute, r.max_absolute, r.terminal
            );
        }
        out
    }
}

/// Side-by-side error summary of several models over the same years.
pub fn compare_models(reports: &[(String, ForecastError)]) -> Result<Comparison, PipelineError> {
    let Some((_, first)) = reports.first() else {
        return Err(PipelineError::HorizonMismatch("no reports given".into()));
    };
    for (label, r) in reports {
        if r.years != first.years {
            return Err(PipelineError::HorizonMismatch(format!("`{label}` differs from `{}`", reports[0].0)));
        }
    }
    Ok(Comparison {
        years: first.years.clone(),
        rows: reports
            .iter()
            .map(|(label, r)| ComparisonRow {
                label: label.clone(),
                mean_absolute: r.mean_absolute,
                max_absolute: r.max_absolute,
                terminal: *r.errors.last().unwrap(),
            })
            .collect(),
    })
}

/// Reads a `year,E_t` error table, such as one written by a backtest or
/// prepared from another model's published numbers.
pub fn read_error_csv(text: &str) -> Result<ForecastError, PipelineError> {
    let mut years = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || {
            PipelineError::Config(ConfigError::Parse(format!("error table line {}: expected year,E_t", i + 1)))
        };
        let (y, e) = line.split_once(',').ok_or_else(bad)?;
        years.push(y.trim().parse::<i32>().map_err(|_| bad())?);
        errors.push(e.trim().parse::<f64>().map_err(|_| bad())?);
    }
    let zeros = vec![0.0; errors.len()];
    Ok(forecast_error(&years, &errors, &years, &zeros)?)
}
