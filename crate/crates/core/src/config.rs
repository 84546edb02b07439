//! Run configuration, read from and echoed to an INI file whose keys follow
//! the model-parameter names of the published setup.
//!
//! ```ini
//! [model]
//! country_of_interest = DNK
//! reference_countries = SWE
//! sex = female
//! minimum_age = 0
//! maximum_age = 110
//! base_period = 1965-1990
//! forecast_horizon = 1991-2011
//! bayesian_core_model = loglog
//!
//! [mcmc]
//! number_of_iterations = 5200
//! number_of_adaptions = 200
//! number_of_parallel_chains = 5
//! number_of_thinning = 5
//! seed = 1
//!
//! [adjust]
//! adjust_forecasted_rho = true
//! rho_min = 0.005
//! rho_max = 0.035
//! ```
//!
//! Every key has a default; [`RunConfig::to_ini`] writes all of them, so the
//! echoed file fully determines a run.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use ini::Ini;
use thiserror::Error;

use crate::blend::ClampBand;
use crate::fan::{Channel, Propagation, DEFAULT_LEVELS};
use crate::hmd::FillPolicy;
use crate::improvement::DEFAULT_SMOOTHING_LAMBDA;
use crate::sampler::McmcConfig;
use crate::surface::Sex;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("unknown key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("bad value `{value}` for `{key}`: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoreModel {
    Linear,
    #[default]
    LogLog,
}

impl fmt::Display for CoreModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoreModel::Linear => "linear",
            CoreModel::LogLog => "loglog",
        })
    }
}

impl FromStr for CoreModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(CoreModel::Linear),
            "loglog" | "log-log" => Ok(CoreModel::LogLog),
            other => Err(format!("expected linear or loglog, got `{other}`")),
        }
    }
}

/// Where death rates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RatesSource {
    /// Deaths_1x1 / Exposures_1x1.
    #[default]
    Counts,
    /// Mx_1x1.
    Mx,
}

/// An inclusive span of calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YearSpan {
    pub first: i32,
    pub last: i32,
}

impl YearSpan {
    pub fn new(first: i32, last: i32) -> Self {
        Self { first, last }
    }

    pub fn years(&self) -> Vec<i32> {
        (self.first..=self.last).collect()
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for YearSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.first, self.last)
    }
}

impl FromStr for YearSpan {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once('-').ok_or("expected FIRST-LAST")?;
        let first = a.trim().parse().map_err(|_| format!("bad year `{a}`"))?;
        let last = b.trim().parse().map_err(|_| format!("bad year `{b}`"))?;
        if last < first {
            return Err(format!("span {first}-{last} is reversed"));
        }
        Ok(Self { first, last })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub country_of_interest: String,
    pub reference_countries: Vec<String>,
    pub sex: Sex,
    pub minimum_age: u32,
    pub maximum_age: u32,
    pub base_period: YearSpan,
    pub forecast_horizon: YearSpan,
    pub core_model: CoreModel,
    pub blend: bool,
    /// Relative weights among reference countries; `None` = equal.
    pub reference_weights: Option<Vec<f64>>,
    /// Pair reference draws with interest draws at random instead of by index.
    pub shuffle_references: bool,
    pub mcmc: McmcConfig,
    pub adjust_rho: bool,
    pub clamp: ClampBand,
    /// λ of the per-age smoother applied to log death rates; `None` = off.
    pub smoothing: Option<f64>,
    pub quantile_levels: Vec<f64>,
    pub propagation: Propagation,
    pub channel: Channel,
    pub rates_source: RatesSource,
    pub fill_policy: FillPolicy,
    pub output_directory: String,
}

impl Default for RunConfig {
    /// The published retrospective setup for British women.
    fn default() -> Self {
        Self {
            country_of_interest: "GBR_NP".into(),
            reference_countries: Vec::new(),
            sex: Sex::Female,
            minimum_age: 0,
            maximum_age: 110,
            base_period: YearSpan::new(1965, 1990),
            forecast_horizon: YearSpan::new(1991, 2011),
            core_model: CoreModel::LogLog,
            blend: false,
            reference_weights: None,
            shuffle_references: false,
            mcmc: McmcConfig::default(),
            adjust_rho: true,
            clamp: ClampBand::default(),
            smoothing: None,
            quantile_levels: DEFAULT_LEVELS.to_vec(),
            propagation: Propagation::Literal,
            channel: Channel::WithNoise,
            rates_source: RatesSource::Counts,
            fill_policy: FillPolicy::Error,
            output_directory: "morticast-out".into(),
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    (
        "model",
        &[
            "country_of_interest",
            "reference_countries",
            "sex",
            "minimum_age",
            "maximum_age",
            "base_period",
            "forecast_horizon",
            "bayesian_core_model",
            "blend",
            "reference_weights",
            "shuffle_references",
        ],
    ),
    (
        "mcmc",
        &[
            "number_of_iterations",
            "number_of_adaptions",
            "number_of_parallel_chains",
            "number_of_thinning",
            "seed",
        ],
    ),
    ("adjust", &["adjust_forecasted_rho", "rho_min", "rho_max"]),
    (
        "data",
        &["rates_source", "fill_policy", "smoothing"],
    ),
    (
        "output",
        &["quantile_levels", "propagation", "forecast_noise", "output_directory"],
    ),
];

fn bad(key: &str, value: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        msg: msg.into(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| bad(key, value, e.to_string()))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

pub fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn parse_levels(value: &str) -> Result<Vec<f64>, ConfigError> {
    let levels = parse_list(value)
        .iter()
        .map(|v| parse::<f64>("quantile_levels", v))
        .collect::<Result<Vec<f64>, _>>()?;
    if levels.is_empty() || levels.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(bad("quantile_levels", value, "levels must lie in (0, 1)"));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("quantile_levels", value, "levels must be strictly increasing"));
    }
    Ok(levels)
}

impl RunConfig {
    pub fn from_ini(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut cfg = RunConfig::default();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if props.iter().next().is_some() {
                    return Err(ConfigError::Parse("keys must sit inside a [section]".into()));
                }
                continue;
            };
            // Sections the engine does not consume, such as the manifest's
            // own bookkeeping, are skipped.
            let Some((_, known)) = KEYS.iter().find(|(s, _)| *s == section) else {
                continue;
            };
            for (key, value) in props.iter() {
                if !known.contains(&key) {
                    return Err(ConfigError::UnknownKey {
                        section: section.to_string(),
                        key: key.to_string(),
                    });
                }
                cfg.set(key, value)?;
            }
        }
        if ini.section(Some("model")).and_then(|p| p.get("blend")).is_none() {
            cfg.blend = !cfg.reference_countries.is_empty();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "country_of_interest" => self.country_of_interest = value.trim().to_string(),
            "reference_countries" => self.reference_countries = parse_list(value),
            "sex" => self.sex = parse(key, value)?,
            "minimum_age" => self.minimum_age = parse(key, value)?,
            "maximum_age" => self.maximum_age = parse(key, value.trim().trim_end_matches('+'))?,
            "base_period" => self.base_period = parse(key, value)?,
            "forecast_horizon" => self.forecast_horizon = parse(key, value)?,
            "bayesian_core_model" => self.core_model = parse(key, value)?,
            "blend" => self.blend = parse_bool(key, value)?,
            "reference_weights" => {
                let list = parse_list(value);
                self.reference_weights = if list.is_empty() {
                    None
                } else {
                    Some(list.iter().map(|v| parse(key, v)).collect::<Result<_, _>>()?)
                };
            }
            "shuffle_references" => self.shuffle_references = parse_bool(key, value)?,
            "number_of_iterations" => self.mcmc.n_iterations = parse(key, value)?,
            "number_of_adaptions" => self.mcmc.n_adapt = parse(key, value)?,
            "number_of_parallel_chains" => self.mcmc.n_chains = parse(key, value)?,
            "number_of_thinning" => self.mcmc.thin = parse(key, value)?,
            "seed" => self.mcmc.seed = parse(key, value)?,
            "adjust_forecasted_rho" => self.adjust_rho = parse_bool(key, value)?,
            "rho_min" => self.clamp.rho_min = parse(key, value)?,
            "rho_max" => self.clamp.rho_max = parse(key, value)?,
            "rates_source" => {
                self.rates_source = match value.trim() {
                    "counts" => RatesSource::Counts,
                    "mx" => RatesSource::Mx,
                    _ => return Err(bad(key, value, "expected counts or mx")),
                }
            }
            "fill_policy" => {
                self.fill_policy = match value.trim() {
                    "error" => FillPolicy::Error,
                    "carry-down-age" => FillPolicy::CarryDownAge,
                    _ => return Err(bad(key, value, "expected error or carry-down-age")),
                }
            }
            "smoothing" => {
                self.smoothing = match value.trim() {
                    "off" => None,
                    "on" => Some(DEFAULT_SMOOTHING_LAMBDA),
                    v => Some(parse(key, v)?),
                }
            }
            "quantile_levels" => self.quantile_levels = parse_levels(value)?,
            "propagation" => {
                self.propagation = match value.trim() {
                    "literal" => Propagation::Literal,
                    "exact-log" => Propagation::ExactLog,
                    _ => return Err(bad(key, value, "expected literal or exact-log")),
                }
            }
            "forecast_noise" => {
                self.channel = if parse_bool(key, value)? {
                    Channel::WithNoise
                } else {
                    Channel::Mean
                }
            }
            "output_directory" => self.output_directory = value.trim().to_string(),
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.country_of_interest.is_empty() {
            return invalid("country_of_interest is empty".into());
        }
        if self.minimum_age != 0 {
            return invalid("minimum_age must be 0: life expectancy at birth needs the full age range".into());
        }
        if self.maximum_age < 1 || self.maximum_age > crate::hmd::OPEN_AGE {
            return invalid(format!("maximum_age must be in 1..={}", crate::hmd::OPEN_AGE));
        }
        if self.base_period.len() < 4 {
            return invalid("base_period needs at least 4 years (3 improvement rates)".into());
        }
        if self.forecast_horizon.first != self.base_period.last + 1 {
            return invalid(format!(
                "forecast_horizon {} must start the year after base_period {}",
                self.forecast_horizon, self.base_period
            ));
        }
        if self.blend && self.reference_countries.is_empty() {
            return invalid("blend is on but reference_countries is empty".into());
        }
        if !self.blend && !self.reference_countries.is_empty() {
            return invalid("reference_countries given but blend is off".into());
        }
        if self.blend && self.forecast_horizon.len() < 2 {
            return invalid("blending needs a forecast horizon of at least 2 years".into());
        }
        if let Some(w) = &self.reference_weights {
            if w.len() != self.reference_countries.len() || w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return invalid("reference_weights needs one positive weight per reference country".into());
            }
        }
        let mut seen = BTreeSet::new();
        for c in std::iter::once(&self.country_of_interest).chain(&self.reference_countries) {
            if !seen.insert(c) {
                return invalid(format!("country `{c}` listed twice"));
            }
        }
        ClampBand::new(self.clamp.rho_min, self.clamp.rho_max).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.clamp.rho_max >= 1.0 {
            return invalid("rho_max must be below 1".into());
        }
        if let Some(l) = self.smoothing {
            if !(l > 0.0 && l.is_finite()) {
                return invalid(format!("smoothing λ must be positive, got {l}"));
            }
        }
        self.mcmc.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        parse_levels(&join(&self.quantile_levels))?;
        Ok(())
    }

    /// Every setting, in the same layout [`RunConfig::from_ini`] reads.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[model]");
        let _ = writeln!(out, "country_of_interest = {}", self.country_of_interest);
        let _ = writeln!(out, "reference_countries = {}", self.reference_countries.join(", "));
        let _ = writeln!(out, "sex = {}", self.sex.to_string().to_ascii_lowercase());
        let _ = writeln!(out, "minimum_age = {}", self.minimum_age);
        let _ = writeln!(out, "maximum_age = {}", self.maximum_age);
        let _ = writeln!(out, "base_period = {}", self.base_period);
        let _ = writeln!(out, "forecast_horizon = {}", self.forecast_horizon);
        let _ = writeln!(out, "bayesian_core_model = {}", self.core_model);
        let _ = writeln!(out, "blend = {}", self.blend);
        let _ = writeln!(
            out,
            "reference_weights = {}",
            self.reference_weights.as_deref().map(join).unwrap_or_default()
        );
        let _ = writeln!(out, "shuffle_references = {}", self.shuffle_references);
        let _ = writeln!(out, "\n[mcmc]");
        let _ = writeln!(out, "number_of_iterations = {}", self.mcmc.n_iterations);
        let _ = writeln!(out, "number_of_adaptions = {}", self.mcmc.n_adapt);
        let _ = writeln!(out, "number_of_parallel_chains = {}", self.mcmc.n_chains);
        let _ = writeln!(out, "number_of_thinning = {}", self.mcmc.thin);
        let _ = writeln!(out, "seed = {}", self.mcmc.seed);
        let _ = writeln!(out, "\n[adjust]");
        let _ = writeln!(out, "adjust_forecasted_rho = {}", self.adjust_rho);
        let _ = writeln!(out, "rho_min = {}", self.clamp.rho_min);
        let _ = writeln!(out, "rho_max = {}", self.clamp.rho_max);
        let _ = writeln!(out, "\n[data]");
        let _ = writeln!(
            out,
            "rates_source = {}",
            match self.rates_source {
                RatesSource::Counts => "counts",
                RatesSource::Mx => "mx",
            }
        );
        let _ = writeln!(
            out,
            "fill_policy = {}",
            match self.fill_policy {
                FillPolicy::Error => "error",
                FillPolicy::CarryDownAge => "carry-down-age",
            }
        );
        match self.smoothing {
            None => {
                let _ = writeln!(out, "smoothing = off");
            }
            Some(l) => {
                let _ = writeln!(out, "smoothing = {l}");
            }
        }
        let _ = writeln!(out, "\n[output]");
        let _ = writeln!(out, "quantile_levels = {}", join(&self.quantile_levels));
        let _ = writeln!(
            out,
            "propagation = {}",
            match self.propagation {
                Propagation::Literal => "literal",
                Propagation::ExactLog => "exact-log",
            }
        );
        let _ = writeln!(out, "forecast_noise = {}", self.channel == Channel::WithNoise);
        let _ = writeln!(out, "output_directory = {}", self.output_directory);
        out
    }

    pub fn ages(&self) -> (u32, u32) {
        (self.minimum_age, self.maximum_age)
    }

    /// Seed for one country's sampler run, derived from the run seed and
    /// the country's position (0 = country of interest).
    pub fn country_seed(&self, position: usize) -> u64 {
        self.mcmc
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(position as u64)
    }
}

fn join(levels: &[f64]) -> String {
    levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", ")
}
