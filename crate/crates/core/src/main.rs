use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use morticast::config::{parse_levels, ConfigError, CoreModel, RunConfig};
use morticast::diagnostics::{diagnose, export_trace, report_csv, report_table, RafteryLewisSettings};
use morticast::improvement::improvement_rates;
use morticast::pipeline::{
    base_improvement, compare_models, fit_country, read_error_csv, run_prospective, run_retrospective, HmdSource,
    PipelineError, DATA_DIR_ENV,
};
use morticast::sampler::PosteriorDraws;

/// Bayesian mortality forecasting from Human Mortality Database files.
#[derive(Parser)]
#[command(name = "morticast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read HMD files and write the death-rate surface as CSV.
    Ingest(Common),
    /// Write improvement rates of the base period as CSV.
    Improve(Common),
    /// Fit the core model for the country of interest and write its draws.
    Fit(Common),
    /// Forecast beyond the base period.
    Forecast(Common),
    /// Retrospective forecast compared with observed life expectancy.
    Backtest(Common),
    /// Autocorrelation and Raftery-Lewis diagnostics for saved draws.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Draws CSV; defaults to draws.csv in the output directory.
        #[arg(long)]
        draws: Option<PathBuf>,
        /// Parameters to check; defaults to every parameter without an age index.
        #[arg(long, value_delimiter = ',')]
        parameters: Vec<String>,
        #[arg(long, default_value_t = 40)]
        max_lag: usize,
    },
    /// Tabulate `year,E_t` error files side by side.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Error tables; each file's stem labels its row.
        files: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// INI configuration or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured core model.
    #[arg(long, value_parser = parse_model)]
    model: Option<CoreModel>,
    /// Forecast the country of interest alone, ignoring reference countries.
    #[arg(long)]
    no_blend: bool,
    /// Comma-separated quantile levels.
    #[arg(long)]
    quantiles: Option<String>,
    /// Directory of HMD files; defaults to $MORTICAST_DATA_DIR.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

fn parse_model(s: &str) -> Result<CoreModel, String> {
    s.parse()
}

impl Common {
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| PipelineError::Io {
                    path: path.clone(),
                    msg: e.to_string(),
                })?;
                RunConfig::from_ini(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.mcmc.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_directory = out.to_string_lossy().into_owned();
        }
        if let Some(model) = self.model {
            cfg.core_model = model;
        }
        if self.no_blend {
            cfg.blend = false;
            cfg.reference_countries.clear();
            cfg.reference_weights = None;
        }
        if let Some(q) = &self.quantiles {
            cfg.quantile_levels = parse_levels(q)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn source(&self) -> Result<HmdSource, PipelineError> {
        match &self.data_dir {
            Some(dir) => Ok(HmdSource::new(dir)),
            None => HmdSource::from_env().ok_or_else(|| {
                ConfigError::Invalid(format!("set {DATA_DIR_ENV} or pass --data-dir")).into()
            }),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::Io {
            path: dir.to_path_buf(),
            msg: e.to_string(),
        })?;
    }
    fs::write(path, text).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Ingest(common) => {
            let cfg = common.config()?;
            let mut source = common.source()?;
            let surface = source.surface(&cfg.country_of_interest, &cfg, cfg.base_period)?;
            write(&Path::new(&cfg.output_directory).join("surface.csv"), &surface.to_csv())
        }
        Command::Improve(common) => {
            let cfg = common.config()?;
            let mut source = common.source()?;
            let surface = source.surface(&cfg.country_of_interest, &cfg, cfg.base_period)?;
            let rho = match cfg.smoothing {
                Some(_) => base_improvement(&surface, &cfg)?,
                None => improvement_rates(&surface)?,
            };
            write(&Path::new(&cfg.output_directory).join("improvement.csv"), &rho.to_csv())
        }
        Command::Fit(common) => {
            let cfg = common.config()?;
            let mut source = common.source()?;
            let surface = source.surface(&cfg.country_of_interest, &cfg, cfg.base_period)?;
            let fit = fit_country(
                &cfg.country_of_interest,
                &base_improvement(&surface, &cfg)?,
                &cfg,
                cfg.country_seed(0),
            )?;
            let out = Path::new(&cfg.output_directory);
            write(&out.join("draws.csv"), &fit.draws.to_csv())?;
            write(&out.join("config.ini"), &cfg.to_ini())
        }
        Command::Forecast(common) => {
            let cfg = common.config()?;
            let report = run_prospective(&cfg, &mut common.source()?)?;
            for path in report.write(Path::new(&cfg.output_directory))? {
                println!("wrote {}", path.display());
            }
            print!("{}", report.interval_summary());
            Ok(())
        }
        Command::Backtest(common) => {
            let cfg = common.config()?;
            let report = run_retrospective(&cfg, &mut common.source()?)?;
            for path in report.write(Path::new(&cfg.output_directory))? {
                println!("wrote {}", path.display());
            }
            if let Some(c) = report.comparison() {
                print!("{}", c?.to_text());
            }
            Ok(())
        }
        Command::Diagnose {
            common,
            draws,
            parameters,
            max_lag,
        } => {
            let cfg = common.config()?;
            let out = PathBuf::from(&cfg.output_directory);
            let path = draws.unwrap_or_else(|| out.join("draws.csv"));
            let text = fs::read_to_string(&path).map_err(|e| PipelineError::Io {
                path: path.clone(),
                msg: e.to_string(),
            })?;
            let draws = PosteriorDraws::from_csv(&text, cfg.mcmc).map_err(|e| PipelineError::Io {
                path: path.clone(),
                msg: e.to_string(),
            })?;
            let parameters = if parameters.is_empty() {
                draws
                    .parameter_names()
                    .iter()
                    .filter(|n| !n.contains('['))
                    .cloned()
                    .collect()
            } else {
                parameters
            };
            let rows = diagnose(&draws, &parameters, max_lag, RafteryLewisSettings::default()).map_err(bad_parameter)?;
            for p in &parameters {
                let trace = export_trace(&draws, p).map_err(bad_parameter)?;
                write(&out.join(format!("trace_{}.csv", p.replace(['[', ']'], "_"))), &trace)?;
            }
            write(&out.join("diagnostics.csv"), &report_csv(&rows))?;
            print!("{}", report_table(&rows));
            Ok(())
        }
        Command::Compare { common, files } => {
            let cfg = common.config()?;
            let mut reports = Vec::new();
            for f in &files {
                let text = fs::read_to_string(f).map_err(|e| PipelineError::Io {
                    path: f.clone(),
                    msg: e.to_string(),
                })?;
                let label = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                reports.push((label, read_error_csv(&text)?));
            }
            let table = compare_models(&reports)?;
            write(&Path::new(&cfg.output_directory).join("comparison.csv"), &table.to_csv())?;
            print!("{}", table.to_text());
            Ok(())
        }
    }
}

fn bad_parameter(e: morticast::diagnostics::DiagnosticsError) -> PipelineError {
    PipelineError::Config(ConfigError::Invalid(e.to_string()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("morticast: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
