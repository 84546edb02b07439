mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use common::*;
use morticast::config::{CoreModel, RunConfig};
use morticast::pipeline::{compare_models, read_error_csv, run_prospective, run_retrospective, HmdSource};

const EXPECTED_KEYS: &[(&str, &[&str])] = &[
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
    ("data", &["rates_source", "fill_policy", "smoothing"]),
    ("output", &["quantile_levels", "propagation", "forecast_noise", "output_directory"]),
];

/// Three synthetic countries, 1950–2010, as Mx files.
fn data_dir(name: &str) -> PathBuf {
    let dir = scratch_dir(name);
    for (i, (code, pace)) in [("AAA", 0.012), ("BBB", 0.018), ("CCC", 0.015)].iter().enumerate() {
        write_mx_file(&dir, code, &synthetic_country(1950..=2010, *pace, 0.03, i as u64 + 1));
    }
    dir
}

fn config_text(extra_model: &str) -> String {
    format!(
        "[model]
country_of_interest = AAA
sex = female
base_period = 1960-1990
forecast_horizon = 1991-2010
bayesian_core_model = loglog
{extra_model}

[mcmc]
number_of_iterations = 400
number_of_adaptions = 200
number_of_parallel_chains = 2
number_of_thinning = 2
seed = 17

[data]
rates_source = mx

[output]
quantile_levels = 0.025, 0.1, 0.5, 0.9, 0.975
"
    )
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn backtest_is_reproducible_and_manifest_replays() {
    let data = data_dir("pipe_repro");
    let cfg = RunConfig::from_ini(&config_text("reference_countries = BBB, CCC")).unwrap();
    assert!(cfg.blend);
    let (out1, out2) = (scratch_dir("pipe_repro_out1"), scratch_dir("pipe_repro_out2"));
    let r1 = run_retrospective(&cfg, &mut HmdSource::new(&data)).unwrap();
    r1.write(&out1).unwrap();
    run_retrospective(&cfg, &mut HmdSource::new(&data)).unwrap().write(&out2).unwrap();
    assert_eq!(read_all(&out1), read_all(&out2));

    // The manifest is a complete configuration on its own.
    let manifest = fs::read_to_string(out1.join("manifest.ini")).unwrap();
    let replayed = RunConfig::from_ini(&manifest).unwrap();
    assert_eq!(replayed, cfg);
    let ini = ini::Ini::load_from_str(&manifest).unwrap();
    for (section, keys) in EXPECTED_KEYS {
        let props = ini.section(Some(*section)).unwrap_or_else(|| panic!("no [{section}]"));
        for key in *keys {
            assert!(props.contains_key(key), "manifest lacks {section}.{key}");
        }
    }
    assert_eq!(r1.inputs.len(), 3);
    assert!(manifest.contains("AAA.Mx_1x1.txt sha256:"));

    // A replay from the manifest reproduces the outputs.
    let out3 = scratch_dir("pipe_repro_out3");
    run_retrospective(&replayed, &mut HmdSource::new(&data)).unwrap().write(&out3).unwrap();
    assert_eq!(read_all(&out1), read_all(&out3));

    let errors = r1.errors.as_ref().unwrap();
    assert_eq!(errors.years, (1991..=2010).collect::<Vec<_>>());
    assert!(errors.mean_absolute < 5.0, "{}", errors.mean_absolute);
    let table = fs::read_to_string(out1.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn prospective_run_covers_the_horizon() {
    let data = data_dir("pipe_prosp");
    let mut cfg = RunConfig::from_ini(&config_text("")).unwrap();
    cfg.base_period = morticast::config::YearSpan::new(1980, 2010);
    cfg.forecast_horizon = morticast::config::YearSpan::new(2011, 2049);
    cfg.core_model = CoreModel::Linear;
    let report = run_prospective(&cfg, &mut HmdSource::new(&data)).unwrap();
    assert_eq!(report.fan.e0_fan.years.len(), 39);
    let median = report.fan.e0_fan.series(report.fan.e0_fan.level_index(0.5).unwrap());
    assert!(median.windows(2).all(|w| w[1] > w[0]));
    let widths = report.fan.e0_fan.interval_width(0.95).unwrap();
    assert!(widths.last().unwrap() > widths.first().unwrap());
    assert!(report.errors.is_none() && report.baseline.is_none());
}

#[test]
fn inconsistent_configs_are_rejected() {
    let overlap = config_text("").replace("1991-2010", "1990-2010");
    assert!(RunConfig::from_ini(&overlap).is_err());
    let blend_without_refs = config_text("blend = true");
    assert!(RunConfig::from_ini(&blend_without_refs).is_err());
    let refs_without_blend = config_text("reference_countries = BBB\nblend = false");
    assert!(RunConfig::from_ini(&refs_without_blend).is_err());
    let unknown = config_text("colour = blue");
    assert!(RunConfig::from_ini(&unknown).is_err());
    let no_median = config_text("").replace("0.025, 0.1, 0.5, 0.9, 0.975", "0.1, 0.9");
    let cfg = RunConfig::from_ini(&no_median).unwrap();
    let err = run_retrospective(&cfg, &mut HmdSource::new(data_dir("pipe_nomedian"))).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn comparison_of_one_report() {
    let text = "year,E_t\n2001,0.5\n2002,-1.5\n";
    let e = read_error_csv(text).unwrap();
    let c = compare_models(&[("solo".into(), e)]).unwrap();
    assert_eq!(c.rows.len(), 1);
    assert_eq!(c.rows[0].max_absolute, 1.5);
    assert_eq!(c.rows[0].mean_absolute, 1.0);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_morticast"))
        .args(args)
        .env_remove("MORTICAST_DATA_DIR")
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let data = data_dir("pipe_cli");
    let work = scratch_dir("pipe_cli_work");
    let good = work.join("good.ini");
    fs::write(&good, config_text("")).unwrap();
    let bad = work.join("bad.ini");
    fs::write(&bad, config_text("").replace("1991-2010", "1995-2010")).unwrap();
    let out = work.join("out");
    let (g, b, d, o) = (
        good.to_str().unwrap(),
        bad.to_str().unwrap(),
        data.to_str().unwrap(),
        out.to_str().unwrap(),
    );

    let run = cli(&["backtest", "--config", g, "--data-dir", d, "--out", o]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("lee-carter"));

    assert_eq!(cli(&["backtest", "--config", b, "--data-dir", d]).status.code(), Some(2));
    assert_eq!(cli(&["forecast", "--config", g]).status.code(), Some(2));
    let empty = scratch_dir("pipe_cli_empty");
    assert_eq!(
        cli(&["forecast", "--config", g, "--data-dir", empty.to_str().unwrap(), "--out", o]).status.code(),
        Some(3)
    );

    let fit = cli(&["fit", "--config", g, "--data-dir", d, "--out", o]);
    assert!(fit.status.success());
    let diag = cli(&["diagnose", "--config", g, "--out", o]);
    assert!(diag.status.success(), "{}", String::from_utf8_lossy(&diag.stderr));
    assert!(out.join("diagnostics.csv").exists() && out.join("trace_sigma.csv").exists());

    let cmp = cli(&[
        "compare",
        "--out",
        o,
        out.join("errors.csv").to_str().unwrap(),
        out.join("lc_errors.csv").to_str().unwrap(),
    ]);
    assert!(cmp.status.success(), "{}", String::from_utf8_lossy(&cmp.stderr));
    // The saved manifest drives a rerun.
    let replay = cli(&["backtest", "--config", out.join("manifest.ini").to_str().unwrap(), "--data-dir", d, "--out", o]);
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let cfg = RunConfig::from_ini(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(RunConfig::from_ini(&cfg.to_ini()).unwrap(), cfg);
        n += 1;
    }
    assert!(n >= 3);
}
