mod common;

use common::*;
use morticast::diagnostics::{
    autocorrelation, diagnose, export_trace, raftery_lewis, read_trace, report_csv, RafteryLewisSettings,
};
use morticast::{McmcConfig, PosteriorDraws};
use rand::Rng;
use rand::seq::SliceRandom;

fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut x = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..1000 {
        x = phi * x + normal(&mut r);
    }
    for _ in 0..n {
        x = phi * x + normal(&mut r);
        out.push(x);
    }
    out
}

#[test]
fn acf_of_white_noise_is_flat() {
    let mut r = rng(1);
    let v: Vec<f64> = (0..10_000).map(|_| normal(&mut r)).collect();
    let acf = autocorrelation(&v, 20).unwrap();
    assert_eq!(acf[0], 1.0);
    assert!(acf[1..].iter().all(|a| a.abs() < 0.03), "{acf:?}");
}

#[test]
fn acf_of_ar1_matches_phi() {
    let v = ar1(0.9, 50_000, 2);
    let acf = autocorrelation(&v, 5).unwrap();
    assert!((acf[1] - 0.9).abs() < 0.02, "{}", acf[1]);
    assert!((acf[2] - 0.81).abs() < 0.03, "{}", acf[2]);
}

#[test]
fn shuffling_destroys_autocorrelation() {
    let mut v = ar1(0.95, 20_000, 3);
    v.shuffle(&mut rng(4));
    assert!(autocorrelation(&v, 1).unwrap()[1].abs() < 0.05);
}

#[test]
fn default_settings_need_3746_independent_draws() {
    assert_eq!(RafteryLewisSettings::default().n_min(), 3746);
}

#[test]
fn raftery_lewis_on_independent_draws() {
    let mut r = rng(7);
    let v: Vec<f64> = (0..20_000).map(|_| r.random::<f64>()).collect();
    let res = raftery_lewis(&v, RafteryLewisSettings::default()).unwrap();
    assert_eq!(res.Nmin, 3746);
    assert!(res.I > 0.7 && res.I < 1.3, "I = {}", res.I);
    assert_eq!(res.k_thin, 1);
}

#[test]
fn raftery_lewis_flags_sticky_chains() {
    let v = ar1(0.99, 50_000, 8);
    let res = raftery_lewis(&v, RafteryLewisSettings::default()).unwrap();
    assert!(res.I > 1.5, "I = {}", res.I);
    assert!(res.k_thin > 1);
}

#[test]
fn raftery_lewis_ignores_monotone_transforms() {
    let v = ar1(0.5, 20_000, 9);
    let w: Vec<f64> = v.iter().map(|x| (3.0 * x).exp() + 7.0).collect();
    let s = RafteryLewisSettings::default();
    assert_eq!(raftery_lewis(&v, s).unwrap(), raftery_lewis(&w, s).unwrap());
}

#[test]
fn raftery_lewis_rejects_short_series() {
    assert!(raftery_lewis(&[0.1, 0.2, 0.3], RafteryLewisSettings::default()).is_err());
}

fn synthetic_draws(n_chains: usize, n_kept: usize) -> PosteriorDraws {
    let mut r = rng(10);
    let names = vec!["sigma".to_string(), "beta1[0]".to_string()];
    let values: Vec<f64> = (0..n_chains * n_kept * 2).map(|_| r.random::<f64>()).collect();
    PosteriorDraws::from_parts(names, n_chains, n_kept, values, McmcConfig::default())
}

#[test]
fn trace_has_one_row_per_kept_draw() {
    let draws = synthetic_draws(5, 1040);
    let text = export_trace(&draws, "sigma").unwrap();
    assert_eq!(text.lines().count(), 1 + 5200);
    let chains = read_trace(&text).unwrap();
    assert_eq!(chains.len(), 5);
    assert!(chains.iter().all(|c| c.len() == 1040));
    assert_eq!(chains[3], draws.chain_series(3, 0));
}

#[test]
fn report_covers_each_parameter() {
    let draws = synthetic_draws(4, 1000);
    let rows = diagnose(&draws, &["sigma".into(), "beta1[0]".into()], 10, RafteryLewisSettings::default()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.acf.len() == 11 && r.rl.is_ok()));
    let csv = report_csv(&rows);
    assert_eq!(csv.lines().count(), 3);
    assert!(diagnose(&draws, &["nope".into()], 10, RafteryLewisSettings::default()).is_err());
}

#[test]
fn acf_of_alternating_series() {
    let v: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let acf = autocorrelation(&v, 3).unwrap();
    assert!((acf[1] + 1.0).abs() < 0.01 && (acf[2] - 1.0).abs() < 0.01, "{acf:?}");
}
