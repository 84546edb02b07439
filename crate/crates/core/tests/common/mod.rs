//! Synthetic data and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use morticast::hmd::HmdTable;
use morticast::improvement::ImprovementSurface;
use morticast::{McmcConfig, MortalitySurface, Sex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn small_mcmc(seed: u64) -> McmcConfig {
    McmcConfig {
        n_chains: 2,
        n_iterations: 1500,
        n_adapt: 300,
        thin: 3,
        seed,
    }
}

pub fn tiny_mcmc(seed: u64) -> McmcConfig {
    McmcConfig {
        n_chains: 2,
        n_iterations: 200,
        n_adapt: 100,
        thin: 2,
        seed,
    }
}

/// ρ[x, t] = b1[x] + b2[x]·t + σ·ε with t = 1..=n_years.
pub fn linear_rho(b1: &[f64], b2: &[f64], n_years: usize, sigma: f64, seed: u64) -> ImprovementSurface {
    let mut r = rng(seed);
    let mut v = Vec::new();
    for x in 0..b1.len() {
        for t in 1..=n_years {
            v.push(b1[x] + b2[x] * t as f64 + sigma * normal(&mut r));
        }
    }
    ImprovementSurface::new(
        (0..b1.len() as u32).collect(),
        (1966..1966 + n_years as i32).collect(),
        v,
    )
    .unwrap()
}

/// ρ[x, t] = exp(b1[x] + b2[x]·ln t) + σ·ε with t = 1..=n_years.
pub fn loglog_rho(b1: &[f64], b2: &[f64], n_years: usize, sigma: f64, seed: u64) -> ImprovementSurface {
    let mut r = rng(seed);
    let mut v = Vec::new();
    for x in 0..b1.len() {
        for t in 1..=n_years {
            v.push((b1[x] + b2[x] * (t as f64).ln()).exp() + sigma * normal(&mut r));
        }
    }
    ImprovementSurface::new(
        (0..b1.len() as u32).collect(),
        (1966..1966 + n_years as i32).collect(),
        v,
    )
    .unwrap()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn ln_normal(x: f64, mean: f64, sd: f64) -> f64 {
    -0.5 * (2.0 * PI * sd * sd).ln() - (x - mean).powi(2) / (2.0 * sd * sd)
}

/// Linear-model log posterior written out cell by cell, with the bivariate
/// layer factorised as β1 ~ N(μ1, ω1²), β2 | β1 ~ N(μ2 + r·ω2/ω1·(β1 − μ1), ω2²(1 − r²)).
#[allow(clippy::too_many_arguments)]
pub fn linear_density_oracle(
    rho: &[Vec<f64>],
    b1: &[f64],
    b2: &[f64],
    mu: (f64, f64),
    omega: (f64, f64),
    r: f64,
    sigma: f64,
) -> f64 {
    let mut lp = 0.0;
    for x in 0..rho.len() {
        for (j, y) in rho[x].iter().enumerate() {
            let t = (j + 1) as f64;
            lp += ln_normal(*y, b1[x] + b2[x] * t, sigma);
        }
        lp += ln_normal(b1[x], mu.0, omega.0);
        let cond_mean = mu.1 + r * omega.1 / omega.0 * (b1[x] - mu.0);
        lp += ln_normal(b2[x], cond_mean, omega.1 * (1.0 - r * r).sqrt());
    }
    // U(0,1) σ, two U(−0.1,0.1) μ, two U(0,1) ω, U(−1,1) r.
    lp + 0.0 + 2.0 * (1.0f64 / 0.2).ln() + 0.0 + (0.5f64).ln()
}

/// Log-log model log posterior written out cell by cell.
pub fn loglog_density_oracle(
    rho: &[Vec<f64>],
    theta1: &[f64],
    theta2: &[f64],
    b1: &[f64],
    b2: &[f64],
    sigmas: (f64, f64, f64),
) -> f64 {
    let mut lp = 0.0;
    for x in 0..rho.len() {
        for (j, y) in rho[x].iter().enumerate() {
            let t = (j + 1) as f64;
            lp += ln_normal(*y, (b1[x] + b2[x] * t.ln()).exp(), sigmas.0);
        }
        lp += ln_normal(b1[x], theta1[x], sigmas.1);
        lp += ln_normal(b2[x], theta2[x], sigmas.2);
    }
    lp
}

/// e0 from l, L and T summed column by column; frozen reference for the
/// library's life table.
pub fn life_table_oracle(m: &[f64]) -> f64 {
    let n = m.len();
    let mut l = vec![0.0; n + 1];
    let mut big_l = vec![0.0; n];
    l[0] = 1.0;
    for x in 0..n {
        if x == n - 1 {
            big_l[x] = l[x] / m[x];
            break;
        }
        let a = if x == 0 { (0.07 + 1.7 * m[0]).clamp(0.01, 0.5) } else { 0.5 };
        let q = (m[x] / (1.0 + (1.0 - a) * m[x])).min(1.0);
        let d = l[x] * q;
        l[x + 1] = l[x] - d;
        big_l[x] = l[x + 1] + a * d;
    }
    big_l.iter().sum::<f64>() / l[0]
}

/// Gompertz-Makeham-like rates falling at an age-dependent pace, with
/// multiplicative noise; ages 0..=110.
pub fn synthetic_country(years: std::ops::RangeInclusive<i32>, pace: f64, noise: f64, seed: u64) -> MortalitySurface {
    let mut r = rng(seed);
    let years: Vec<i32> = years.collect();
    let y0 = years[0];
    let mut rates = Vec::new();
    for x in 0..=110u32 {
        let xf = x as f64;
        let base = if x == 0 {
            0.02
        } else {
            0.0003 * (-0.3 * xf).exp() + 0.00005 + 0.00004 * (0.095 * xf).exp()
        };
        let improvement = pace * (1.5 - xf / 110.0);
        for &y in &years {
            let m = base * (-(improvement) * (y - y0) as f64).exp() * (noise * normal(&mut r)).exp();
            rates.push(m.min(1.5));
        }
    }
    MortalitySurface::new((0..=110).collect(), years, rates, Sex::Female, "synthetic").unwrap()
}

/// Writes `<dir>/<code>.Mx_1x1.txt` for a synthetic surface.
pub fn write_mx_file(dir: &Path, code: &str, surface: &MortalitySurface) -> PathBuf {
    let table = HmdTable::from_surface(surface, code).unwrap();
    let path = dir.join(format!("{code}.Mx_1x1.txt"));
    std::fs::write(&path, table.to_hmd_text()).unwrap();
    path
}

/// A fresh, empty scratch directory under the target directory.
pub fn scratch_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
