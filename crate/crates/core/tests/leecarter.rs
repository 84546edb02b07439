mod common;

use common::*;
use morticast::leecarter::{fit_leecarter, forecast_leecarter, k_quantile};
use morticast::{MortalitySurface, Sex};

/// Leading singular pair of a row-major matrix by power iteration.
fn leading_pair(z: &[Vec<f64>]) -> (f64, Vec<f64>, Vec<f64>) {
    let (n, m) = (z.len(), z[0].len());
    let mut v = vec![1.0; m];
    let mut u = vec![0.0; n];
    for _ in 0..500 {
        for i in 0..n {
            u[i] = (0..m).map(|j| z[i][j] * v[j]).sum();
        }
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= nu);
        for j in 0..m {
            v[j] = (0..n).map(|i| z[i][j] * u[i]).sum();
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
    }
    let s: f64 = (0..n).map(|i| u[i] * (0..m).map(|j| z[i][j] * v[j]).sum::<f64>()).sum();
    (s, u, v)
}

fn rank_two_surface() -> (MortalitySurface, Vec<Vec<f64>>) {
    let (n, m) = (10usize, 10usize);
    let a: Vec<f64> = (0..n).map(|x| -6.0 + 0.3 * x as f64).collect();
    let mut log_m = vec![vec![0.0; m]; n];
    for x in 0..n {
        for t in 0..m {
            let tf = t as f64 - 4.5;
            let b1 = 0.05 + 0.01 * x as f64;
            let b2 = ((x as f64) * 0.7).sin() * 0.3;
            log_m[x][t] = a[x] + b1 * (-1.5 * tf) + b2 * 0.2 * (tf * tf - 8.25);
        }
    }
    let rates: Vec<f64> = log_m.iter().flatten().map(|v| v.exp()).collect();
    let s = MortalitySurface::new((0..n as u32).collect(), (1980..1990).collect(), rates, Sex::Male, "r2").unwrap();
    (s, log_m)
}

#[test]
fn fit_matches_power_iteration_and_leaves_second_component() {
    let (surface, log_m) = rank_two_surface();
    let fit = fit_leecarter(&surface).unwrap();
    let (n, m) = (log_m.len(), log_m[0].len());
    let centred: Vec<Vec<f64>> = log_m
        .iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / m as f64;
            row.iter().map(|v| v - mean).collect()
        })
        .collect();
    for x in 0..n {
        let mean = log_m[x].iter().sum::<f64>() / m as f64;
        assert!((fit.a[x] - mean).abs() < 1e-10);
    }
    let (s1, u, v) = leading_pair(&centred);
    let scale: f64 = u.iter().sum();
    for x in 0..n {
        assert!((fit.b[x] - u[x] / scale).abs() < 1e-8, "b[{x}]");
    }
    for t in 0..m {
        assert!((fit.k[t] - s1 * v[t] * scale).abs() < 1e-8, "k[{t}]");
    }
    assert!((fit.b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(fit.k.iter().sum::<f64>().abs() < 1e-10);
    // Residual energy is everything past the first singular value.
    let total: f64 = centred.iter().flatten().map(|v| v * v).sum();
    let resid: f64 = (0..n)
        .flat_map(|x| (0..m).map(move |t| (x, t)))
        .map(|(x, t)| (log_m[x][t] - fit.log_rate(x, t)).powi(2))
        .sum();
    assert!((resid - (total - s1 * s1)).abs() < 1e-8 * total);
    assert!(resid > 1e-6);
}

#[test]
fn fan_is_ordered_and_centred() {
    let surface = synthetic_country(1950..=1990, 0.015, 0.02, 4);
    let fit = fit_leecarter(&surface).unwrap();
    let levels = [0.05, 0.5, 0.95];
    let jumpoff = surface.column(surface.years().len() - 1).to_vec();
    let years: Vec<i32> = (1991..2011).collect();
    let fan = forecast_leecarter(&fit, &jumpoff, &years, &levels).unwrap();
    for s in 0..years.len() {
        assert!(fan.e0_fan.get(0, s) < fan.e0_fan.get(1, s));
        assert!(fan.e0_fan.get(1, s) < fan.e0_fan.get(2, s));
    }
    let w = fan.e0_fan.interval_width(0.9).unwrap();
    assert!(w.windows(2).all(|p| p[1] > p[0]));
    assert!((k_quantile(&fit, 5, 0.5) - (fit.k.last().unwrap() + 5.0 * fit.drift)).abs() < 1e-12);
    assert!(fit.drift < 0.0);
}
