//! Period life tables from single-year death rates.
//!
//! Conventions: a(0) = 0.07 + 1.7·m(0) capped to [0.01, 0.5], a(x) = 0.5
//! above age 0; q = m / (1 + (1 − a)·m); the last age is an open interval
//! with q = 1 and L = l / m.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LifeTableError {
    #[error("death rate at age {age} is not positive and finite: {value}")]
    NonpositiveRate { age: usize, value: f64 },
    #[error("no death rates given")]
    Empty,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTable {
    pub m: Vec<f64>,
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub l: Vec<f64>,
    pub d: Vec<f64>,
    pub L: Vec<f64>,
    pub T: Vec<f64>,
    pub e: Vec<f64>,
}

impl LifeTable {
    /// Oldest age, the open interval.
    pub fn omega(&self) -> usize {
        self.m.len() - 1
    }

    pub fn e0(&self) -> f64 {
        self.e[0]
    }
}

pub fn infant_separation(m0: f64) -> f64 {
    (0.07 + 1.7 * m0).clamp(0.01, 0.5)
}

/// Builds a life table for ages `0..m.len()`, the last age being open.
pub fn build_lifetable(m: &[f64]) -> Result<LifeTable, LifeTableError> {
    if m.is_empty() {
        return Err(LifeTableError::Empty);
    }
    if let Some((age, &value)) = m.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(LifeTableError::NonpositiveRate { age, value });
    }
    let n = m.len();
    let w = n - 1;
    let a: Vec<f64> = (0..n)
        .map(|x| if x == 0 { infant_separation(m[0]) } else { 0.5 })
        .collect();
    let q: Vec<f64> = (0..n)
        .map(|x| {
            if x == w {
                1.0
            } else {
                (m[x] / (1.0 + (1.0 - a[x]) * m[x])).min(1.0)
            }
        })
        .collect();
    let mut l = vec![1.0; n];
    let mut d = vec![0.0; n];
    for x in 0..n {
        d[x] = l[x] * q[x];
        if x < w {
            l[x + 1] = l[x] - d[x];
        }
    }
    let big_l: Vec<f64> = (0..n)
        .map(|x| if x == w { l[w] / m[w] } else { l[x] - (1.0 - a[x]) * d[x] })
        .collect();
    let mut big_t = vec![0.0; n];
    let mut acc = 0.0;
    for x in (0..n).rev() {
        acc += big_l[x];
        big_t[x] = acc;
    }
    // Per-survivor recursion keeps e defined where l underflows to zero.
    let mut e = vec![0.0; n];
    e[w] = 1.0 / m[w];
    for x in (0..w).rev() {
        e[x] = (1.0 - (1.0 - a[x]) * q[x]) + (1.0 - q[x]) * e[x + 1];
    }
    Ok(LifeTable {
        m: m.to_vec(),
        a,
        q,
        l,
        d,
        L: big_l,
        T: big_t,
        e,
    })
}

pub fn life_expectancy_at_birth(m: &[f64]) -> Result<f64, LifeTableError> {
    Ok(build_lifetable(m)?.e0())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survival_to_open_group() {
        let mut m = vec![1e-12; 111];
        m[110] = 0.5;
        let e0 = life_expectancy_at_birth(&m).unwrap();
        assert!((e0 - 112.0).abs() < 1e-6, "{e0}");
    }

    #[test]
    fn closure_and_shape() {
        let m: Vec<f64> = (0..111).map(|x| 1e-4 * (0.09 * x as f64).exp()).collect();
        let t = build_lifetable(&m).unwrap();
        assert_eq!(t.l[0], 1.0);
        assert!(t.l.windows(2).all(|w| w[1] <= w[0]));
        assert!(t.q.iter().all(|&q| (0.0..=1.0).contains(&q)));
        assert!(t.e.iter().all(|&e| e > 0.0));
        assert_eq!(t.e[110], 1.0 / m[110]);
        assert_eq!(t.q[110], 1.0);
        assert!((t.e0() - t.T[0]).abs() < 1e-12);
    }

    #[test]
    fn doubling_rates_lowers_e0() {
        let m: Vec<f64> = (0..111).map(|x| 2e-4 * (0.085 * x as f64).exp()).collect();
        let doubled: Vec<f64> = m.iter().map(|v| 2.0 * v).collect();
        assert!(life_expectancy_at_birth(&doubled).unwrap() < life_expectancy_at_birth(&m).unwrap());
    }

    #[test]
    fn rejects_nonpositive() {
        assert_eq!(
            build_lifetable(&[0.01, 0.0, 0.5]).unwrap_err(),
            LifeTableError::NonpositiveRate { age: 1, value: 0.0 }
        );
        assert_eq!(build_lifetable(&[]).unwrap_err(), LifeTableError::Empty);
    }

    #[test]
    fn infant_separation_caps() {
        assert_eq!(infant_separation(0.0), 0.07);
        assert_eq!(infant_separation(1.0), 0.5);
        assert!((infant_separation(0.01) - 0.087).abs() < 1e-15);
    }
}
