//! Convergence and run-length diagnostics: autocorrelation, trace export
//! and the Raftery-Lewis run-length criterion.

use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::sampler::{quantile_sorted, PosteriorDraws, SamplerError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("series of length {len} is too short for lag {max_lag}")]
    BadLag { len: usize, max_lag: usize },
    #[error("series of length {len} is too short; need at least {need}")]
    SeriesTooShort { len: usize, need: usize },
    #[error("binarised series has a single state or an absorbing state")]
    DegenerateBinarization,
    #[error("q, r and s must lie in (0, 1); got q={q}, r={r}, s={s}")]
    BadSettings { q: f64, r: f64, s: f64 },
    #[error("trace CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Sample autocorrelation at lags `0..=max_lag`, with the autocovariance
/// divided by n at every lag.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>, DiagnosticsError> {
    let n = series.len();
    if max_lag == 0 || max_lag >= n {
        return Err(DiagnosticsError::BadLag { len: n, max_lag });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = dev.iter().map(|d| d * d).sum::<f64>();
    if c0 <= 0.0 {
        return Err(DiagnosticsError::ZeroVariance);
    }
    Ok((0..=max_lag)
        .map(|lag| dev[..n - lag].iter().zip(&dev[lag..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RafteryLewisSettings {
    /// Quantile to estimate.
    pub q: f64,
    /// Required accuracy of the estimated quantile's probability.
    pub r: f64,
    /// Probability of attaining that accuracy.
    pub s: f64,
    /// Tolerance for the burn-in calculation.
    pub eps: f64,
}

impl Default for RafteryLewisSettings {
    fn default() -> Self {
        Self {
            q: 0.025,
            r: 0.005,
            s: 0.95,
            eps: 0.001,
        }
    }
}

impl RafteryLewisSettings {
    fn validate(&self) -> Result<(), DiagnosticsError> {
        let ok = |v: f64| v > 0.0 && v < 1.0;
        if ok(self.q) && ok(self.r) && ok(self.s) && ok(self.eps) {
            Ok(())
        } else {
            Err(DiagnosticsError::BadSettings {
                q: self.q,
                r: self.r,
                s: self.s,
            })
        }
    }

    fn phi(&self) -> f64 {
        Normal::standard().inverse_cdf((1.0 + self.s) / 2.0)
    }

    /// Run length needed if the draws were independent.
    pub fn n_min(&self) -> usize {
        let phi = self.phi();
        (phi * phi * self.q * (1.0 - self.q) / (self.r * self.r)).ceil() as usize
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RafteryLewisResult {
    pub q: f64,
    pub r: f64,
    pub s: f64,
    /// Burn-in length.
    pub M: usize,
    /// Total run length, burn-in included.
    pub N: usize,
    pub Nmin: usize,
    /// Dependence factor N / Nmin.
    pub I: f64,
    pub k_thin: usize,
}

/// Counts of consecutive triples `(a, b, c)` in a binary series.
fn triple_counts(x: &[bool]) -> [[[f64; 2]; 2]; 2] {
    let mut t = [[[0.0; 2]; 2]; 2];
    for w in x.windows(3) {
        t[w[0] as usize][w[1] as usize][w[2] as usize] += 1.0;
    }
    t
}

/// G² statistic of a first-order against a second-order Markov chain, less
/// the BIC penalty; negative means first order suffices.
fn markov_bic(x: &[bool]) -> f64 {
    let t = triple_counts(x);
    let mut g2 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                if t[i][j][k] > 0.0 {
                    let fitted = (t[i][j][0] + t[i][j][1]) * (t[0][j][k] + t[1][j][k])
                        / (t[0][j][0] + t[0][j][1] + t[1][j][0] + t[1][j][1]);
                    g2 += 2.0 * t[i][j][k] * (t[i][j][k] / fitted).ln();
                }
            }
        }
    }
    g2 - 2.0 * ((x.len() - 2) as f64).ln()
}

/// Raftery-Lewis run-length diagnostic for estimating the `q` quantile.
///
/// The series is cut at its empirical `q` quantile into a 0/1 chain; the
/// chain is thinned until a first-order Markov model beats a second-order
/// one by BIC, and burn-in and run length follow from the two transition
/// probabilities of the thinned chain.
pub fn raftery_lewis(series: &[f64], settings: RafteryLewisSettings) -> Result<RafteryLewisResult, DiagnosticsError> {
    settings.validate()?;
    let n_min = settings.n_min();
    let need = n_min.div_ceil(10).max(3);
    if series.len() < need {
        return Err(DiagnosticsError::SeriesTooShort {
            len: series.len(),
            need,
        });
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = quantile_sorted(&sorted, settings.q);
    let binary: Vec<bool> = series.iter().map(|&v| v <= cut).collect();
    if binary.iter().all(|&b| b) || binary.iter().all(|&b| !b) {
        return Err(DiagnosticsError::DegenerateBinarization);
    }

    let mut k_thin = 0;
    let thinned = loop {
        k_thin += 1;
        let t: Vec<bool> = binary.iter().step_by(k_thin).copied().collect();
        if t.len() < 3 {
            return Err(DiagnosticsError::SeriesTooShort {
                len: series.len(),
                need: 3 * k_thin,
            });
        }
        if markov_bic(&t) < 0.0 {
            break t;
        }
    };

    let mut pairs = [[0.0f64; 2]; 2];
    for w in thinned.windows(2) {
        pairs[w[0] as usize][w[1] as usize] += 1.0;
    }
    // State 0 is "above the cut", state 1 "at or below".
    let alpha = pairs[0][1] / (pairs[0][0] + pairs[0][1]);
    let beta = pairs[1][0] / (pairs[1][0] + pairs[1][1]);
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(DiagnosticsError::DegenerateBinarization);
    }
    let phi = settings.phi();
    let decay = (1.0 - alpha - beta).abs();
    let temp_burn = if decay > 0.0 {
        (settings.eps * (alpha + beta) / alpha.max(beta)).ln() / decay.ln()
    } else {
        0.0
    };
    let burn = temp_burn.ceil().max(0.0) as usize * k_thin;
    let temp_prec = (2.0 - alpha - beta) * alpha * beta * phi * phi / ((alpha + beta).powi(3) * settings.r * settings.r);
    let keep = (temp_prec * k_thin as f64).ceil() as usize;
    let total = burn + keep;
    Ok(RafteryLewisResult {
        q: settings.q,
        r: settings.r,
        s: settings.s,
        M: burn,
        N: total,
        Nmin: n_min,
        I: total as f64 / n_min as f64,
        k_thin,
    })
}

/// CSV `chain,iter,value` of one parameter's kept draws.
pub fn export_trace(draws: &PosteriorDraws, parameter: &str) -> Result<String, DiagnosticsError> {
    let p = draws.index_of(parameter)?;
    let mut out = String::from("chain,iter,value\n");
    for c in 0..draws.n_chains() {
        for i in 0..draws.n_kept() {
            let _ = writeln!(out, "{c},{i},{}", draws.get(c, i, p));
        }
    }
    Ok(out)
}

/// Parses a trace CSV back into one series per chain.
pub fn read_trace(text: &str) -> Result<Vec<Vec<f64>>, DiagnosticsError> {
    let mut chains: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = |msg: &str| DiagnosticsError::Csv {
            line: i + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad("expected chain,iter,value"));
        }
        let c: usize = f[0].parse().map_err(|_| bad("bad chain"))?;
        let it: usize = f[1].parse().map_err(|_| bad("bad iter"))?;
        let v: f64 = f[2].parse().map_err(|_| bad("bad value"))?;
        if c == chains.len() {
            chains.push(Vec::new());
        }
        if c + 1 != chains.len() || it != chains[c].len() {
            return Err(bad("rows out of order"));
        }
        chains[c].push(v);
    }
    Ok(chains)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    pub parameter: String,
    /// ACF of the pooled series, lags 0..=max_lag.
    pub acf: Vec<f64>,
    pub rl: Result<RafteryLewisResult, DiagnosticsError>,
    /// Where the trace CSV was written, if it was.
    pub trace_path: Option<std::path::PathBuf>,
}

/// ACF and Raftery-Lewis for each named parameter, on the chains pooled
/// end to end.
pub fn diagnose(
    draws: &PosteriorDraws,
    parameters: &[String],
    max_lag: usize,
    settings: RafteryLewisSettings,
) -> Result<Vec<ChainDiagnostics>, DiagnosticsError> {
    parameters
        .iter()
        .map(|name| {
            let series = draws.series(name)?;
            let acf = match autocorrelation(&series, max_lag.min(series.len().saturating_sub(1)).max(1)) {
                Ok(a) => a,
                Err(DiagnosticsError::ZeroVariance) => vec![f64::NAN; max_lag + 1],
                Err(e) => return Err(e),
            };
            Ok(ChainDiagnostics {
                parameter: name.clone(),
                acf,
                rl: raftery_lewis(&series, settings),
                trace_path: None,
            })
        })
        .collect()
}

/// CSV `parameter,M,N,Nmin,I,k_thin,acf1`; failed diagnostics leave the
/// numeric fields empty.
pub fn report_csv(rows: &[ChainDiagnostics]) -> String {
    let mut out = String::from("parameter,M,N,Nmin,I,k_thin,acf1\n");
    for d in rows {
        let acf1 = d.acf.get(1).copied().unwrap_or(f64::NAN);
        match &d.rl {
            Ok(r) => {
                let _ = writeln!(out, "{},{},{},{},{:.3},{},{acf1:.4}", d.parameter, r.M, r.N, r.Nmin, r.I, r.k_thin);
            }
            Err(_) => {
                let _ = writeln!(out, "{},,,,,,{acf1:.4}", d.parameter);
            }
        }
    }
    out
}

/// Plain-text table of N and I per parameter.
pub fn report_table(rows: &[ChainDiagnostics]) -> String {
    let width = rows.iter().map(|d| d.parameter.len()).max().unwrap_or(9).max(9);
    let mut out = format!("{:<width$}  {:>8}  {:>6}\n", "parameter", "N", "I");
    for d in rows {
        match &d.rl {
            Ok(r) => {
                let _ = writeln!(out, "{:<width$}  {:>8}  {:>6.3}", d.parameter, group_thousands(r.N), r.I);
            }
            Err(e) => {
                let _ = writeln!(out, "{:<width$}  {e}", d.parameter);
            }
        }
    }
    out
}

fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::McmcConfig;

    #[test]
    fn nmin_default() {
        assert_eq!(RafteryLewisSettings::default().n_min(), 3746);
    }

    #[test]
    fn table2_ratio() {
        assert!((3741.0 / 3746.0 - 0.999f64).abs() < 5e-4);
    }

    #[test]
    fn alternating_acf() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let acf = autocorrelation(&x, 2).unwrap();
        assert_eq!(acf[0], 1.0);
        assert!((acf[1] + 1.0).abs() < 0.01);
    }

    #[test]
    fn acf_errors() {
        assert_eq!(autocorrelation(&[1.0; 10], 2).unwrap_err(), DiagnosticsError::ZeroVariance);
        assert!(matches!(autocorrelation(&[1.0, 2.0], 2), Err(DiagnosticsError::BadLag { .. })));
    }

    #[test]
    fn degenerate_and_short() {
        assert!(matches!(
            raftery_lewis(&[0.0; 10], RafteryLewisSettings::default()),
            Err(DiagnosticsError::SeriesTooShort { .. })
        ));
        assert_eq!(
            raftery_lewis(&[1.0; 1000], RafteryLewisSettings::default()).unwrap_err(),
            DiagnosticsError::DegenerateBinarization
        );
    }

    #[test]
    fn trace_round_trip() {
        let values: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect();
        let draws = PosteriorDraws::from_parts(vec!["a".into(), "b".into()], 2, 3, values, McmcConfig::default());
        let text = export_trace(&draws, "b").unwrap();
        assert_eq!(text.lines().count(), 7);
        let chains = read_trace(&text).unwrap();
        assert_eq!(chains[1], draws.chain_series(1, 1));
        assert!(matches!(export_trace(&draws, ""), Err(DiagnosticsError::Sampler(_))));
    }

    #[test]
    fn thousands() {
        assert_eq!(group_thousands(3741), "3,741");
        assert_eq!(group_thousands(999), "999");
        assert_eq!(group_thousands(1234567), "1,234,567");
    }
}
