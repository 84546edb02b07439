//! Multi-chain adaptive random-walk Metropolis-within-Gibbs.
//!
//! Every sweep updates each scalar parameter once with a Gaussian
//! random-walk proposal. Step sizes are tuned toward an acceptance rate of
//! 0.44 during the first `n_adapt` sweeps only; those sweeps are discarded
//! and the kernel is frozen for every kept draw.
//!
//! Each chain draws from its own ChaCha stream derived from
//! `(seed, chain index)`, so results do not depend on how chains are
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

/// Acceptance rate the step-size adaptation aims for.
pub const TARGET_ACCEPTANCE: f64 = 0.44;

/// Stream ids `0..n_chains` belong to the chains; other consumers of the
/// run seed take ids from here upward.
pub(crate) const NOISE_STREAM: u64 = 1 << 32;
pub(crate) const SHUFFLE_STREAM: u64 = 1 << 33;

/// Minimum post-adaptation sweeps before a never-accepting parameter is
/// reported as a collapsed kernel.
const MIN_SWEEPS_FOR_REJECTION_CHECK: usize = 50;

/// Deterministic RNG for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McmcConfig {
    pub n_chains: usize,
    /// Post-adaptation sweeps per chain, before thinning.
    pub n_iterations: usize,
    /// Discarded adaptation (burn-in) sweeps per chain.
    pub n_adapt: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 5,
            n_iterations: 5200,
            n_adapt: 200,
            thin: 5,
            seed: 1,
        }
    }
}

impl McmcConfig {
    pub fn kept_per_chain(&self) -> usize {
        self.n_iterations / self.thin.max(1)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.to_string()));
        if self.n_chains == 0 {
            return bad("n_chains must be at least 1");
        }
        if self.n_iterations == 0 {
            return bad("n_iterations must be at least 1");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        if self.kept_per_chain() == 0 {
            return bad("thin exceeds n_iterations; no draws would be kept");
        }
        Ok(())
    }
}

/// Prior support of a scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Real,
    /// Open interval `(lo, hi)`.
    Interval(f64, f64),
}

impl Support {
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Support::Real => v.is_finite(),
            Support::Interval(lo, hi) => v > lo && v < hi,
        }
    }
}

/// An unnormalised log posterior over a flat parameter vector.
pub trait Target: Sync {
    fn parameter_names(&self) -> Vec<String>;

    fn support(&self, _index: usize) -> Support {
        Support::Real
    }

    fn log_density(&self, x: &[f64]) -> f64;

    /// Every term of the log density that involves `x[index]`. Only
    /// differences in this value are used, so dropping terms that do not
    /// depend on `x[index]` is allowed and is what makes sweeps cheap.
    fn conditional_log_density(&self, x: &[f64], _index: usize) -> f64 {
        self.log_density(x)
    }

    /// Starting proposal scale for `x[index]`.
    fn initial_step(&self, _index: usize, _x: &[f64]) -> f64 {
        0.1
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SamplerError {
    #[error("invalid MCMC configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} initial vectors, got {got}")]
    InitCount { expected: usize, got: usize },
    #[error("initial vector for chain {chain} has length {got}, target has {expected} parameters")]
    InitDimension { chain: usize, expected: usize, got: usize },
    #[error("initial value of `{parameter}` in chain {chain} lies outside its support")]
    InitOutsideSupport { chain: usize, parameter: String },
    #[error("log density is not finite at the initial point of chain {chain}")]
    NonFiniteDensityAtInit { chain: usize },
    #[error("every proposal for `{parameter}` in chain {chain} was rejected after adaptation")]
    AllProposalsRejected { chain: usize, parameter: String },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("probability {0} is outside (0, 1)")]
    BadProbability(f64),
    #[error("draws CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Thinned post-adaptation draws, indexed `(chain, kept iteration, parameter)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    names: Vec<String>,
    n_chains: usize,
    n_kept: usize,
    values: Vec<f64>,
    pub config: McmcConfig,
    /// Post-adaptation acceptance rate per `(chain, parameter)`.
    pub acceptance: Vec<f64>,
}

impl PosteriorDraws {
    pub fn from_parts(
        names: Vec<String>,
        n_chains: usize,
        n_kept: usize,
        values: Vec<f64>,
        config: McmcConfig,
    ) -> Self {
        assert_eq!(values.len(), names.len() * n_chains * n_kept);
        let acceptance = vec![f64::NAN; n_chains * names.len()];
        Self {
            names,
            n_chains,
            n_kept,
            values,
            config,
            acceptance,
        }
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_kept(&self) -> usize {
        self.n_kept
    }

    /// Number of pooled draws over all chains.
    pub fn n_draws(&self) -> usize {
        self.n_chains * self.n_kept
    }

    pub fn index_of(&self, name: &str) -> Result<usize, SamplerError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SamplerError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, chain: usize, iter: usize, param: usize) -> f64 {
        self.values[(chain * self.n_kept + iter) * self.names.len() + param]
    }

    /// Full parameter vector of pooled draw `d` (chain-major order).
    pub fn draw(&self, d: usize) -> &[f64] {
        let p = self.names.len();
        &self.values[d * p..(d + 1) * p]
    }

    pub fn chain_series(&self, chain: usize, param: usize) -> Vec<f64> {
        (0..self.n_kept).map(|i| self.get(chain, i, param)).collect()
    }

    /// All chains concatenated in chain order.
    pub fn pooled_series(&self, param: usize) -> Vec<f64> {
        (0..self.n_draws())
            .map(|d| self.values[d * self.names.len() + param])
            .collect()
    }

    pub fn series(&self, name: &str) -> Result<Vec<f64>, SamplerError> {
        Ok(self.pooled_series(self.index_of(name)?))
    }

    /// `chain,iter,parameter,value` rows, iteration counted over kept draws.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("chain,iter,parameter,value\n");
        for c in 0..self.n_chains {
            for i in 0..self.n_kept {
                for (p, name) in self.names.iter().enumerate() {
                    out.push_str(&format!("{c},{i},{name},{}\n", self.get(c, i, p)));
                }
            }
        }
        out
    }

    /// Reads draws written by [`PosteriorDraws::to_csv`]. The MCMC settings
    /// are not part of the CSV and are taken from `config`.
    pub fn from_csv(text: &str, config: McmcConfig) -> Result<Self, SamplerError> {
        let mut names: Vec<String> = Vec::new();
        let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| SamplerError::Csv {
                line: i + 1,
                msg: msg.into(),
            };
            // parameter names may contain commas inside brackets; split from both ends
            let (head, value) = line.rsplit_once(',').ok_or_else(|| bad("too few fields"))?;
            let mut it = head.splitn(3, ',');
            let chain: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad chain"))?;
            let iter: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad iter"))?;
            let name = it.next().ok_or_else(|| bad("missing parameter"))?;
            let value: f64 = value.trim().parse().map_err(|_| bad("bad value"))?;
            let p = match names.iter().position(|n| n == name) {
                Some(p) => p,
                None => {
                    names.push(name.to_string());
                    names.len() - 1
                }
            };
            rows.push((chain, iter, p, value));
        }
        let n_chains = rows.iter().map(|r| r.0).max().map_or(0, |c| c + 1);
        let n_kept = rows.iter().map(|r| r.1).max().map_or(0, |c| c + 1);
        let p = names.len();
        if rows.len() != n_chains * n_kept * p {
            return Err(SamplerError::Csv {
                line: 0,
                msg: "draws do not form a complete chain × iteration × parameter grid".into(),
            });
        }
        let mut values = vec![f64::NAN; rows.len()];
        for (c, i, j, v) in rows {
            values[(c * n_kept + i) * p + j] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(SamplerError::Csv {
                line: 0,
                msg: "duplicate rows in draws CSV".into(),
            });
        }
        Ok(Self::from_parts(names, n_chains, n_kept, values, config))
    }
}

/// R type-7 quantile of sorted data: linear interpolation between order
/// statistics at position `(n − 1)·p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn check_probabilities(probs: &[f64]) -> Result<(), SamplerError> {
    match probs.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        Some(&p) => Err(SamplerError::BadProbability(p)),
        None => Ok(()),
    }
}

/// Empirical quantiles, sorting a copy of `values`.
pub fn empirical_quantiles(values: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    probs.iter().map(|&p| quantile_sorted(&sorted, p)).collect()
}

/// Quantiles of one parameter over every chain's kept draws.
pub fn pooled_quantiles(
    draws: &PosteriorDraws,
    parameter: &str,
    probs: &[f64],
) -> Result<Vec<f64>, SamplerError> {
    check_probabilities(probs)?;
    Ok(empirical_quantiles(&draws.series(parameter)?, probs))
}

struct ChainOutput {
    kept: Vec<f64>,
    acceptance: Vec<f64>,
}

fn run_chain<T: Target + ?Sized>(
    target: &T,
    config: &McmcConfig,
    supports: &[Support],
    names: &[String],
    init: &[f64],
    chain: usize,
) -> Result<ChainOutput, SamplerError> {
    let dim = init.len();
    let mut rng = substream(config.seed, chain as u64);
    let mut x = init.to_vec();
    let mut log_step: Vec<f64> = (0..dim)
        .map(|i| target.initial_step(i, &x).max(f64::MIN_POSITIVE).ln())
        .collect();
    let mut accepted = vec![0usize; dim];
    let mut kept = Vec::with_capacity(config.kept_per_chain() * dim);

    for sweep in 0..config.n_adapt + config.n_iterations {
        let adapting = sweep < config.n_adapt;
        for i in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            let current = x[i];
            let proposal = current + log_step[i].exp() * z;
            let accept_prob = if supports[i].contains(proposal) {
                let before = target.conditional_log_density(&x, i);
                x[i] = proposal;
                let after = target.conditional_log_density(&x, i);
                let log_ratio = after - before;
                if log_ratio.is_nan() {
                    0.0
                } else {
                    log_ratio.min(0.0).exp()
                }
            } else {
                0.0
            };
            if u < accept_prob {
                if !adapting {
                    accepted[i] += 1;
                }
            } else {
                x[i] = current;
            }
            if adapting {
                let gain = 1.0 / ((sweep + 1) as f64).sqrt();
                log_step[i] = (log_step[i] + gain * (accept_prob - TARGET_ACCEPTANCE)).clamp(-60.0, 10.0);
            }
        }
        if !adapting && (sweep - config.n_adapt + 1) % config.thin == 0 {
            kept.extend_from_slice(&x);
        }
    }

    if config.n_iterations >= MIN_SWEEPS_FOR_REJECTION_CHECK {
        if let Some(i) = accepted.iter().position(|&a| a == 0) {
            return Err(SamplerError::AllProposalsRejected {
                chain,
                parameter: names[i].clone(),
            });
        }
    }
    let acceptance = accepted
        .iter()
        .map(|&a| a as f64 / config.n_iterations as f64)
        .collect();
    Ok(ChainOutput { kept, acceptance })
}

/// Runs `config.n_chains` chains from the given starting points.
pub fn run_chains<T: Target + ?Sized>(
    target: &T,
    config: &McmcConfig,
    inits: &[Vec<f64>],
) -> Result<PosteriorDraws, SamplerError> {
    config.validate()?;
    if inits.len() != config.n_chains {
        return Err(SamplerError::InitCount {
            expected: config.n_chains,
            got: inits.len(),
        });
    }
    let names = target.parameter_names();
    let dim = names.len();
    let supports: Vec<Support> = (0..dim).map(|i| target.support(i)).collect();
    for (chain, init) in inits.iter().enumerate() {
        if init.len() != dim {
            return Err(SamplerError::InitDimension {
                chain,
                expected: dim,
                got: init.len(),
            });
        }
        if let Some(i) = (0..dim).find(|&i| !supports[i].contains(init[i])) {
            return Err(SamplerError::InitOutsideSupport {
                chain,
                parameter: names[i].clone(),
            });
        }
        if !target.log_density(init).is_finite() {
            return Err(SamplerError::NonFiniteDensityAtInit { chain });
        }
    }

    let outputs: Vec<ChainOutput> = inits
        .par_iter()
        .enumerate()
        .map(|(c, init)| run_chain(target, config, &supports, &names, init, c))
        .collect::<Result<_, _>>()?;

    let n_kept = config.kept_per_chain();
    let mut values = Vec::with_capacity(config.n_chains * n_kept * dim);
    let mut acceptance = Vec::with_capacity(config.n_chains * dim);
    for out in outputs {
        values.extend(out.kept);
        acceptance.extend(out.acceptance);
    }
    let mut draws = PosteriorDraws::from_parts(names, config.n_chains, n_kept, values, *config);
    draws.acceptance = acceptance;
    Ok(draws)
}
