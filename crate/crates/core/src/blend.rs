//! Transition from the country of interest to reference countries over the
//! forecast horizon, and the plausibility band for forecast ρ.
//!
//! At forecast step f = 1..H the country of interest gets weight
//! w(f) = (H − f)/(H − 1): all of it in the first forecast year, none in the
//! last. The references share 1 − w(f). Blending comes first, clamping
//! second.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::projection::RhoForecast;
use crate::sampler::{substream, SHUFFLE_STREAM};

#[derive(Debug, Error, PartialEq)]
pub enum BlendError {
    #[error("forecast shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("no reference forecasts given")]
    EmptyReferences,
    #[error("horizon length must be at least 2, got {0}")]
    BadHorizon(usize),
    #[error("plan horizon {plan} does not match forecast horizon {forecast}")]
    HorizonMismatch { plan: usize, forecast: usize },
    #[error("reference weights must be positive and one per reference")]
    BadWeights,
    #[error("clamp band needs rho_min < rho_max, got [{0}, {1}]")]
    BadBand(f64, f64),
}

/// Weight of the country of interest as a function of forecast step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSchedule {
    /// w(f) = (H − f)/(H − 1).
    Linear,
    /// The same weight at every step; `Constant(1.0)` switches blending off.
    Constant(f64),
}

/// How reference draws are paired with the draws of the country of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coupling {
    /// Draw d of every forecast goes with draw d of the others.
    #[default]
    ByIndex,
    /// Each reference's draws are independently permuted first.
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendPlan {
    pub interest_label: String,
    pub reference_labels: Vec<String>,
    pub horizon_length: usize,
    pub schedule: WeightSchedule,
    /// Relative weights among references; `None` means equal.
    pub reference_weights: Option<Vec<f64>>,
    pub coupling: Coupling,
}

impl BlendPlan {
    pub fn new(interest_label: &str, reference_labels: &[&str], horizon_length: usize) -> Result<Self, BlendError> {
        let plan = Self {
            interest_label: interest_label.to_string(),
            reference_labels: reference_labels.iter().map(|s| s.to_string()).collect(),
            horizon_length,
            schedule: WeightSchedule::Linear,
            reference_weights: None,
            coupling: Coupling::ByIndex,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), BlendError> {
        if self.reference_labels.is_empty() {
            return Err(BlendError::EmptyReferences);
        }
        if self.horizon_length < 2 {
            return Err(BlendError::BadHorizon(self.horizon_length));
        }
        if let Some(w) = &self.reference_weights {
            if w.len() != self.reference_labels.len() || w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(BlendError::BadWeights);
            }
        }
        Ok(())
    }

    /// Weight of the country of interest at 1-based forecast step `f`.
    pub fn weight_of_interest(&self, f: usize) -> f64 {
        match self.schedule {
            WeightSchedule::Linear => {
                let h = self.horizon_length as f64;
                (h - f as f64) / (h - 1.0)
            }
            WeightSchedule::Constant(w) => w,
        }
    }

    fn reference_weight(&self, i: usize) -> f64 {
        match &self.reference_weights {
            Some(w) => w[i] / w.iter().sum::<f64>(),
            None => 1.0 / self.reference_labels.len() as f64,
        }
    }
}

/// Running weighted mean of reference forecasts, so references can be
/// fitted, added and dropped one at a time.
#[derive(Debug, Clone)]
pub struct ReferenceMean {
    plan: BlendPlan,
    acc: Option<RhoForecast>,
    added: usize,
}

impl ReferenceMean {
    pub fn new(plan: &BlendPlan) -> Result<Self, BlendError> {
        plan.validate()?;
        Ok(Self {
            plan: plan.clone(),
            acc: None,
            added: 0,
        })
    }

    pub fn add(&mut self, reference: &RhoForecast) -> Result<(), BlendError> {
        let i = self.added;
        if i >= self.plan.reference_labels.len() {
            return Err(BlendError::ShapeMismatch(format!(
                "plan lists {} references, got more",
                self.plan.reference_labels.len()
            )));
        }
        let w = self.plan.reference_weight(i);
        let order: Vec<usize> = match self.plan.coupling {
            Coupling::ByIndex => (0..reference.n_draws()).collect(),
            Coupling::Shuffled { seed } => {
                let mut rng = substream(seed, SHUFFLE_STREAM + i as u64);
                let mut p: Vec<usize> = (0..reference.n_draws()).collect();
                p.shuffle(&mut rng);
                p
            }
        };
        let acc = self.acc.get_or_insert_with(|| {
            RhoForecast::constant(
                reference.ages().to_vec(),
                reference.years().to_vec(),
                reference.n_draws(),
                0.0,
            )
        });
        if !acc.same_shape(reference) {
            return Err(BlendError::ShapeMismatch(format!("reference `{}`", self.plan.reference_labels[i])));
        }
        let block = reference.ages().len() * reference.years().len();
        let single = self.plan.reference_labels.len() == 1;
        let (values, mean) = acc.channels_mut();
        for (d, &src) in order.iter().enumerate() {
            let dst = d * block..(d + 1) * block;
            let from = src * block..(src + 1) * block;
            for (k, j) in dst.zip(from) {
                // A lone reference is copied, keeping the last step bit-exact.
                if single {
                    values[k] = reference.values()[j];
                    mean[k] = reference.mean()[j];
                } else {
                    values[k] += w * reference.values()[j];
                    mean[k] += w * reference.mean()[j];
                }
            }
        }
        self.added += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<RhoForecast, BlendError> {
        if self.added != self.plan.reference_labels.len() {
            return Err(BlendError::ShapeMismatch(format!(
                "plan lists {} references, {} added",
                self.plan.reference_labels.len(),
                self.added
            )));
        }
        self.acc.ok_or(BlendError::EmptyReferences)
    }
}

/// blended(d, x, f) = w(f)·interest(d, x, f) + (1 − w(f))·reference_mean(d, x, f)
/// on both channels.
pub fn blend_with_mean(
    interest: &RhoForecast,
    reference_mean: &RhoForecast,
    plan: &BlendPlan,
) -> Result<RhoForecast, BlendError> {
    plan.validate()?;
    if !interest.same_shape(reference_mean) {
        return Err(BlendError::ShapeMismatch(format!(
            "interest {}×{}×{} vs references {}×{}×{}",
            interest.n_draws(),
            interest.n_ages(),
            interest.horizon(),
            reference_mean.n_draws(),
            reference_mean.n_ages(),
            reference_mean.horizon()
        )));
    }
    if matches!(plan.schedule, WeightSchedule::Linear) && plan.horizon_length != interest.horizon() {
        return Err(BlendError::HorizonMismatch {
            plan: plan.horizon_length,
            forecast: interest.horizon(),
        });
    }
    let h = interest.horizon();
    let weights: Vec<f64> = (1..=h).map(|f| plan.weight_of_interest(f)).collect();
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(k, (x, y))| {
                let w = weights[k % h];
                w * x + (1.0 - w) * y
            })
            .collect()
    };
    Ok(RhoForecast::new(
        interest.ages().to_vec(),
        interest.years().to_vec(),
        interest.n_draws(),
        mix(interest.values(), reference_mean.values()),
        mix(interest.mean(), reference_mean.mean()),
    ))
}

pub fn blend_forecasts(
    interest: &RhoForecast,
    references: &[RhoForecast],
    plan: &BlendPlan,
) -> Result<RhoForecast, BlendError> {
    if references.is_empty() {
        return Err(BlendError::EmptyReferences);
    }
    if references.len() != plan.reference_labels.len() {
        return Err(BlendError::ShapeMismatch(format!(
            "plan lists {} references, got {}",
            plan.reference_labels.len(),
            references.len()
        )));
    }
    let mut acc = ReferenceMean::new(plan)?;
    for r in references {
        acc.add(r)?;
    }
    blend_with_mean(interest, &acc.finish()?, plan)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampBand {
    pub rho_min: f64,
    pub rho_max: f64,
}

impl Default for ClampBand {
    fn default() -> Self {
        Self {
            rho_min: 0.005,
            rho_max: 0.035,
        }
    }
}

impl ClampBand {
    pub fn new(rho_min: f64, rho_max: f64) -> Result<Self, BlendError> {
        if !(rho_min < rho_max) {
            return Err(BlendError::BadBand(rho_min, rho_max));
        }
        Ok(Self { rho_min, rho_max })
    }

    pub fn apply(&self, rho: f64) -> f64 {
        rho.max(self.rho_min).min(self.rho_max)
    }
}

/// Clamps both channels elementwise into the band.
pub fn clamp_rho(forecast: &RhoForecast, band: ClampBand) -> RhoForecast {
    let mut out = forecast.clone();
    clamp_rho_in_place(&mut out, band);
    out
}

pub fn clamp_rho_in_place(forecast: &mut RhoForecast, band: ClampBand) {
    let (values, mean) = forecast.channels_mut();
    for v in values.iter_mut().chain(mean.iter_mut()) {
        *v = band.apply(*v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(rho: f64, h: usize) -> RhoForecast {
        RhoForecast::constant(vec![0, 1], (1991..1991 + h as i32).collect(), 3, rho)
    }

    #[test]
    fn weights_run_from_one_to_zero() {
        let plan = BlendPlan::new("DNK", &["SWE"], 21).unwrap();
        assert_eq!(plan.weight_of_interest(1), 1.0);
        assert_eq!(plan.weight_of_interest(21), 0.0);
        assert_eq!(plan.weight_of_interest(11), 0.5);
    }

    #[test]
    fn midpoint_of_transition() {
        let plan = BlendPlan::new("DNK", &["SWE"], 21).unwrap();
        let out = blend_forecasts(&constant(0.01, 21), &[constant(0.03, 21)], &plan).unwrap();
        assert!((out.get(0, 0, 10) - 0.02).abs() < 1e-15);
        assert_eq!(out.get(2, 1, 0), 0.01);
        assert_eq!(out.get(2, 1, 20), 0.03);
    }

    #[test]
    fn plan_validation() {
        assert_eq!(BlendPlan::new("DNK", &[], 21).unwrap_err(), BlendError::EmptyReferences);
        assert_eq!(BlendPlan::new("DNK", &["SWE"], 1).unwrap_err(), BlendError::BadHorizon(1));
        let plan = BlendPlan::new("DNK", &["SWE"], 5).unwrap();
        assert!(matches!(
            blend_forecasts(&constant(0.01, 4), &[constant(0.03, 4)], &plan),
            Err(BlendError::HorizonMismatch { .. })
        ));
        assert!(matches!(
            blend_forecasts(&constant(0.01, 5), &[constant(0.03, 4)], &plan),
            Err(BlendError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn weighted_references() {
        let mut plan = BlendPlan::new("DNK", &["SWE", "FRA"], 3).unwrap();
        plan.reference_weights = Some(vec![3.0, 1.0]);
        let out = blend_forecasts(&constant(0.0, 3), &[constant(0.04, 3), constant(0.0, 3)], &plan).unwrap();
        assert!((out.get(0, 0, 2) - 0.03).abs() < 1e-15);
    }

    #[test]
    fn clamp_examples() {
        let band = ClampBand::default();
        assert_eq!(band.apply(0.05), 0.035);
        assert_eq!(band.apply(0.001), 0.005);
        assert_eq!(band.apply(0.02), 0.02);
        assert!(ClampBand::new(0.03, 0.01).is_err());
    }

    #[test]
    fn shuffled_coupling_is_a_permutation() {
        let ages = vec![0];
        let years = vec![1991, 1992];
        let vals: Vec<f64> = (0..10).flat_map(|d| [d as f64, d as f64]).collect();
        let reference = RhoForecast::new(ages.clone(), years.clone(), 10, vals.clone(), vals);
        let mut plan = BlendPlan::new("A", &["B"], 2).unwrap();
        plan.coupling = Coupling::Shuffled { seed: 7 };
        let mut acc = ReferenceMean::new(&plan).unwrap();
        acc.add(&reference).unwrap();
        let mean = acc.finish().unwrap();
        let mut seen: Vec<f64> = (0..10).map(|d| mean.get(d, 0, 0)).collect();
        assert_ne!(seen, (0..10).map(|d| d as f64).collect::<Vec<_>>());
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..10).map(|d| d as f64).collect::<Vec<_>>());
        for d in 0..10 {
            assert_eq!(mean.get(d, 0, 0), mean.get(d, 0, 1));
        }
    }
}
