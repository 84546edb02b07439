//! Bayesian forecasting of mortality improvement rates.
//!
//! The pipeline runs from Human Mortality Database files to period life
//! expectancy fans:
//!
//! 1. [`hmd`] reads `Mx_1x1` / `Deaths_1x1` / `Exposures_1x1` tables into a
//!    [`MortalitySurface`].
//! 2. [`improvement`] turns death rates into improvement rates
//!    ρ(x, y) = −ln(m(x, y) / m(x, y − 1)).
//! 3. [`linear`] and [`loglog`] fit the two Bayesian models with the
//!    adaptive Metropolis-within-Gibbs sampler in [`sampler`], and project ρ.
//! 4. [`blend`] shifts weight from the country of interest to reference
//!    countries over the horizon and clamps ρ into a plausible band.
//! 5. [`fan`] and [`lifetable`] turn ρ draws into death-rate and e0 fans.
//! 6. [`diagnostics`] and [`leecarter`] check convergence and provide a
//!    baseline; [`pipeline`] wires it all together for the `morticast` CLI.

pub mod blend;
pub mod config;
pub mod diagnostics;
pub mod fan;
pub mod hmd;
pub mod improvement;
pub mod leecarter;
pub mod lifetable;
pub mod linear;
pub mod loglog;
pub mod pipeline;
pub mod projection;
pub mod sampler;
pub mod surface;

pub use hmd::{FillPolicy, HmdTable, IngestError, TableKind};
pub use improvement::{improvement_rates, ImprovementSurface};
pub use projection::{ModelError, RhoForecast, TimeIndex};
pub use sampler::{McmcConfig, PosteriorDraws};
pub use surface::{MortalitySurface, Sex};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/models.md")]
    struct Models;
    #[doc = include_str!("../../../book/src/blending.md")]
    struct Blending;
    #[doc = include_str!("../../../book/src/life-tables.md")]
    struct LifeTables;
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    struct Diagnostics;
    #[doc = include_str!("../../../book/src/baseline.md")]
    struct Baseline;
}
