//! Estimation and simulation for respondent-driven sampling (RDS).
//!
//! The crate has two halves that check each other:
//!
//! * **Estimators** ([`estimators`]): the Volz-Heckathorn degree-weighted
//!   ratio estimator, its generalization to any sampling-probability shape
//!   known up to scale, and the naive mean as a baseline.
//! * **A simulation laboratory** ([`population`], [`sampling`],
//!   [`experiments`]): population and network generators, the sampling
//!   processes the estimators assume (and the violations they fear), exact
//!   oracles for identification and probability limits, and a deterministic
//!   parallel Monte Carlo driver.
//!
//! See the book under `book/` for a guided tour; its code snippets compile
//! and run as doc-tests of this crate.

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod population;
pub mod sampling;
pub mod stats;
pub mod types;

pub use error::{Error, Result};
pub use types::{EstimateResult, FSpec, Population, Sample, SampleRecord, Unit};

// Compile and run every code block in the book as a doc-test, so the guide
// cannot drift from the library. mdbook itself does not test snippets; this
// does.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    pub mod estimators {}
    #[doc = include_str!("../../../book/src/identification.md")]
    pub mod identification {}
    #[doc = include_str!("../../../book/src/populations.md")]
    pub mod populations {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    pub mod sampling {}
    #[doc = include_str!("../../../book/src/studies.md")]
    pub mod studies {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
    #[doc = include_str!("../../../book/src/formats.md")]
    pub mod formats {}
}
