//! Network meta-analysis of diagnostic test accuracy.
//!
//! This crate fits Bayesian hierarchical models to networks of diagnostic
//! accuracy studies, where each study reports true/false positive and
//! negative counts for one or more index tests against a common reference
//! standard. Sensitivity and specificity are modeled jointly on the logit
//! scale.
//!
//! Two model families are provided:
//!
//! * [`arm_based`] — every observed (study, test) arm gets its own pair of
//!   logit-scale effects, decomposed into fixed test effects, correlated
//!   study effects, and test-within-study effects. Missing arms are handled
//!   by simply omitting their likelihood terms, which is valid when arms are
//!   missing at random.
//! * [`contrast_based`] — a comparator formulation that models within-study
//!   contrasts against a designated baseline test and only includes studies
//!   observing the baseline plus at least one other test.
//!
//! Posteriors are explored with the No-U-Turn Sampler ([`sampler`]) using
//! exact gradients from reverse-mode automatic differentiation
//! ([`autodiff`]). Summaries, rankings, and variance decompositions live in
//! [`posterior`]; synthetic-data generation in [`simulate`]; SVG figures and
//! file exports in [`report`]; the command-line front end in [`cli`].

pub mod autodiff;
pub mod cli;
pub mod contrast_based;
pub mod dataset;
pub mod error;
pub mod posterior;
pub mod priors;
pub mod report;
pub mod sampler;
pub mod simulate;

pub mod arm_based;

pub use error::{Error, Result};
