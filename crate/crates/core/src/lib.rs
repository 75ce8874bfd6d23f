//! Mean-field variational Bayes for the log-logistic accelerated failure time
//! model with right censoring, with maximum-likelihood and Metropolis reference
//! estimators and a simulation harness.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;
pub mod model;
pub mod piecewise;
pub mod cavi;
pub mod posterior;
pub mod rng;
pub mod reference;
pub mod simulate;
pub mod cli;
