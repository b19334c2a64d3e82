//! Generalized sequential probability ratio tests for multi-sensor networks:
//! a centralized test, a uniformly sampled one-bit scheme and level-triggered
//! sampling, with Monte Carlo and calibration tooling.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Published coefficient tables are kept digit for digit.
#![allow(clippy::excessive_precision)]
pub mod numerics;
pub mod model;
pub mod rng;
pub mod centralized;
pub mod uniform;
pub mod lts;
pub mod scheme;
pub mod calibrate;
pub mod experiment;
