//! Uniform interface over the test schemes, one replication at a time.

use serde::{Deserialize, Serialize};

use crate::centralized::{CentralizedEngine, EngineError, Verdict};
use crate::lts::{simulate_lts, LtsConfig};
use crate::model::{ModelError, ParameterInterval, TestingProblem, TruthPoint};
use crate::rng::StreamKey;
use crate::uniform::{simulate_uniform, UniformConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Centralized,
    Uniform,
    Lts,
    SimpleSprt,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Centralized => "centralized",
            Scheme::Uniform => "uniform",
            Scheme::Lts => "lts",
            Scheme::SimpleSprt => "simple-sprt",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A scheme together with its scheme-specific parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SchemeConfig {
    Centralized,
    Uniform { t0: u32, lambda: f64 },
    Lts { a: f64, b: f64 },
    /// Wald's SPRT between the two closest points of the hypotheses.
    SimpleSprt,
}

impl SchemeConfig {
    pub fn scheme(&self) -> Scheme {
        match self {
            SchemeConfig::Centralized => Scheme::Centralized,
            SchemeConfig::Uniform { .. } => Scheme::Uniform,
            SchemeConfig::Lts { .. } => Scheme::Lts,
            SchemeConfig::SimpleSprt => Scheme::SimpleSprt,
        }
    }
}

/// The closest-points problem the simple SPRT is run on.
pub fn closest_points(problem: &TestingProblem) -> Result<TestingProblem, ModelError> {
    let null = ParameterInterval::singleton(problem.null_set().hi())?;
    let alt = ParameterInterval::singleton(problem.alt_set().lo())?;
    problem.with_sets(null, alt)
}

/// Outcome of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Replication {
    pub verdict: Verdict,
    /// Sum and count of completed inter-communication periods.
    pub period_sum: u64,
    pub period_count: u64,
}

/// Runs one replication with the streams of `key`.
#[allow(clippy::too_many_arguments)]
pub fn run_replication(
    problem: &TestingProblem,
    scheme: &SchemeConfig,
    sensors: usize,
    upper: f64,
    lower: f64,
    truth: &TruthPoint,
    key: StreamKey,
    cap: u64,
) -> Result<Replication, EngineError> {
    let mut streams = key.sensor_streams(sensors);
    Ok(match *scheme {
        SchemeConfig::Centralized | SchemeConfig::SimpleSprt => {
            let p = if *scheme == SchemeConfig::SimpleSprt {
                closest_points(problem)?
            } else {
                *problem
            };
            let mut engine = CentralizedEngine::new(p, sensors, upper, lower)?;
            let verdict = engine.run_to_decision(truth, &mut streams, cap)?;
            Replication {
                verdict,
                period_sum: verdict.stopping_time * sensors as u64,
                period_count: verdict.stopping_time * sensors as u64,
            }
        }
        SchemeConfig::Uniform { t0, lambda } => {
            let config = UniformConfig {
                sensors,
                t0,
                lambda,
                upper,
                lower,
            };
            let verdict = simulate_uniform(problem, &config, truth, &mut streams, cap)?;
            let blocks = verdict.stopping_time / u64::from(t0) * sensors as u64;
            Replication {
                verdict,
                period_sum: blocks * u64::from(t0),
                period_count: blocks,
            }
        }
        SchemeConfig::Lts { a, b } => {
            let config = LtsConfig {
                sensors,
                a,
                b,
                upper,
                lower,
            };
            let (verdict, diag) = simulate_lts(problem, &config, truth, &mut streams, cap)?;
            Replication {
                verdict,
                period_sum: diag.period_sum(),
                period_count: diag.period_count(),
            }
        }
    })
}

/// Runs replications `0..replications` of `key` in parallel. The result is in
/// replication order regardless of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_batch(
    problem: &TestingProblem,
    scheme: &SchemeConfig,
    sensors: usize,
    upper: f64,
    lower: f64,
    truth: &TruthPoint,
    key: StreamKey,
    replications: u64,
    cap: u64,
) -> Result<Vec<Replication>, EngineError> {
    use rayon::prelude::*;
    (0..replications)
        .into_par_iter()
        .map(|r| {
            run_replication(
                problem,
                scheme,
                sensors,
                upper,
                lower,
                truth,
                key.with_replication(r),
                cap,
            )
        })
        .collect()
}
