//! Centralized GSPRT: every sensor forwards every sample, the fusion center
//! pools them into one sufficient statistic and stops as soon as the GLLR
//! leaves `(-B, A)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Hypothesis, ModelError, SuffStat, TestingProblem, TruthPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} inputs per step, got {got}")]
    WrongInputCount { expected: usize, got: usize },
    #[error("the test has already stopped")]
    AlreadyStopped,
    #[error("engine has already been stepped; a fresh engine is required")]
    NotFresh,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Outcome of a sequential test.
///
/// `censored` runs hit the sample cap before either threshold was crossed;
/// their `decision` is the side the statistic leaned to at the cap and must
/// not be counted as a decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Hypothesis,
    pub stopping_time: u64,
    pub messages_sent: u64,
    pub censored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Continue { statistic: f64 },
    Stopped(Verdict),
}

/// Closed-threshold decision: `≥ A` decides H1, `≤ −B` decides H0.
#[inline]
pub(crate) fn threshold_decision(statistic: f64, upper: f64, lower: f64) -> Option<Hypothesis> {
    if statistic >= upper {
        Some(Hypothesis::H1)
    } else if statistic <= -lower {
        Some(Hypothesis::H0)
    } else {
        None
    }
}

pub(crate) fn check_thresholds(upper: f64, lower: f64) -> Result<(), EngineError> {
    if upper > 0.0 && lower > 0.0 && upper.is_finite() && lower.is_finite() {
        Ok(())
    } else {
        Err(EngineError::InvalidConfig(format!(
            "thresholds must be positive and finite, got A={upper}, B={lower}"
        )))
    }
}

pub(crate) fn check_streams<R>(sensors: usize, streams: &[R]) -> Result<(), EngineError> {
    if streams.len() != sensors {
        return Err(EngineError::WrongInputCount {
            expected: sensors,
            got: streams.len(),
        });
    }
    Ok(())
}

/// One record per time step, for tracing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CentralizedEvent {
    pub time: u64,
    pub samples_pooled: u64,
    pub gllr: f64,
}

#[derive(Debug, Clone)]
pub struct CentralizedEngine {
    problem: TestingProblem,
    sensors: usize,
    upper: f64,
    lower: f64,
    stat: SuffStat,
    time: u64,
    stopped: bool,
}

impl CentralizedEngine {
    pub fn new(
        problem: TestingProblem,
        sensors: usize,
        upper: f64,
        lower: f64,
    ) -> Result<Self, EngineError> {
        if sensors == 0 {
            return Err(EngineError::InvalidConfig("at least one sensor is required".into()));
        }
        check_thresholds(upper, lower)?;
        Ok(CentralizedEngine {
            problem,
            sensors,
            upper,
            lower,
            stat: SuffStat::EMPTY,
            time: 0,
            stopped: false,
        })
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn pooled(&self) -> &SuffStat {
        &self.stat
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// Feeds one sample per sensor and applies the stopping rule.
    pub fn step(&mut self, samples: &[f64]) -> Result<StepOutcome, EngineError> {
        if self.stopped {
            return Err(EngineError::AlreadyStopped);
        }
        if samples.len() != self.sensors {
            return Err(EngineError::WrongInputCount {
                expected: self.sensors,
                got: samples.len(),
            });
        }
        for &y in samples {
            self.stat.push(self.problem.statistic(y));
        }
        self.time += 1;
        // Recomputed from the pooled statistic: the clamped MLE moves, so the
        // GLLR cannot be updated incrementally.
        let gllr = self.problem.gllr(&self.stat)?;
        Ok(match threshold_decision(gllr, self.upper, self.lower) {
            Some(decision) => {
                self.stopped = true;
                StepOutcome::Stopped(Verdict {
                    decision,
                    stopping_time: self.time,
                    messages_sent: self.sensors as u64 * self.time,
                    censored: false,
                })
            }
            None => StepOutcome::Continue { statistic: gllr },
        })
    }

    /// Drives a fresh engine with data drawn at `truth`, one stream per sensor,
    /// for at most `cap` time steps.
    pub fn run_to_decision<R: Rng>(
        &mut self,
        truth: &TruthPoint,
        streams: &mut [R],
        cap: u64,
    ) -> Result<Verdict, EngineError> {
        self.run_observed(truth, streams, cap, |_| {})
    }

    pub fn run_observed<R: Rng>(
        &mut self,
        truth: &TruthPoint,
        streams: &mut [R],
        cap: u64,
        mut observe: impl FnMut(&CentralizedEvent),
    ) -> Result<Verdict, EngineError> {
        if self.time != 0 || self.stopped {
            return Err(EngineError::NotFresh);
        }
        check_streams(self.sensors, streams)?;
        let mut samples = vec![0.0; self.sensors];
        let mut last = 0.0;
        while self.time < cap {
            for (slot, rng) in samples.iter_mut().zip(streams.iter_mut()) {
                *slot = self.problem.sample(truth, rng);
            }
            let outcome = self.step(&samples)?;
            let gllr = match outcome {
                StepOutcome::Continue { statistic } => statistic,
                StepOutcome::Stopped(_) => self.problem.gllr(&self.stat)?,
            };
            observe(&CentralizedEvent {
                time: self.time,
                samples_pooled: self.stat.n,
                gllr,
            });
            last = gllr;
            if let StepOutcome::Stopped(verdict) = outcome {
                return Ok(verdict);
            }
        }
        self.stopped = true;
        Ok(Verdict {
            decision: if last >= 0.0 { Hypothesis::H1 } else { Hypothesis::H0 },
            stopping_time: cap,
            messages_sent: self.sensors as u64 * cap,
            censored: true,
        })
    }
}
