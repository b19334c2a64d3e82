//! Level-triggered sampling: every sensor runs a repeated local GSPRT with
//! thresholds `(−b, a)`, sends one bit each time it crosses and then forgets
//! its data. The fusion center adds `+a` or `−b` per bit and stops once the
//! running sum leaves `(−B, A)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::centralized::{check_streams, check_thresholds, threshold_decision, EngineError, StepOutcome, Verdict};
use crate::model::{Hypothesis, ModelError, SuffStat, TestingProblem, TruthPoint};
use crate::numerics::Probability;
use crate::uniform::Bit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub sensor: usize,
    pub time: u64,
    pub bit: Bit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensorEvent {
    Quiet,
    Emit { message: Message, local_gllr: f64 },
}

#[derive(Debug, Clone)]
pub struct LtsSensor {
    id: usize,
    problem: TestingProblem,
    a: f64,
    b: f64,
    stat: SuffStat,
    emissions: u64,
    last_emission: u64,
}

impl LtsSensor {
    pub fn new(id: usize, problem: TestingProblem, a: f64, b: f64) -> Result<Self, EngineError> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(EngineError::InvalidConfig(format!(
                "local thresholds must be positive and finite, got a={a}, b={b}"
            )));
        }
        Ok(LtsSensor {
            id,
            problem,
            a,
            b,
            stat: SuffStat::EMPTY,
            emissions: 0,
            last_emission: 0,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn stat(&self) -> &SuffStat {
        &self.stat
    }

    pub fn emissions(&self) -> u64 {
        self.emissions
    }

    /// Time of the previous emission, zero before the first one.
    pub fn last_emission(&self) -> u64 {
        self.last_emission
    }

    /// Ingests the sample taken at global time `time`.
    pub fn step(&mut self, y: f64, time: u64) -> Result<SensorEvent, ModelError> {
        self.stat.push(self.problem.statistic(y));
        let g = self.problem.gllr(&self.stat)?;
        let bit = match threshold_decision(g, self.a, self.b) {
            Some(Hypothesis::H1) => Bit::Plus,
            Some(Hypothesis::H0) => Bit::Minus,
            None => return Ok(SensorEvent::Quiet),
        };
        self.stat.reset();
        self.emissions += 1;
        self.last_emission = time;
        Ok(SensorEvent::Emit {
            message: Message {
                sensor: self.id,
                time,
                bit,
            },
            local_gllr: g,
        })
    }
}

/// Fusion center state. The running statistic is always `plus·a − minus·b`.
#[derive(Debug, Clone)]
pub struct LtsFusion {
    a: f64,
    b: f64,
    upper: f64,
    lower: f64,
    plus: u64,
    minus: u64,
    stopped: bool,
}

impl LtsFusion {
    pub fn new(a: f64, b: f64, upper: f64, lower: f64) -> Result<Self, EngineError> {
        check_thresholds(upper, lower)?;
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(EngineError::InvalidConfig(format!(
                "local thresholds must be positive and finite, got a={a}, b={b}"
            )));
        }
        Ok(LtsFusion {
            a,
            b,
            upper,
            lower,
            plus: 0,
            minus: 0,
            stopped: false,
        })
    }

    pub fn statistic(&self) -> f64 {
        self.plus as f64 * self.a - self.minus as f64 * self.b
    }

    /// Counts of `+1` and `−1` messages received so far.
    pub fn counts(&self) -> (u64, u64) {
        (self.plus, self.minus)
    }

    pub fn messages_received(&self) -> u64 {
        self.plus + self.minus
    }

    pub fn fusion_ingest(&mut self, msg: &Message) -> Result<StepOutcome, EngineError> {
        if self.stopped {
            return Err(EngineError::AlreadyStopped);
        }
        match msg.bit {
            Bit::Plus => self.plus += 1,
            Bit::Minus => self.minus += 1,
        }
        let v = self.statistic();
        Ok(match threshold_decision(v, self.upper, self.lower) {
            Some(decision) => {
                self.stopped = true;
                StepOutcome::Stopped(Verdict {
                    decision,
                    stopping_time: msg.time,
                    messages_sent: self.messages_received(),
                    censored: false,
                })
            }
            None => StepOutcome::Continue { statistic: v },
        })
    }
}

/// Per-run record of the local tests.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LtsDiagnostics {
    /// Inter-communication periods per sensor, in emission order.
    pub periods: Vec<Vec<u64>>,
    /// Local GLLR value at each emission, overshoot included.
    pub emission_gllrs: Vec<f64>,
    pub plus_emissions: u64,
    pub minus_emissions: u64,
}

impl LtsDiagnostics {
    fn new(sensors: usize) -> Self {
        LtsDiagnostics {
            periods: vec![Vec::new(); sensors],
            ..Default::default()
        }
    }

    pub fn period_count(&self) -> u64 {
        self.periods.iter().map(|p| p.len() as u64).sum()
    }

    pub fn period_sum(&self) -> u64 {
        self.periods.iter().flatten().sum()
    }

    pub fn mean_period(&self) -> Option<f64> {
        let n = self.period_count();
        (n > 0).then(|| self.period_sum() as f64 / n as f64)
    }

    /// Fraction of local decisions that were wrong for a run at `truth`:
    /// the local type-I rate under H0, the local type-II rate under H1.
    pub fn local_error_estimate(&self, truth: Hypothesis) -> Option<Probability> {
        let total = self.plus_emissions + self.minus_emissions;
        if total == 0 {
            return None;
        }
        let wrong = match truth {
            Hypothesis::H0 => self.plus_emissions,
            Hypothesis::H1 => self.minus_emissions,
        };
        Probability::new(wrong as f64 / total as f64).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LtsConfig {
    pub sensors: usize,
    pub a: f64,
    pub b: f64,
    pub upper: f64,
    pub lower: f64,
}

/// One record per delivered message, for tracing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LtsEvent {
    pub time: u64,
    pub sensor: usize,
    pub bit: Bit,
    pub local_gllr: f64,
    pub fusion_statistic: f64,
}

/// Runs the scheme at `truth` on a common clock. Messages emitted at the same
/// tick reach the fusion center in ascending sensor order and the thresholds
/// are checked after each one.
pub fn simulate_lts<R: Rng>(
    problem: &TestingProblem,
    config: &LtsConfig,
    truth: &TruthPoint,
    streams: &mut [R],
    cap: u64,
) -> Result<(Verdict, LtsDiagnostics), EngineError> {
    simulate_lts_observed(problem, config, truth, streams, cap, |_| {})
}

pub fn simulate_lts_observed<R: Rng>(
    problem: &TestingProblem,
    config: &LtsConfig,
    truth: &TruthPoint,
    streams: &mut [R],
    cap: u64,
    mut observe: impl FnMut(&LtsEvent),
) -> Result<(Verdict, LtsDiagnostics), EngineError> {
    if config.sensors == 0 {
        return Err(EngineError::InvalidConfig("at least one sensor is required".into()));
    }
    let mut fusion = LtsFusion::new(config.a, config.b, config.upper, config.lower)?;
    check_streams(config.sensors, streams)?;
    let mut sensors: Vec<LtsSensor> = (0..config.sensors)
        .map(|id| LtsSensor::new(id, *problem, config.a, config.b))
        .collect::<Result<_, _>>()?;
    let mut diag = LtsDiagnostics::new(config.sensors);
    let mut pending: Vec<(Message, f64)> = Vec::with_capacity(config.sensors);

    for t in 1..=cap {
        pending.clear();
        for (sensor, rng) in sensors.iter_mut().zip(streams.iter_mut()) {
            let previous = sensor.last_emission();
            if let SensorEvent::Emit { message, local_gllr } = sensor.step(problem.sample(truth, rng), t)? {
                diag.periods[message.sensor].push(t - previous);
                diag.emission_gllrs.push(local_gllr);
                match message.bit {
                    Bit::Plus => diag.plus_emissions += 1,
                    Bit::Minus => diag.minus_emissions += 1,
                }
                pending.push((message, local_gllr));
            }
        }
        for (message, local_gllr) in &pending {
            let outcome = fusion.fusion_ingest(message)?;
            observe(&LtsEvent {
                time: t,
                sensor: message.sensor,
                bit: message.bit,
                local_gllr: *local_gllr,
                fusion_statistic: fusion.statistic(),
            });
            if let StepOutcome::Stopped(verdict) = outcome {
                return Ok((verdict, diag));
            }
        }
    }
    let v = fusion.statistic();
    Ok((
        Verdict {
            decision: if v >= 0.0 { Hypothesis::H1 } else { Hypothesis::H0 },
            stopping_time: cap,
            messages_sent: fusion.messages_received(),
            censored: true,
        },
        diag,
    ))
}

/// Exact log-likelihood ratio of a message sequence when each local test is
/// treated as a Bernoulli source with error rates `α̃` and `β̃`.
pub fn reference_exact_fusion_llr(
    messages: &[Message],
    alpha_tilde: Probability,
    beta_tilde: Probability,
) -> Result<f64, ModelError> {
    for p in [alpha_tilde, beta_tilde] {
        if !(p.value() > 0.0 && p.complement_value() > 0.0) {
            return Err(ModelError::Domain {
                what: "local error probability",
                value: p.value(),
            });
        }
    }
    let up = (beta_tilde.complement_value() / alpha_tilde.value()).ln();
    let down = (beta_tilde.value() / alpha_tilde.complement_value()).ln();
    Ok(messages
        .iter()
        .map(|m| match m.bit {
            Bit::Plus => up,
            Bit::Minus => down,
        })
        .sum())
}
