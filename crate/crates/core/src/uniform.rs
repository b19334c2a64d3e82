//! Uniform-sampling decentralized scheme: each sensor reduces every block of
//! `T0` samples to one bit `sign(φ − λ)`, and the fusion center runs a GSPRT
//! on the Bernoulli bit counts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::centralized::{check_streams, check_thresholds, threshold_decision, EngineError, StepOutcome, Verdict};
use crate::model::{bernoulli_kl, Family, Hypothesis, ModelError, ParameterInterval, SuffStat, TestingProblem, TruthPoint};
use crate::numerics::{self, Probability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bit {
    Plus,
    Minus,
}

impl Bit {
    pub fn from_sign(positive: bool) -> Bit {
        if positive {
            Bit::Plus
        } else {
            Bit::Minus
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Bit::Plus => 1,
            Bit::Minus => -1,
        }
    }
}

fn check_block(t0: u32, lambda: f64) -> Result<(), EngineError> {
    if t0 == 0 {
        return Err(EngineError::InvalidConfig("block length T0 must be at least 1".into()));
    }
    if !lambda.is_finite() {
        return Err(EngineError::InvalidConfig(format!(
            "quantizer threshold must be finite, got {lambda}"
        )));
    }
    Ok(())
}

/// A sensor that quantizes its block statistic to one bit every `T0` samples.
#[derive(Debug, Clone)]
pub struct UniformSensor {
    problem: TestingProblem,
    t0: u32,
    lambda: f64,
    block: SuffStat,
}

impl UniformSensor {
    pub fn new(problem: TestingProblem, t0: u32, lambda: f64) -> Result<Self, EngineError> {
        check_block(t0, lambda)?;
        Ok(UniformSensor {
            problem,
            t0,
            lambda,
            block: SuffStat::EMPTY,
        })
    }

    pub fn block(&self) -> &SuffStat {
        &self.block
    }

    /// Quantizes a full block. Ties with `λ` give `Minus`.
    pub fn quantize_block(&self, samples: &[f64]) -> Result<Bit, EngineError> {
        if samples.len() != self.t0 as usize {
            return Err(EngineError::WrongInputCount {
                expected: self.t0 as usize,
                got: samples.len(),
            });
        }
        let phi: f64 = samples.iter().map(|&y| self.problem.statistic(y)).sum();
        Ok(Bit::from_sign(phi > self.lambda))
    }

    /// Adds one sample; returns a bit when the block completes.
    pub fn push(&mut self, y: f64) -> Option<Bit> {
        self.block.push(self.problem.statistic(y));
        if self.block.n == u64::from(self.t0) {
            let bit = Bit::from_sign(self.block.acc > self.lambda);
            self.block.reset();
            Some(bit)
        } else {
            None
        }
    }
}

fn bernoulli_log_likelihood(r1: u64, r0: u64, p: Probability) -> f64 {
    fn term(count: u64, prob: f64) -> f64 {
        if count == 0 {
            0.0
        } else {
            count as f64 * prob.ln()
        }
    }
    term(r1, p.value()) + term(r0, p.complement_value())
}

/// Bit probabilities at the two endpoints of an interval. The bit probability
/// is increasing in the parameter, so the constrained Bernoulli MLE in
/// probability space is the clamp of `r1 / n` between them.
#[derive(Debug, Clone, Copy)]
struct EndpointProbabilities {
    lo: Probability,
    hi: Probability,
}

impl EndpointProbabilities {
    fn new(
        problem: &TestingProblem,
        interval: &ParameterInterval,
        t0: u32,
        lambda: f64,
    ) -> Result<Self, ModelError> {
        Ok(EndpointProbabilities {
            lo: problem.bit_probability(interval.lo(), t0, lambda)?,
            hi: problem.bit_probability(interval.hi(), t0, lambda)?,
        })
    }

    fn sup_log_likelihood(&self, r1: u64, r0: u64) -> f64 {
        let n = (r0 + r1) as f64;
        let frac = r1 as f64 / n;
        let p = if frac <= self.lo.value() {
            self.lo
        } else if frac >= self.hi.value() {
            self.hi
        } else {
            Probability::from_tails(frac, r0 as f64 / n)
        };
        bernoulli_log_likelihood(r1, r0, p)
    }
}

fn gllr_from_endpoints(
    alt: &EndpointProbabilities,
    null: &EndpointProbabilities,
    r1: u64,
    r0: u64,
) -> Result<f64, ModelError> {
    if r0 + r1 == 0 {
        return Err(ModelError::EmptyStatistic);
    }
    let g = alt.sup_log_likelihood(r1, r0) - null.sup_log_likelihood(r1, r0);
    if g.is_nan() {
        // Both hypotheses assign the observed counts probability zero.
        return Err(ModelError::Domain {
            what: "Bernoulli likelihood",
            value: g,
        });
    }
    Ok(g)
}

/// GLLR of the bit counts: `sup_Θ [r1 log p + r0 log(1−p)] − sup_Γ [...]`.
pub fn bernoulli_gllr(
    problem: &TestingProblem,
    t0: u32,
    lambda: f64,
    r0: u64,
    r1: u64,
) -> Result<f64, ModelError> {
    let alt = EndpointProbabilities::new(problem, problem.alt_set(), t0, lambda)?;
    let null = EndpointProbabilities::new(problem, problem.null_set(), t0, lambda)?;
    gllr_from_endpoints(&alt, &null, r1, r0)
}

/// Constrained MLE of the parameter from bit counts, in parameter space.
pub fn bernoulli_mle(
    problem: &TestingProblem,
    t0: u32,
    lambda: f64,
    r0: u64,
    r1: u64,
    interval: &ParameterInterval,
) -> Result<f64, ModelError> {
    if r0 + r1 == 0 {
        return Err(ModelError::EmptyStatistic);
    }
    if r0 == 0 {
        return Ok(interval.hi());
    }
    if r1 == 0 {
        return Ok(interval.lo());
    }
    let n = (r0 + r1) as f64;
    // Probability of a Minus bit.
    let minus = Probability::from_tails(r0 as f64 / n, r1 as f64 / n);
    let t0f = f64::from(t0);
    let unconstrained = match problem.family() {
        Family::MeanShift { sigma2 } => {
            (lambda - (sigma2 * t0f).sqrt() * numerics::std_normal_quantile(minus)?) / t0f
        }
        Family::Variance => lambda / numerics::chi_squared_quantile(t0, minus)?,
    };
    Ok(interval.clamp(unconstrained))
}

/// One record per fusion update, for tracing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformEvent {
    pub time: u64,
    pub r1: u64,
    pub r0: u64,
    pub gllr: f64,
}

/// Fusion center running the GSPRT on received bits.
#[derive(Debug, Clone)]
pub struct BernoulliFusion {
    sensors: usize,
    t0: u32,
    upper: f64,
    lower: f64,
    alt: EndpointProbabilities,
    null: EndpointProbabilities,
    r1: u64,
    r0: u64,
    blocks: u64,
    stopped: bool,
}

impl BernoulliFusion {
    pub fn new(
        problem: &TestingProblem,
        sensors: usize,
        t0: u32,
        lambda: f64,
        upper: f64,
        lower: f64,
    ) -> Result<Self, EngineError> {
        if sensors == 0 {
            return Err(EngineError::InvalidConfig("at least one sensor is required".into()));
        }
        check_block(t0, lambda)?;
        check_thresholds(upper, lower)?;
        Ok(BernoulliFusion {
            sensors,
            t0,
            upper,
            lower,
            alt: EndpointProbabilities::new(problem, problem.alt_set(), t0, lambda)?,
            null: EndpointProbabilities::new(problem, problem.null_set(), t0, lambda)?,
            r1: 0,
            r0: 0,
            blocks: 0,
            stopped: false,
        })
    }

    pub fn counts(&self) -> (u64, u64) {
        (self.r0, self.r1)
    }

    /// Raw-sample time of the last processed block.
    pub fn time(&self) -> u64 {
        self.blocks * u64::from(self.t0)
    }

    pub fn gllr(&self) -> Result<f64, ModelError> {
        gllr_from_endpoints(&self.alt, &self.null, self.r1, self.r0)
    }

    /// Ingests the bits of one block boundary. An empty slice changes nothing.
    pub fn step_fusion(&mut self, bits: &[Bit]) -> Result<StepOutcome, EngineError> {
        if self.stopped {
            return Err(EngineError::AlreadyStopped);
        }
        if bits.is_empty() {
            return Ok(StepOutcome::Continue {
                statistic: if self.r0 + self.r1 == 0 { 0.0 } else { self.gllr()? },
            });
        }
        if bits.len() != self.sensors {
            return Err(EngineError::WrongInputCount {
                expected: self.sensors,
                got: bits.len(),
            });
        }
        for bit in bits {
            match bit {
                Bit::Plus => self.r1 += 1,
                Bit::Minus => self.r0 += 1,
            }
        }
        self.blocks += 1;
        let g = self.gllr()?;
        Ok(match threshold_decision(g, self.upper, self.lower) {
            Some(decision) => {
                self.stopped = true;
                StepOutcome::Stopped(Verdict {
                    decision,
                    stopping_time: self.time(),
                    messages_sent: self.r0 + self.r1,
                    censored: false,
                })
            }
            None => StepOutcome::Continue { statistic: g },
        })
    }
}

/// Parameters of a uniform-sampling run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformConfig {
    pub sensors: usize,
    pub t0: u32,
    pub lambda: f64,
    pub upper: f64,
    pub lower: f64,
}

/// Runs the uniform scheme at `truth` until a decision or until `cap` raw
/// sample steps have elapsed.
pub fn simulate_uniform<R: Rng>(
    problem: &TestingProblem,
    config: &UniformConfig,
    truth: &TruthPoint,
    streams: &mut [R],
    cap: u64,
) -> Result<Verdict, EngineError> {
    simulate_uniform_observed(problem, config, truth, streams, cap, |_| {})
}

pub fn simulate_uniform_observed<R: Rng>(
    problem: &TestingProblem,
    config: &UniformConfig,
    truth: &TruthPoint,
    streams: &mut [R],
    cap: u64,
    mut observe: impl FnMut(&UniformEvent),
) -> Result<Verdict, EngineError> {
    let mut fusion = BernoulliFusion::new(
        problem,
        config.sensors,
        config.t0,
        config.lambda,
        config.upper,
        config.lower,
    )?;
    check_streams(config.sensors, streams)?;
    let t0 = u64::from(config.t0);
    if cap < t0 {
        return Err(EngineError::InvalidConfig(format!(
            "cap {cap} is shorter than one block of {t0} samples"
        )));
    }
    let mut sensors: Vec<UniformSensor> = (0..config.sensors)
        .map(|_| UniformSensor::new(*problem, config.t0, config.lambda))
        .collect::<Result<_, _>>()?;
    let mut bits = Vec::with_capacity(config.sensors);
    let mut last = 0.0;
    while fusion.time() + t0 <= cap {
        bits.clear();
        for (sensor, rng) in sensors.iter_mut().zip(streams.iter_mut()) {
            for _ in 0..t0 {
                if let Some(bit) = sensor.push(problem.sample(truth, rng)) {
                    bits.push(bit);
                }
            }
        }
        let outcome = fusion.step_fusion(&bits)?;
        let (r0, r1) = fusion.counts();
        let gllr = match outcome {
            StepOutcome::Continue { statistic } => statistic,
            StepOutcome::Stopped(_) => fusion.gllr()?,
        };
        observe(&UniformEvent {
            time: fusion.time(),
            r1,
            r0,
            gllr,
        });
        last = gllr;
        if let StepOutcome::Stopped(verdict) = outcome {
            return Ok(verdict);
        }
    }
    let (r0, r1) = fusion.counts();
    Ok(Verdict {
        decision: if last >= 0.0 { Hypothesis::H1 } else { Hypothesis::H0 },
        stopping_time: cap,
        messages_sent: r0 + r1,
        censored: true,
    })
}

/// Result of the worst-case quantizer design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinimaxQuantizer {
    pub lambda: f64,
    pub worst_case_kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MinimaxOptions {
    /// Minimize over this many points per interval instead of the endpoints.
    pub inner_grid: Option<usize>,
}

const MAX_GRID_POINTS: usize = 4_000_000;

fn interval_points(interval: &ParameterInterval, grid: Option<usize>) -> Vec<f64> {
    match grid {
        Some(n) if n >= 2 && !interval.is_singleton() => (0..n)
            .map(|i| interval.lo() + (interval.hi() - interval.lo()) * i as f64 / (n - 1) as f64)
            .collect(),
        _ if interval.is_singleton() => vec![interval.lo()],
        _ => vec![interval.lo(), interval.hi()],
    }
}

/// Worst-case quantized KL `min_{θ,γ} D(Bern p_θ || Bern p_γ)` at threshold `λ`.
pub fn worst_case_quantized_kl(
    problem: &TestingProblem,
    t0: u32,
    lambda: f64,
    options: &MinimaxOptions,
) -> Result<f64, ModelError> {
    let thetas = interval_points(problem.alt_set(), options.inner_grid);
    let gammas = interval_points(problem.null_set(), options.inner_grid);
    let p_gamma = gammas
        .iter()
        .map(|&g| problem.bit_probability(g, t0, lambda))
        .collect::<Result<Vec<_>, _>>()?;
    let mut worst = f64::INFINITY;
    for &theta in &thetas {
        let p = problem.bit_probability(theta, t0, lambda)?;
        for &q in &p_gamma {
            worst = worst.min(bernoulli_kl(p, q));
        }
    }
    Ok(worst)
}

fn search_range(problem: &TestingProblem, t0: u32) -> Result<(f64, f64), ModelError> {
    let t0f = f64::from(t0);
    Ok(match problem.family() {
        Family::MeanShift { sigma2 } => {
            let spread = 8.0 * (sigma2 * t0f).sqrt();
            (
                t0f * problem.null_set().lo() - spread,
                t0f * problem.alt_set().hi() + spread,
            )
        }
        Family::Variance => {
            let tail = Probability::new(1e-9)?;
            (
                problem.null_set().lo() * numerics::chi_squared_quantile(t0, tail)?,
                problem.alt_set().hi() * numerics::chi_squared_quantile(t0, tail.complement())?,
            )
        }
    })
}

/// Quantizer threshold maximizing the worst-case quantized KL: a grid search
/// with spacing `resolution` followed by golden-section refinement.
pub fn minimax_lambda(
    problem: &TestingProblem,
    t0: u32,
    resolution: f64,
) -> Result<MinimaxQuantizer, ModelError> {
    minimax_lambda_with(problem, t0, resolution, &MinimaxOptions::default())
}

pub fn minimax_lambda_with(
    problem: &TestingProblem,
    t0: u32,
    resolution: f64,
    options: &MinimaxOptions,
) -> Result<MinimaxQuantizer, ModelError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(ModelError::Domain {
            what: "resolution",
            value: resolution,
        });
    }
    if t0 == 0 {
        return Err(ModelError::Domain {
            what: "block length",
            value: 0.0,
        });
    }
    let (lo, hi) = search_range(problem, t0)?;
    let steps = ((hi - lo) / resolution).ceil();
    if !(steps < MAX_GRID_POINTS as f64) {
        return Err(ModelError::Domain {
            what: "resolution",
            value: resolution,
        });
    }
    let steps = steps as usize;
    let objective = |l: f64| worst_case_quantized_kl(problem, t0, l, options);

    let mut best = (lo, objective(lo)?);
    for i in 1..=steps {
        let l = (lo + resolution * i as f64).min(hi);
        let v = objective(l)?;
        if v > best.1 {
            best = (l, v);
        }
    }

    // Golden-section refinement inside the neighbouring grid cells.
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((best.0 - resolution).max(lo), (best.0 + resolution).min(hi));
    if problem.family() == Family::Variance {
        a = a.max(0.0);
    }
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c)?, objective(d)?);
    for _ in 0..200 {
        if (b - a) <= 1e-9 * resolution.max(b.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let refined = objective(mid)?;
    Ok(if refined >= best.1 {
        MinimaxQuantizer {
            lambda: mid,
            worst_case_kl: refined,
        }
    } else {
        MinimaxQuantizer {
            lambda: best.0,
            worst_case_kl: best.1,
        }
    })
}
