//! Threshold selection: first-order asymptotic predictions of expected sample
//! sizes and error exponents, and Monte Carlo calibration of the local LTS
//! thresholds and of the global thresholds.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::centralized::EngineError;
use crate::lts::{LtsSensor, SensorEvent};
use crate::model::{Hypothesis, ModelError, TestingProblem, TruthPoint};
use crate::rng::{Purpose, StreamKey};
use crate::scheme::{closest_points, run_batch, Scheme, SchemeConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("the uniform scheme needs both T0 and lambda")]
    MissingQuantizer,
    #[error("invalid {what}: {value}")]
    InvalidTarget { what: &'static str, value: f64 },
    #[error("calibration did not converge after {iterations} iterations: {detail}")]
    NoConvergence { iterations: usize, detail: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// First-order predictions: `E_θ T ≈ A / (L · inf_γ D(f_θ || h_γ))`,
/// `E_γ T ≈ B / (L · inf_θ D(h_γ || f_θ))`, `log α ≈ −A`, `log β ≈ −B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPrediction {
    pub scheme: Scheme,
    pub expected_size_h0: f64,
    pub expected_size_h1: f64,
    pub log_alpha: f64,
    pub log_beta: f64,
}

impl AsymptoticPrediction {
    pub fn expected_size(&self, hypothesis: Hypothesis) -> f64 {
        match hypothesis {
            Hypothesis::H0 => self.expected_size_h0,
            Hypothesis::H1 => self.expected_size_h1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRequest {
    pub scheme: Scheme,
    pub sensors: usize,
    pub upper: f64,
    pub lower: f64,
    /// Truth values at which the H0 and H1 sizes are predicted.
    pub null_value: f64,
    pub alt_value: f64,
    pub t0: Option<u32>,
    pub lambda: Option<f64>,
}

impl PredictionRequest {
    /// A request at the boundary points closest to the other hypothesis.
    pub fn at_boundary(
        problem: &TestingProblem,
        scheme: &SchemeConfig,
        sensors: usize,
        upper: f64,
        lower: f64,
    ) -> Self {
        let (t0, lambda) = match *scheme {
            SchemeConfig::Uniform { t0, lambda } => (Some(t0), Some(lambda)),
            _ => (None, None),
        };
        PredictionRequest {
            scheme: scheme.scheme(),
            sensors,
            upper,
            lower,
            null_value: problem.null_set().hi(),
            alt_value: problem.alt_set().lo(),
            t0,
            lambda,
        }
    }
}

pub fn predict(
    problem: &TestingProblem,
    request: &PredictionRequest,
) -> Result<AsymptoticPrediction, CalibrationError> {
    if request.sensors == 0 {
        return Err(CalibrationError::InvalidTarget {
            what: "sensor count",
            value: 0.0,
        });
    }
    for (what, v) in [("upper threshold", request.upper), ("lower threshold", request.lower)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CalibrationError::InvalidTarget { what, value: v });
        }
    }
    let h0 = problem.truth(Hypothesis::H0, request.null_value)?;
    let h1 = problem.truth(Hypothesis::H1, request.alt_value)?;
    let rate = |truth: &TruthPoint| -> Result<f64, CalibrationError> {
        Ok(match request.scheme {
            Scheme::Centralized | Scheme::Lts => problem.inf_kl(truth)?,
            Scheme::Uniform => {
                let (t0, lambda) = match (request.t0, request.lambda) {
                    (Some(t0), Some(lambda)) => (t0, lambda),
                    _ => return Err(CalibrationError::MissingQuantizer),
                };
                problem.inf_quantized_kl(truth, t0, lambda)? / f64::from(t0)
            }
            Scheme::SimpleSprt => {
                // Drift of the closest-points log-likelihood ratio, signed
                // towards the correct decision.
                let simple = closest_points(problem)?;
                let (gamma, theta) = (simple.null_set().lo(), simple.alt_set().lo());
                let x = truth.value;
                let drift = problem.kl_divergence(x, gamma)? - problem.kl_divergence(x, theta)?;
                match truth.hypothesis {
                    Hypothesis::H1 => drift,
                    Hypothesis::H0 => -drift,
                }
            }
        })
    };
    let l = request.sensors as f64;
    let size = |threshold: f64, r: f64| -> Result<f64, CalibrationError> {
        if r > 0.0 {
            Ok(threshold / (r * l))
        } else {
            Err(CalibrationError::Model(ModelError::Domain {
                what: "information rate",
                value: r,
            }))
        }
    };
    Ok(AsymptoticPrediction {
        scheme: request.scheme,
        expected_size_h0: size(request.lower, rate(&h0)?)?,
        expected_size_h1: size(request.upper, rate(&h1)?)?,
        log_alpha: -request.upper,
        log_beta: -request.lower,
    })
}

const WILSON_Z: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `trials` at 95%.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// An empirical error rate over the uncensored runs of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRate {
    pub errors: u64,
    pub trials: u64,
    pub censored: u64,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl ErrorRate {
    pub fn new(errors: u64, trials: u64, censored: u64) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(errors, trials);
        ErrorRate {
            errors,
            trials,
            censored,
            estimate: if trials == 0 { f64::NAN } else { errors as f64 / trials as f64 },
            ci_lo,
            ci_hi,
        }
    }
}

/// Truth values at which the error rates are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorProbes {
    pub null_value: f64,
    pub alt_value: f64,
}

impl ErrorProbes {
    /// The points of each hypothesis closest to the other one.
    pub fn boundary(problem: &TestingProblem) -> Self {
        ErrorProbes {
            null_value: problem.null_set().hi(),
            alt_value: problem.alt_set().lo(),
        }
    }
}

/// Estimates `(α, β)` at the probe points with `replications` runs each.
#[allow(clippy::too_many_arguments)]
pub fn estimate_error_rates(
    problem: &TestingProblem,
    scheme: &SchemeConfig,
    sensors: usize,
    upper: f64,
    lower: f64,
    probes: &ErrorProbes,
    alpha_key: StreamKey,
    beta_key: StreamKey,
    replications: u64,
    cap: u64,
) -> Result<(ErrorRate, ErrorRate), CalibrationError> {
    let mut rates = Vec::with_capacity(2);
    for (hypothesis, value, key) in [
        (Hypothesis::H0, probes.null_value, alpha_key),
        (Hypothesis::H1, probes.alt_value, beta_key),
    ] {
        let truth = problem.truth(hypothesis, value)?;
        let runs = run_batch(problem, scheme, sensors, upper, lower, &truth, key, replications, cap)?;
        let censored = runs.iter().filter(|r| r.verdict.censored).count() as u64;
        let errors = runs
            .iter()
            .filter(|r| !r.verdict.censored && r.verdict.decision != hypothesis)
            .count() as u64;
        rates.push(ErrorRate::new(errors, replications - censored, censored));
    }
    Ok((rates[0], rates[1]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalCalibrationOptions {
    /// Replications per probe per iteration.
    pub budget: u64,
    pub secant_steps: usize,
    pub seed: u64,
    pub point: u64,
    pub cap: u64,
    /// Refinement is skipped when `target · budget` falls below this.
    pub min_expected_errors: f64,
}

impl Default for GlobalCalibrationOptions {
    fn default() -> Self {
        GlobalCalibrationOptions {
            budget: 20_000,
            secant_steps: 4,
            seed: 0,
            point: 0,
            cap: 10_000_000,
            min_expected_errors: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalCalibration {
    pub upper: f64,
    pub lower: f64,
    /// Error rates measured at the returned thresholds, when refined.
    pub alpha: Option<ErrorRate>,
    pub beta: Option<ErrorRate>,
    pub refined: bool,
    pub warning: Option<String>,
}

fn check_target(what: &'static str, p: f64) -> Result<(), CalibrationError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(CalibrationError::InvalidTarget { what, value: p })
    }
}

/// Secant iteration on `x ↦ log p̂(x) − log target` for one threshold.
#[derive(Debug, Clone, Copy)]
struct Secant {
    target_log: f64,
    prev: Option<(f64, f64)>,
}

impl Secant {
    const MIN_THRESHOLD: f64 = 0.05;

    fn residual(&self, rate: &ErrorRate) -> f64 {
        // Half an error when none were seen keeps the logarithm finite.
        let n = rate.trials.max(1) as f64;
        let p = if rate.errors == 0 { 0.5 / n } else { rate.estimate };
        p.ln() - self.target_log
    }

    fn next(&mut self, x: f64, f: f64) -> f64 {
        // The error exponent is close to −1 per unit of threshold; secant
        // slopes outside a sane range are replaced by that.
        let slope = match self.prev {
            Some((x0, f0)) if (x - x0).abs() > 1e-12 => {
                let s = (f - f0) / (x - x0);
                if s.is_finite() && (-4.0..=-0.25).contains(&s) {
                    s
                } else {
                    -1.0
                }
            }
            _ => -1.0,
        };
        self.prev = Some((x, f));
        (x - f / slope).max(Self::MIN_THRESHOLD)
    }
}

/// Refines `(A, B)` so that the empirical `(α, β)` at the probe points match
/// the targets. Starts at `(−log α, −log β)`; every iteration reuses the same
/// random streams.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_global_thresholds(
    problem: &TestingProblem,
    scheme: &SchemeConfig,
    sensors: usize,
    target_alpha: f64,
    target_beta: f64,
    probes: &ErrorProbes,
    options: &GlobalCalibrationOptions,
) -> Result<GlobalCalibration, CalibrationError> {
    check_target("target alpha", target_alpha)?;
    check_target("target beta", target_beta)?;
    let mut upper = -target_alpha.ln();
    let mut lower = -target_beta.ln();
    let unrefined = |warning: String| GlobalCalibration {
        upper: -target_alpha.ln(),
        lower: -target_beta.ln(),
        alpha: None,
        beta: None,
        refined: false,
        warning: Some(warning),
    };
    if options.budget == 0 || options.secant_steps == 0 {
        return Ok(unrefined("no calibration budget; using asymptotic thresholds".into()));
    }
    let budget = options.budget as f64;
    if target_alpha.min(target_beta) * budget < options.min_expected_errors {
        return Ok(unrefined(format!(
            "budget of {} replications cannot resolve targets alpha={target_alpha}, beta={target_beta}; using asymptotic thresholds",
            options.budget
        )));
    }

    let key = StreamKey::new(options.seed, options.point, Purpose::GlobalCalibration, 0);
    // Distinct streams for the two probes: the point index is offset.
    let alpha_key = key;
    let beta_key = StreamKey {
        point: options.point ^ (1 << 63),
        ..key
    };
    let mut sa = Secant {
        target_log: target_alpha.ln(),
        prev: None,
    };
    let mut sb = Secant {
        target_log: target_beta.ln(),
        prev: None,
    };
    // Each threshold mostly controls its own error rate, so the best upper
    // and lower thresholds are picked separately. On lattice-valued
    // statistics a joint score lets one coarse rate mask the other.
    let mut evaluated: Vec<(f64, f64, ErrorRate, ErrorRate)> = Vec::new();
    let mut best_upper = (f64::INFINITY, upper);
    let mut best_lower = (f64::INFINITY, lower);
    let estimate = |upper: f64, lower: f64| {
        estimate_error_rates(
            problem,
            scheme,
            sensors,
            upper,
            lower,
            probes,
            alpha_key,
            beta_key,
            options.budget,
            options.cap,
        )
    };
    for _ in 0..options.secant_steps {
        let (alpha, beta) = estimate(upper, lower)?;
        let (fa, fb) = (sa.residual(&alpha), sb.residual(&beta));
        if fa.abs() < best_upper.0 {
            best_upper = (fa.abs(), upper);
        }
        if fb.abs() < best_lower.0 {
            best_lower = (fb.abs(), lower);
        }
        evaluated.push((upper, lower, alpha, beta));
        upper = sa.next(upper, fa);
        lower = sb.next(lower, fb);
    }
    let (upper, lower) = (best_upper.1, best_lower.1);
    let (alpha, beta) = match evaluated.iter().find(|e| e.0 == upper && e.1 == lower) {
        Some(e) => (e.2, e.3),
        None => estimate(upper, lower)?,
    };
    Ok(GlobalCalibration {
        upper,
        lower,
        alpha: Some(alpha),
        beta: Some(beta),
        refined: true,
        warning: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalCalibrationOptions {
    /// Emissions observed per estimate of the mean period.
    pub emissions: u64,
    /// Independent chains the emissions are split across.
    pub chains: u64,
    /// Relative tolerance on the mean period.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// `b = ratio · a`.
    pub b_over_a: f64,
    pub seed: u64,
}

impl Default for LocalCalibrationOptions {
    fn default() -> Self {
        LocalCalibrationOptions {
            emissions: 20_000,
            chains: 16,
            tolerance: 0.02,
            max_iterations: 60,
            b_over_a: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BisectionStep {
    pub a: f64,
    pub mean_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalCalibration {
    pub a: f64,
    pub b: f64,
    pub mean_period: f64,
    pub trace: Vec<BisectionStep>,
}

fn chain_periods<R: Rng>(
    problem: &TestingProblem,
    truth: &TruthPoint,
    a: f64,
    b: f64,
    emissions: u64,
    rng: &mut R,
) -> Result<u64, CalibrationError> {
    // Generous guard against thresholds the reference truth never crosses.
    let cap = emissions.saturating_mul(1_000_000);
    let mut sensor = LtsSensor::new(0, *problem, a, b)?;
    let mut t = 0u64;
    while sensor.emissions() < emissions {
        t += 1;
        if t > cap {
            return Err(CalibrationError::NoConvergence {
                iterations: 0,
                detail: format!("no emissions within {cap} samples at a={a}, b={b}"),
            });
        }
        if let SensorEvent::Emit { .. } = sensor.step(problem.sample(truth, rng), t)? {}
    }
    Ok(t)
}

/// Monte Carlo estimate of the mean inter-communication period of one sensor.
pub fn estimate_mean_period(
    problem: &TestingProblem,
    truth: &TruthPoint,
    a: f64,
    b: f64,
    options: &LocalCalibrationOptions,
) -> Result<f64, CalibrationError> {
    let chains = options.chains.max(1);
    let per_chain = options.emissions.div_ceil(chains).max(1);
    let key = StreamKey::new(options.seed, 0, Purpose::LocalCalibration, 0);
    let samples = (0..chains)
        .into_par_iter()
        .map(|c| chain_periods(problem, truth, a, b, per_chain, &mut key.with_replication(c).sensor_rng(0)))
        .collect::<Result<Vec<u64>, _>>()?;
    Ok(samples.iter().sum::<u64>() as f64 / (per_chain * chains) as f64)
}

/// Finds `(a, b)` whose mean inter-communication period at `reference` is
/// within `tolerance · target` of `target`, by bisection on `a` with `b`
/// tied to it. Every estimate reuses the same streams.
pub fn calibrate_local_thresholds(
    problem: &TestingProblem,
    reference: &TruthPoint,
    target: f64,
    options: &LocalCalibrationOptions,
) -> Result<LocalCalibration, CalibrationError> {
    if !(target >= 1.0 && target.is_finite()) {
        return Err(CalibrationError::InvalidTarget {
            what: "target mean period",
            value: target,
        });
    }
    if !(options.b_over_a > 0.0 && options.b_over_a.is_finite()) {
        return Err(CalibrationError::InvalidTarget {
            what: "b/a ratio",
            value: options.b_over_a,
        });
    }
    if !(options.tolerance > 0.0) {
        return Err(CalibrationError::InvalidTarget {
            what: "tolerance",
            value: options.tolerance,
        });
    }
    let mut trace = Vec::new();
    let mut eval = |a: f64| -> Result<f64, CalibrationError> {
        let m = estimate_mean_period(problem, reference, a, a * options.b_over_a, options)?;
        trace.push(BisectionStep { a, mean_period: m });
        Ok(m)
    };
    let ok = |m: f64| (m - target).abs() <= options.tolerance * target;
    let done = |a: f64, m: f64, trace: Vec<BisectionStep>| LocalCalibration {
        a,
        b: a * options.b_over_a,
        mean_period: m,
        trace,
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut iterations = 0;
    loop {
        let m = eval(hi)?;
        iterations += 1;
        if ok(m) {
            return Ok(done(hi, m, trace));
        }
        if m > target {
            break;
        }
        if iterations >= options.max_iterations {
            return Err(CalibrationError::NoConvergence {
                iterations,
                detail: format!("mean period {m} at a={hi} is still below {target}"),
            });
        }
        lo = hi;
        hi *= 2.0;
    }
    while iterations < options.max_iterations {
        let mid = 0.5 * (lo + hi);
        let m = eval(mid)?;
        iterations += 1;
        if ok(m) {
            return Ok(done(mid, m, trace));
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(CalibrationError::NoConvergence {
        iterations,
        detail: format!("bracket [{lo}, {hi}] for target mean period {target}"),
    })
}
