//! Monte Carlo sweeps: per grid point, resolve thresholds, run trajectories at
//! the truth point and error probes at the boundary points, and summarize.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{
    calibrate_global_thresholds, estimate_error_rates, predict, AsymptoticPrediction, CalibrationError,
    ErrorProbes, ErrorRate, GlobalCalibration, GlobalCalibrationOptions, PredictionRequest,
};
use crate::centralized::EngineError;
use crate::model::{Hypothesis, ModelError, TestingProblem, TruthPoint};
use crate::rng::{Purpose, StreamKey};
use crate::scheme::{run_batch, Replication, Scheme, SchemeConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("point {point_id}: every one of {replications} replications hit the cap")]
    AllCensored { point_id: usize, replications: u64 },
    #[error("point {point_id}: {censored} of {total} runs hit the cap (limit {limit_percent}%)")]
    ExcessiveCensoring {
        point_id: usize,
        censored: u64,
        total: u64,
        limit_percent: f64,
    },
    #[error("cannot compare schemes: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThresholdSource {
    /// The same `(A, B)` at every point.
    Explicit { upper: f64, lower: f64 },
    /// `A = −log α`, `B = −log β` from the point's targets.
    Asymptotic,
    /// Monte Carlo refinement of the asymptotic thresholds.
    Calibrated { budget: u64, secant_steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "axis", content = "grid", rename_all = "kebab-case")]
pub enum SweepAxis {
    Alpha(Vec<f64>),
    Beta(Vec<f64>),
    Truth(Vec<f64>),
    Sensors(Vec<usize>),
}

impl SweepAxis {
    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Alpha(g) | SweepAxis::Beta(g) | SweepAxis::Truth(g) => g.len(),
            SweepAxis::Sensors(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub problem: TestingProblem,
    pub scheme: SchemeConfig,
    pub sensors: usize,
    pub target_alpha: f64,
    pub target_beta: f64,
    pub thresholds: ThresholdSource,
    /// Where the stopping-time trajectories are drawn.
    pub truth: TruthPoint,
    /// Where the error rates are estimated.
    pub probes: ErrorProbes,
    pub sweep: SweepAxis,
    pub replications: u64,
    /// Replications per error probe; zero skips the probes.
    pub error_replications: u64,
    pub seed: u64,
    /// Time steps per replication before a run is censored.
    pub cap: u64,
    /// Largest tolerated censored fraction.
    pub max_censored_fraction: f64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.sweep.is_empty() {
            return bad("the sweep grid is empty".into());
        }
        if self.sensors == 0 {
            return bad("at least one sensor is required".into());
        }
        if self.cap == 0 {
            return bad("cap must be at least 1".into());
        }
        for p in [self.target_alpha, self.target_beta] {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("error targets must lie in (0, 1), got {p}"));
            }
        }
        match &self.sweep {
            SweepAxis::Alpha(g) | SweepAxis::Beta(g) => {
                if let Some(p) = g.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
                    return bad(format!("error targets must lie in (0, 1), got {p}"));
                }
            }
            SweepAxis::Truth(g) => {
                for &v in g {
                    self.problem.truth(self.truth.hypothesis, v)?;
                }
            }
            SweepAxis::Sensors(g) => {
                if g.contains(&0) {
                    return bad("sensor counts must be at least 1".into());
                }
            }
        }
        self.problem.truth(self.truth.hypothesis, self.truth.value)?;
        self.problem.truth(Hypothesis::H0, self.probes.null_value)?;
        self.problem.truth(Hypothesis::H1, self.probes.alt_value)?;
        if let ThresholdSource::Explicit { upper, lower } = self.thresholds {
            if !(upper > 0.0 && lower > 0.0 && upper.is_finite() && lower.is_finite()) {
                return bad(format!("thresholds must be positive, got A={upper}, B={lower}"));
            }
        }
        if !(0.0..=1.0).contains(&self.max_censored_fraction) {
            return bad("max_censored_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// The concrete settings of grid point `index`.
    pub fn point(&self, index: usize) -> PointSpec {
        let mut p = PointSpec {
            id: index,
            sensors: self.sensors,
            target_alpha: self.target_alpha,
            target_beta: self.target_beta,
            truth: self.truth,
        };
        match &self.sweep {
            SweepAxis::Alpha(g) => p.target_alpha = g[index],
            SweepAxis::Beta(g) => p.target_beta = g[index],
            SweepAxis::Truth(g) => p.truth.value = g[index],
            SweepAxis::Sensors(g) => p.sensors = g[index],
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointSpec {
    pub id: usize,
    pub sensors: usize,
    pub target_alpha: f64,
    pub target_beta: f64,
    pub truth: TruthPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub point_id: usize,
    pub scheme: Scheme,
    pub sensors: usize,
    pub target_alpha: f64,
    pub target_beta: f64,
    pub upper: f64,
    pub lower: f64,
    pub local_a: Option<f64>,
    pub local_b: Option<f64>,
    pub t0: Option<u32>,
    pub lambda: Option<f64>,
    pub truth: TruthPoint,
    pub replications: u64,
    /// Mean and standard error of the stopping time over uncensored runs.
    pub mean_stopping_time: f64,
    pub stderr: f64,
    pub alpha: Option<ErrorRate>,
    pub beta: Option<ErrorRate>,
    pub mean_messages: f64,
    /// Pooled mean inter-communication period per sensor.
    pub mean_inter_comm_period: Option<f64>,
    /// Censored runs over trajectories and probes.
    pub censored_count: u64,
    pub total_runs: u64,
    pub prediction: AsymptoticPrediction,
    pub predicted_size: f64,
    pub calibration_warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Calibrating,
    Trajectories,
    ErrorProbes,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub point: usize,
    pub points: usize,
    pub phase: Phase,
}

fn summarize_runs(runs: &[Replication]) -> (f64, f64, f64, Option<f64>, u64) {
    let done: Vec<&Replication> = runs.iter().filter(|r| !r.verdict.censored).collect();
    let censored = (runs.len() - done.len()) as u64;
    if done.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, None, censored);
    }
    let n = done.len() as f64;
    let mean = done.iter().map(|r| r.verdict.stopping_time as f64).sum::<f64>() / n;
    let var = if done.len() > 1 {
        done.iter()
            .map(|r| (r.verdict.stopping_time as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let messages = done.iter().map(|r| r.verdict.messages_sent as f64).sum::<f64>() / n;
    let (psum, pcount) = done
        .iter()
        .fold((0u64, 0u64), |(s, c), r| (s + r.period_sum, c + r.period_count));
    let period = (pcount > 0).then(|| psum as f64 / pcount as f64);
    (mean, (var / n).sqrt(), messages, period, censored)
}

/// Global thresholds of one grid point, with the calibration outcome when the
/// spec asks for calibrated thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct PointThresholds {
    pub upper: f64,
    pub lower: f64,
    pub warning: Option<String>,
    pub calibration: Option<GlobalCalibration>,
}

pub fn point_thresholds(spec: &ExperimentSpec, index: usize) -> Result<PointThresholds, ExperimentError> {
    let point = spec.point(index);
    let id = point.id as u64;
    Ok(match spec.thresholds {
        ThresholdSource::Explicit { upper, lower } => PointThresholds {
            upper,
            lower,
            warning: None,
            calibration: None,
        },
        ThresholdSource::Asymptotic => PointThresholds {
            upper: -point.target_alpha.ln(),
            lower: -point.target_beta.ln(),
            warning: None,
            calibration: None,
        },
        ThresholdSource::Calibrated { budget, secant_steps } => {
            let c = calibrate_global_thresholds(
                &spec.problem,
                &spec.scheme,
                point.sensors,
                point.target_alpha,
                point.target_beta,
                &spec.probes,
                &GlobalCalibrationOptions {
                    budget,
                    secant_steps,
                    seed: spec.seed,
                    point: id,
                    cap: spec.cap,
                    ..Default::default()
                },
            )?;
            PointThresholds {
                upper: c.upper,
                lower: c.lower,
                warning: c.warning.clone(),
                calibration: Some(c),
            }
        }
    })
}

/// Runs one grid point.
pub fn run_point(
    spec: &ExperimentSpec,
    index: usize,
    mut progress: impl FnMut(Phase),
) -> Result<McSummary, ExperimentError> {
    spec.validate()?;
    if index >= spec.sweep.len() {
        return Err(ExperimentError::InvalidSpec(format!("no grid point {index}")));
    }
    let point = spec.point(index);
    let id = point.id as u64;

    progress(Phase::Calibrating);
    let PointThresholds { upper, lower, warning, .. } = point_thresholds(spec, index)?;

    progress(Phase::Trajectories);
    let key = StreamKey::new(spec.seed, id, Purpose::Trajectory, 0);
    let runs = run_batch(
        &spec.problem,
        &spec.scheme,
        point.sensors,
        upper,
        lower,
        &point.truth,
        key,
        spec.replications,
        spec.cap,
    )?;
    let (mean, stderr, messages, period, mut censored) = summarize_runs(&runs);
    if censored == spec.replications {
        return Err(ExperimentError::AllCensored {
            point_id: point.id,
            replications: spec.replications,
        });
    }

    progress(Phase::ErrorProbes);
    let (alpha, beta) = if spec.error_replications > 0 {
        let (a, b) = estimate_error_rates(
            &spec.problem,
            &spec.scheme,
            point.sensors,
            upper,
            lower,
            &spec.probes,
            StreamKey::new(spec.seed, id, Purpose::AlphaProbe, 0),
            StreamKey::new(spec.seed, id, Purpose::BetaProbe, 0),
            spec.error_replications,
            spec.cap,
        )?;
        censored += a.censored + b.censored;
        (Some(a), Some(b))
    } else {
        (None, None)
    };

    let mut request = PredictionRequest::at_boundary(&spec.problem, &spec.scheme, point.sensors, upper, lower);
    match point.truth.hypothesis {
        Hypothesis::H0 => request.null_value = point.truth.value,
        Hypothesis::H1 => request.alt_value = point.truth.value,
    }
    let prediction = predict(&spec.problem, &request)?;
    let (local_a, local_b, t0, lambda) = match spec.scheme {
        SchemeConfig::Lts { a, b } => (Some(a), Some(b), None, None),
        SchemeConfig::Uniform { t0, lambda } => (None, None, Some(t0), Some(lambda)),
        _ => (None, None, None, None),
    };
    progress(Phase::Done);
    Ok(McSummary {
        point_id: point.id,
        scheme: spec.scheme.scheme(),
        sensors: point.sensors,
        target_alpha: point.target_alpha,
        target_beta: point.target_beta,
        upper,
        lower,
        local_a,
        local_b,
        t0,
        lambda,
        truth: point.truth,
        replications: spec.replications,
        mean_stopping_time: mean,
        stderr,
        alpha,
        beta,
        mean_messages: messages,
        mean_inter_comm_period: match spec.scheme {
            SchemeConfig::Lts { .. } | SchemeConfig::Uniform { .. } => period,
            _ => None,
        },
        censored_count: censored,
        total_runs: spec.replications + 2 * spec.error_replications,
        prediction,
        predicted_size: prediction.expected_size(point.truth.hypothesis),
        calibration_warning: warning,
    })
}

/// Fails when a summary's censored fraction exceeds the spec's limit.
pub fn check_censoring(spec: &ExperimentSpec, summary: &McSummary) -> Result<(), ExperimentError> {
    let fraction = summary.censored_count as f64 / summary.total_runs.max(1) as f64;
    if fraction > spec.max_censored_fraction {
        return Err(ExperimentError::ExcessiveCensoring {
            point_id: summary.point_id,
            censored: summary.censored_count,
            total: summary.total_runs,
            limit_percent: 100.0 * spec.max_censored_fraction,
        });
    }
    Ok(())
}

/// Runs every grid point in order. Censoring above the limit is not an error
/// here; callers inspect it with [`check_censoring`].
pub fn run_sweep(
    spec: &ExperimentSpec,
    mut progress: impl FnMut(Progress),
) -> Result<Vec<McSummary>, ExperimentError> {
    spec.validate()?;
    let points = spec.sweep.len();
    (0..points)
        .map(|i| {
            run_point(spec, i, |phase| {
                progress(Progress {
                    point: i,
                    points,
                    phase,
                })
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub point_id: usize,
    pub centralized_mean_t: f64,
    pub uniform_mean_t: f64,
    pub lts_mean_t: f64,
    pub uniform_ratio: f64,
    pub lts_ratio: f64,
    pub centralized_messages: f64,
    pub uniform_messages: f64,
    pub lts_messages: f64,
    pub uniform_message_ratio: f64,
    pub lts_message_ratio: f64,
}

fn same_point(a: &McSummary, b: &McSummary) -> bool {
    a.point_id == b.point_id
        && a.sensors == b.sensors
        && a.target_alpha == b.target_alpha
        && a.target_beta == b.target_beta
        && a.truth == b.truth
}

/// Joins three sweeps over the same grid into ratio rows against the
/// centralized baseline.
pub fn compare_schemes(
    centralized: &[McSummary],
    uniform: &[McSummary],
    lts: &[McSummary],
) -> Result<Vec<ComparisonRow>, ExperimentError> {
    if centralized.len() != uniform.len() || centralized.len() != lts.len() {
        return Err(ExperimentError::Mismatch(format!(
            "grid sizes differ: {} / {} / {}",
            centralized.len(),
            uniform.len(),
            lts.len()
        )));
    }
    centralized
        .iter()
        .zip(uniform)
        .zip(lts)
        .map(|((c, u), l)| {
            if !same_point(c, u) || !same_point(c, l) {
                return Err(ExperimentError::Mismatch(format!(
                    "grid point {} differs between sweeps",
                    c.point_id
                )));
            }
            Ok(ComparisonRow {
                point_id: c.point_id,
                centralized_mean_t: c.mean_stopping_time,
                uniform_mean_t: u.mean_stopping_time,
                lts_mean_t: l.mean_stopping_time,
                uniform_ratio: u.mean_stopping_time / c.mean_stopping_time,
                lts_ratio: l.mean_stopping_time / c.mean_stopping_time,
                centralized_messages: c.mean_messages,
                uniform_messages: u.mean_messages,
                lts_messages: l.mean_messages,
                uniform_message_ratio: u.mean_messages / c.mean_messages,
                lts_message_ratio: l.mean_messages / c.mean_messages,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParameterInterval;

    fn iv(lo: f64, hi: f64) -> ParameterInterval {
        ParameterInterval::new(lo, hi).unwrap()
    }

    fn spec(scheme: SchemeConfig) -> ExperimentSpec {
        let problem = TestingProblem::mean_shift(1.0, iv(0.0, 0.0), iv(0.4, 2.0)).unwrap();
        ExperimentSpec {
            problem,
            scheme,
            sensors: 2,
            target_alpha: 1e-2,
            target_beta: 1e-2,
            thresholds: ThresholdSource::Asymptotic,
            truth: problem.truth(Hypothesis::H1, 0.4).unwrap(),
            probes: ErrorProbes::boundary(&problem),
            sweep: SweepAxis::Alpha(vec![1e-2]),
            replications: 200,
            error_replications: 200,
            seed: 1,
            cap: 1_000_000,
            max_censored_fraction: 0.01,
        }
    }

    #[test]
    fn single_capped_replication_is_censored() {
        let s = ExperimentSpec {
            replications: 1,
            error_replications: 0,
            cap: 1,
            thresholds: ThresholdSource::Explicit { upper: 50.0, lower: 50.0 },
            ..spec(SchemeConfig::Centralized)
        };
        assert_eq!(
            run_point(&s, 0, |_| {}),
            Err(ExperimentError::AllCensored {
                point_id: 0,
                replications: 1
            })
        );
    }

    #[test]
    fn censoring_limit() {
        let s = ExperimentSpec {
            replications: 400,
            error_replications: 0,
            cap: 40,
            ..spec(SchemeConfig::Centralized)
        };
        let summary = run_point(&s, 0, |_| {}).unwrap();
        assert!(summary.censored_count > 4);
        assert!(matches!(
            check_censoring(&s, &summary),
            Err(ExperimentError::ExcessiveCensoring { .. })
        ));
    }

    #[test]
    fn same_seed_same_summary() {
        for scheme in [
            SchemeConfig::Centralized,
            SchemeConfig::Uniform { t0: 2, lambda: 0.64 },
            SchemeConfig::Lts { a: 1.0, b: 1.0 },
        ] {
            let s = spec(scheme);
            let a = run_point(&s, 0, |_| {}).unwrap();
            let b = run_point(&s, 0, |_| {}).unwrap();
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
            let other = run_point(&ExperimentSpec { seed: 2, ..s.clone() }, 0, |_| {}).unwrap();
            assert_ne!(a.mean_stopping_time, other.mean_stopping_time);
        }
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let s = spec(SchemeConfig::Lts { a: 1.0, b: 1.0 });
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_point(&s, 0, |_| {})).unwrap();
        let b = four.install(|| run_point(&s, 0, |_| {})).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn summary_fields_are_consistent() {
        let s = spec(SchemeConfig::Lts { a: 1.0, b: 1.0 });
        let m = run_point(&s, 0, |_| {}).unwrap();
        assert!(m.stderr >= 0.0);
        for r in [m.alpha.unwrap(), m.beta.unwrap()] {
            assert!(0.0 <= r.ci_lo && r.ci_lo <= r.estimate && r.estimate <= r.ci_hi && r.ci_hi <= 1.0);
        }
        assert!(m.censored_count <= m.total_runs);
        assert!(m.mean_inter_comm_period.unwrap() >= 1.0);
        assert_eq!(m.local_a, Some(1.0));
        assert!((m.predicted_size - m.upper / 0.16).abs() < 1e-9);
    }

    #[test]
    fn alpha_sweep_sizes_grow() {
        let s = ExperimentSpec {
            sweep: SweepAxis::Alpha(vec![1e-1, 1e-2, 1e-3]),
            replications: 2000,
            error_replications: 0,
            ..spec(SchemeConfig::Centralized)
        };
        let mut seen = Vec::new();
        let out = run_sweep(&s, |p| seen.push(p)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out[0].mean_stopping_time <= out[1].mean_stopping_time);
        assert!(out[1].mean_stopping_time <= out[2].mean_stopping_time);
        assert_eq!(seen.iter().filter(|p| p.phase == Phase::Done).count(), 3);
        assert_eq!(seen.last().unwrap().point, 2);
    }

    #[test]
    fn sensor_sweep_scales_inversely() {
        let s = ExperimentSpec {
            sweep: SweepAxis::Sensors(vec![1, 2, 4, 8]),
            replications: 3000,
            error_replications: 0,
            target_alpha: 1e-3,
            target_beta: 1e-3,
            ..spec(SchemeConfig::Centralized)
        };
        let out = run_sweep(&s, |_| {}).unwrap();
        let ratio = out[0].mean_stopping_time / out[1].mean_stopping_time;
        assert!((1.6..=2.4).contains(&ratio), "{ratio}");
        for w in out.windows(2) {
            assert!(w[0].mean_stopping_time > w[1].mean_stopping_time);
        }
    }

    #[test]
    fn lts_period_shrinks_with_truth() {
        let s = ExperimentSpec {
            sweep: SweepAxis::Truth(vec![0.4, 0.8, 1.2, 2.0]),
            replications: 500,
            error_replications: 0,
            ..spec(SchemeConfig::Lts { a: 0.9, b: 0.9 })
        };
        let out = run_sweep(&s, |_| {}).unwrap();
        for w in out.windows(2) {
            assert!(w[0].mean_inter_comm_period.unwrap() > w[1].mean_inter_comm_period.unwrap());
        }
    }

    #[test]
    fn comparison_self_ratio_and_mismatch() {
        let s = spec(SchemeConfig::Centralized);
        let c = run_sweep(&s, |_| {}).unwrap();
        let rows = compare_schemes(&c, &c, &c).unwrap();
        assert_eq!(rows[0].lts_ratio, 1.0);
        assert_eq!(rows[0].uniform_message_ratio, 1.0);
        let other = run_sweep(
            &ExperimentSpec {
                sweep: SweepAxis::Alpha(vec![1e-3]),
                ..s.clone()
            },
            |_| {},
        )
        .unwrap();
        assert!(matches!(compare_schemes(&c, &other, &c), Err(ExperimentError::Mismatch(_))));
        assert!(matches!(compare_schemes(&c, &[], &c), Err(ExperimentError::Mismatch(_))));
    }

    #[test]
    fn validation() {
        let good = spec(SchemeConfig::Centralized);
        assert!(good.validate().is_ok());
        for bad in [
            ExperimentSpec { replications: 0, ..good.clone() },
            ExperimentSpec { sweep: SweepAxis::Alpha(vec![]), ..good.clone() },
            ExperimentSpec { sweep: SweepAxis::Alpha(vec![1.5]), ..good.clone() },
            ExperimentSpec { sweep: SweepAxis::Truth(vec![0.1]), ..good.clone() },
            ExperimentSpec { sweep: SweepAxis::Sensors(vec![0]), ..good.clone() },
            ExperimentSpec { thresholds: ThresholdSource::Explicit { upper: -1.0, lower: 1.0 }, ..good.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
