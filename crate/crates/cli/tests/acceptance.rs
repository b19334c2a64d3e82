//! End-to-end acceptance checks. Every check prints one `criterion N: PASS`
//! or `criterion N: FAIL` line with the measured values, then asserts.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gsprt::calibrate::{calibrate_local_thresholds, estimate_error_rates, ErrorProbes, LocalCalibrationOptions};
use gsprt::centralized::CentralizedEngine;
use gsprt::model::{Hypothesis, ParameterInterval, SuffStat, TestingProblem};
use gsprt::numerics::{chi_squared_cdf, chi_squared_quantile, std_normal_cdf, std_normal_quantile, Probability};
use gsprt::rng::{Purpose, StreamKey};
use gsprt::scheme::SchemeConfig;
use gsprt::uniform::bernoulli_gllr;
use rand::Rng;

const BIN: &str = env!("CARGO_BIN_EXE_gsprt");

// Tolerances, pinned.
const KL_EXACT: &str = "0.08";
const QUANTIZED_KL: f64 = 0.051;
const QUANTIZED_KL_REVERSE: f64 = 0.050;
const QUANTIZED_TOL: f64 = 0.003;
const PER_SAMPLE_REVERSE_T0_10: f64 = 0.042;
const PER_SAMPLE_TOL: f64 = 0.004;
const MEAN_SHIFT_LAMBDA: (f64, f64) = (0.30, 0.34);
const VARIANCE_LAMBDA: (f64, f64) = (3.7, 3.9);
const SPRT_TRAJECTORIES: u64 = 1_000;
const GLLR_INSTANCES: u64 = 1_000;
const GLLR_TOL: f64 = 1e-6;
const PREDICTION_TOL: f64 = 0.35;
const LTS_RATIO_MAX: f64 = 1.35;
const UNIFORM_RATIO_MIN: f64 = 1.25;
const RENEWAL_TOL: f64 = 0.20;
const EXPONENT_SLOPE_MIN: f64 = 0.6;
const EXPONENT_REPLICATIONS: u64 = 100_000;
const NORMAL_ROUNDTRIP_TOL: f64 = 1e-9;
const CHI2_ROUNDTRIP_TOL: f64 = 1e-8;
const CHI2_CLOSED_FORM_TOL: f64 = 1e-10;

fn report(n: u32, pass: bool, detail: &str, elapsed: Duration, limit: Option<Duration>) {
    let status = if pass { "PASS" } else { "FAIL" };
    let timing = match limit {
        Some(limit) => format!("{:.2}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()),
        None => "no extra runtime".to_string(),
    };
    println!("criterion {n}: {status} ({detail}; {timing})");
    assert!(pass, "criterion {n} failed: {detail}");
}

fn gsprt(args: &[&str]) -> String {
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "gsprt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn value(table: &str, key: &str) -> String {
    table
        .lines()
        .find_map(|l| {
            let mut parts = l.split_whitespace();
            (parts.next() == Some(key)).then(|| parts.next().unwrap_or_default().to_string())
        })
        .unwrap_or_else(|| panic!("no `{key}` row in\n{table}"))
}

fn fvalue(table: &str, key: &str) -> f64 {
    value(table, key).parse().expect("numeric cell")
}

fn iv(lo: f64, hi: f64) -> ParameterInterval {
    ParameterInterval::new(lo, hi).unwrap()
}

fn mean_shift() -> TestingProblem {
    TestingProblem::mean_shift(1.0, iv(0.0, 0.0), iv(0.4, 2.0)).unwrap()
}

#[test]
fn criterion_01_closed_form_kl() {
    let start = Instant::now();
    let out = gsprt(&["kl", "--theta", "0.4", "--gamma", "0"]);
    let got = value(&out, "kl_theta_gamma");
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(1);
    report(
        1,
        got == KL_EXACT && elapsed < limit,
        &format!("D = {got}"),
        elapsed,
        Some(limit),
    );
}

#[test]
fn criterion_02_quantized_kl() {
    let start = Instant::now();
    let t1 = gsprt(&["kl", "--theta", "0.4", "--gamma", "0", "--t0", "1", "--lambda", "0.32"]);
    let t10 = gsprt(&["kl", "--theta", "0.4", "--gamma", "0", "--t0", "10", "--lambda", "3.2"]);
    let forward = fvalue(&t1, "quantized_kl_theta_gamma");
    let reverse_inf = fvalue(&t1, "inf_quantized_kl_null");
    let per_sample = fvalue(&t10, "inf_quantized_kl_null_per_sample");
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(1);
    let pass = (forward - QUANTIZED_KL).abs() <= QUANTIZED_TOL
        && (reverse_inf - QUANTIZED_KL_REVERSE).abs() <= QUANTIZED_TOL
        && (per_sample - PER_SAMPLE_REVERSE_T0_10).abs() <= PER_SAMPLE_TOL
        && elapsed < limit;
    report(
        2,
        pass,
        &format!("forward {forward:.5}, reverse inf {reverse_inf:.5}, T0=10 per-sample reverse {per_sample:.5}"),
        elapsed,
        Some(limit),
    );
}

#[test]
fn criterion_03_minimax_quantizer() {
    let limit = Duration::from_secs(10);
    let start = Instant::now();
    let out = gsprt(&["quantizer", "--t0", "1"]);
    let t_mean = start.elapsed();
    let per_sample = fvalue(&out, "lambda_per_sample");
    let start = Instant::now();
    let out = gsprt(&["quantizer", "--family", "variance", "--t0", "1"]);
    let t_var = start.elapsed();
    let lambda = fvalue(&out, "lambda");
    let pass = (MEAN_SHIFT_LAMBDA.0..=MEAN_SHIFT_LAMBDA.1).contains(&per_sample)
        && (VARIANCE_LAMBDA.0..=VARIANCE_LAMBDA.1).contains(&lambda)
        && t_mean < limit
        && t_var < limit;
    report(
        3,
        pass,
        &format!("mean-shift lambda/T0 {per_sample:.4}, variance lambda {lambda:.4}"),
        t_mean.max(t_var),
        Some(limit),
    );
}

#[test]
fn criterion_04_sprt_reduction() {
    let start = Instant::now();
    let p = TestingProblem::mean_shift(1.0, iv(0.0, 0.0), iv(0.5, 0.5)).unwrap();
    let (upper, lower) = (3.0, 2.5);
    let sensors = 3;
    let mut mismatches = 0;
    for rep in 0..SPRT_TRAJECTORIES {
        let truth = if rep % 2 == 0 {
            p.truth(Hypothesis::H0, 0.0).unwrap()
        } else {
            p.truth(Hypothesis::H1, 0.5).unwrap()
        };
        let key = StreamKey::new(404, 0, Purpose::Trajectory, rep);
        let mut engine = CentralizedEngine::new(p, sensors, upper, lower).unwrap();
        let v = engine
            .run_to_decision(&truth, &mut key.sensor_streams(sensors), 1_000_000)
            .unwrap();

        // Plain Wald SPRT between N(0, 1) and N(0.5, 1) on the same samples.
        let mut streams = key.sensor_streams(sensors);
        let (mut llr, mut t) = (0.0, 0u64);
        let decision = loop {
            t += 1;
            for rng in streams.iter_mut() {
                let y = p.sample(&truth, rng);
                llr += -0.5 * (y - 0.5) * (y - 0.5) + 0.5 * y * y;
            }
            if llr >= upper {
                break Hypothesis::H1;
            }
            if llr <= -lower {
                break Hypothesis::H0;
            }
        };
        if (v.decision, v.stopping_time) != (decision, t) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(5);
    report(
        4,
        mismatches == 0 && elapsed < limit,
        &format!("{mismatches} mismatches in {SPRT_TRAJECTORIES} trajectories"),
        elapsed,
        Some(limit),
    );
}

/// Maximum of a smooth function on `[lo, hi]`: a dense grid, then a second
/// dense grid around the best node.
fn grid_max(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    const N: usize = 4_000;
    if lo == hi {
        return f(lo);
    }
    let h = (hi - lo) / N as f64;
    let (best_i, mut best) = (0..=N)
        .map(|i| (i, f(lo + h * i as f64)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let a = (lo + h * (best_i as f64 - 1.0)).max(lo);
    let b = (lo + h * (best_i as f64 + 1.0)).min(hi);
    let h2 = (b - a) / N as f64;
    for i in 0..=N {
        best = best.max(f(a + h2 * i as f64));
    }
    best
}

#[test]
fn criterion_05_brute_force_gllr() {
    let start = Instant::now();
    let mut rng = StreamKey::new(505, 0, Purpose::Trace, 0).sensor_rng(0);
    let mut worst: f64 = 0.0;
    for i in 0..GLLR_INSTANCES {
        let variance = i % 2 == 1;
        let (problem, null, alt) = if variance {
            let g0 = rng.random_range(0.1..1.0);
            let g1 = g0 + rng.random_range(0.0..1.0);
            let t0 = g1 + rng.random_range(0.05..1.0);
            let t1 = t0 + rng.random_range(0.0..3.0);
            let p = TestingProblem::variance(iv(g0, g1), iv(t0, t1)).unwrap();
            (p, (g0, g1), (t0, t1))
        } else {
            let sigma2 = rng.random_range(0.5..2.0);
            let g0 = rng.random_range(-1.0..0.5);
            let g1 = g0 + rng.random_range(0.0..0.5);
            let t0 = g1 + rng.random_range(0.05..1.0);
            let t1 = t0 + rng.random_range(0.0..2.0);
            let p = TestingProblem::mean_shift(sigma2, iv(g0, g1), iv(t0, t1)).unwrap();
            (p, (g0, g1), (t0, t1))
        };

        // Raw-sample GLLR against a log-likelihood written out from the samples.
        let truth_value = if rng.random_bool(0.5) { null.0 } else { alt.1 };
        let h = if truth_value == null.0 { Hypothesis::H0 } else { Hypothesis::H1 };
        let truth = problem.truth(h, truth_value).unwrap();
        let n = rng.random_range(1..=8);
        let ys: Vec<f64> = (0..n).map(|_| problem.sample(&truth, &mut rng)).collect();
        let stat = ys.iter().fold(SuffStat::default(), |s, &y| problem.accumulate(s, y));
        let loglik = |x: f64| -> f64 {
            ys.iter()
                .map(|&y| match variance {
                    true => -0.5 * (2.0 * std::f64::consts::PI * x).ln() - y * y / (2.0 * x),
                    false => {
                        let s2 = match problem.family() {
                            gsprt::model::Family::MeanShift { sigma2 } => sigma2,
                            gsprt::model::Family::Variance => unreachable!(),
                        };
                        -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - (y - x) * (y - x) / (2.0 * s2)
                    }
                })
                .sum()
        };
        let oracle = grid_max(alt.0, alt.1, loglik) - grid_max(null.0, null.1, loglik);
        worst = worst.max((problem.gllr(&stat).unwrap() - oracle).abs());

        // Bernoulli GLLR on counts.
        let t0 = rng.random_range(1..=5u32);
        let lambda = if variance {
            f64::from(t0) * rng.random_range(null.1..alt.0)
        } else {
            f64::from(t0) * rng.random_range(null.1..alt.0) + rng.random_range(-0.5..0.5)
        };
        let r0 = rng.random_range(0..=20u64);
        let r1 = rng.random_range(u64::from(r0 == 0)..=20u64);
        let bern = |x: f64| -> f64 {
            let p = problem.bit_probability(x, t0, lambda).unwrap();
            let term = |count: u64, q: f64| if count == 0 { 0.0 } else { count as f64 * q.ln() };
            term(r1, p.value()) + term(r0, p.complement_value())
        };
        let oracle = grid_max(alt.0, alt.1, bern) - grid_max(null.0, null.1, bern);
        let got = bernoulli_gllr(&problem, t0, lambda, r0, r1).unwrap();
        worst = worst.max((got - oracle).abs());
    }
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(30);
    report(
        5,
        worst <= GLLR_TOL && elapsed < limit,
        &format!("max deviation {worst:.2e} over {GLLR_INSTANCES} instances, raw and Bernoulli"),
        elapsed,
        Some(limit),
    );
}

struct SweepOutcome {
    dir: tempfile::TempDir,
    csv: PathBuf,
    elapsed: Duration,
}

const SLOPE_CONFIG: &str = r#"
seed = 6
sensors = 2
replications = 20000
error_replications = 20000

[model]
family = "mean-shift"
sigma2 = 1.0
null = [0.0, 0.0]
alt = [0.4, 2.0]

[truth]
hypothesis = "H1"
value = 0.4

[targets]
alpha = 1e-3
beta = 1e-3

[thresholds]
source = "calibrated"
budget = 20000

[sweep]
axis = "alpha"
grid = [1e-1, 1e-2, 1e-3]

[[schemes]]
kind = "centralized"

[[schemes]]
kind = "uniform"
t0 = 1
lambda = 0.32

[[schemes]]
kind = "lts"
target_period = 10.0
"#;

/// The matched-error sweep shared by criteria 6 and 7.
fn slope_sweep() -> &'static SweepOutcome {
    static SWEEP: OnceLock<SweepOutcome> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("slope.toml");
        std::fs::write(&config, SLOPE_CONFIG).unwrap();
        let csv = dir.path().join("slope.csv");
        let start = Instant::now();
        gsprt(&["run", config.to_str().unwrap(), "-q", "-o", csv.to_str().unwrap()]);
        SweepOutcome {
            elapsed: start.elapsed(),
            dir,
            csv,
        }
    })
}

struct Row {
    point: usize,
    scheme: String,
    sensors: f64,
    local_a: Option<f64>,
    mean_t: f64,
    mean_messages: f64,
    mean_tau: Option<f64>,
    pred_t: f64,
}

fn read_rows(path: &Path) -> Vec<Row> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let f = |r: &csv::StringRecord, name: &str| r[col(name)].parse::<f64>().ok();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            Row {
                point: r[col("point_id")].parse().unwrap(),
                scheme: r[col("scheme")].to_string(),
                sensors: f(&r, "L").unwrap(),
                local_a: f(&r, "a"),
                mean_t: f(&r, "mean_T").unwrap(),
                mean_messages: f(&r, "mean_messages").unwrap(),
                mean_tau: f(&r, "mean_tau"),
                pred_t: f(&r, "pred_T").unwrap(),
            }
        })
        .collect()
}

#[test]
fn criterion_06_asymptotic_slope() {
    let sweep = slope_sweep();
    let rows = read_rows(&sweep.csv);
    let get = |scheme: &str, point: usize| {
        rows.iter()
            .find(|r| r.scheme == scheme && r.point == point)
            .unwrap_or_else(|| panic!("no {scheme} row for point {point}"))
    };
    let last = 2;
    let c = get("centralized", last);
    let l = get("lts", last);
    let u = get("uniform", last);
    let c_err = (c.mean_t / c.pred_t - 1.0).abs();
    let l_err = (l.mean_t / l.pred_t - 1.0).abs();
    let lts_ratios: Vec<f64> = (0..=last)
        .map(|p| get("lts", p).mean_t / get("centralized", p).mean_t)
        .collect();
    let uniform_ratio = u.mean_t / c.mean_t;
    let limit = Duration::from_secs(600);
    let pass = c_err <= PREDICTION_TOL
        && l_err <= PREDICTION_TOL
        && lts_ratios.iter().all(|&r| r <= LTS_RATIO_MAX)
        && uniform_ratio >= UNIFORM_RATIO_MIN
        && sweep.elapsed < limit;
    report(
        6,
        pass,
        &format!(
            "centralized {:.2} vs {:.2}, lts {:.2} vs {:.2}, lts/centralized {:?}, uniform/centralized {:.3}",
            c.mean_t,
            c.pred_t,
            l.mean_t,
            l.pred_t,
            lts_ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>(),
            uniform_ratio
        ),
        sweep.elapsed,
        Some(limit),
    );
}

#[test]
fn criterion_07_renewal_identity() {
    let sweep = slope_sweep();
    let rows = read_rows(&sweep.csv);
    assert!(sweep.dir.path().exists());

    // The long-run period behind the calibrated local thresholds, recomputed
    // with the seed and reference the run used.
    let p = mean_shift();
    let reference = p.truth(Hypothesis::H1, 0.4).unwrap();
    let options = LocalCalibrationOptions {
        seed: 6,
        ..Default::default()
    };
    let cal = calibrate_local_thresholds(&p, &reference, 10.0, &options).unwrap();

    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for r in rows.iter().filter(|r| r.scheme == "lts") {
        assert_eq!(r.local_a, Some(cal.a), "the run used different local thresholds");
        let per_sensor = r.mean_messages / r.sensors;
        let renewal = r.mean_t / cal.mean_period;
        let dev = (per_sensor / renewal - 1.0).abs();
        worst = worst.max(dev);
        details.push(format!(
            "point {}: {per_sensor:.3} vs {renewal:.3} (in-run tau {:.2})",
            r.point,
            r.mean_tau.unwrap_or(f64::NAN)
        ));
    }
    report(
        7,
        worst <= RENEWAL_TOL && !details.is_empty(),
        &format!("E[tau] {:.3}; {}", cal.mean_period, details.join(", ")),
        Duration::ZERO,
        None,
    );
}

#[test]
fn criterion_08_error_exponent() {
    let start = Instant::now();
    let p = mean_shift();
    let scheme = SchemeConfig::Lts { a: 4.0, b: 4.0 };
    let probes = ErrorProbes::boundary(&p);
    let thresholds = [6.0, 8.0, 10.0];
    let mut logs = Vec::new();
    for (i, &a) in thresholds.iter().enumerate() {
        let (alpha, _) = estimate_error_rates(
            &p,
            &scheme,
            2,
            a,
            a,
            &probes,
            StreamKey::new(808, i as u64, Purpose::AlphaProbe, 0),
            StreamKey::new(808, i as u64, Purpose::BetaProbe, 0),
            EXPONENT_REPLICATIONS,
            10_000_000,
        )
        .unwrap();
        logs.push((alpha.errors, alpha.ci_hi.ln()));
    }
    let mean_x = thresholds.iter().sum::<f64>() / 3.0;
    let mean_y = logs.iter().map(|l| l.1).sum::<f64>() / 3.0;
    let slope = thresholds
        .iter()
        .zip(&logs)
        .map(|(x, l)| (x - mean_x) * (l.1 - mean_y))
        .sum::<f64>()
        / thresholds.iter().map(|x| (x - mean_x).powi(2)).sum::<f64>();
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(600);
    report(
        8,
        slope <= -EXPONENT_SLOPE_MIN && elapsed < limit,
        &format!(
            "slope {slope:.3}; errors/log upper bound {:?}",
            logs.iter().map(|(e, y)| format!("{e}/{y:.3}")).collect::<Vec<_>>()
        ),
        elapsed,
        Some(limit),
    );
}

const DETERMINISM_CONFIG: &str = r#"
seed = 9
sensors = 3
replications = 400
error_replications = 400

[model]
family = "variance"
null = [0.2, 1.0]
alt = [2.0, 5.0]

[truth]
hypothesis = "H0"
value = 0.5

[targets]
alpha = 0.05
beta = 0.05

[thresholds]
source = "calibrated"
budget = 2000

[sweep]
axis = "beta"
grid = [0.1, 0.05]

[[schemes]]
kind = "centralized"

[[schemes]]
kind = "uniform"
t0 = 2

[[schemes]]
kind = "lts"
target_period = 4.0

[[schemes]]
kind = "simple-sprt"
"#;

#[test]
fn criterion_09_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("det.toml");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let cfg = config.to_str().unwrap();
    let mut files = Vec::new();
    for (i, threads) in ["1", "1", "4", "4"].iter().enumerate() {
        for format in ["csv", "json"] {
            let out = dir.path().join(format!("out{i}.{format}"));
            gsprt(&["--threads", threads, "run", cfg, "-q", "--format", format, "-o", out.to_str().unwrap()]);
            files.push((format, std::fs::read(&out).unwrap()));
        }
    }
    let csv: Vec<&Vec<u8>> = files.iter().filter(|f| f.0 == "csv").map(|f| &f.1).collect();
    let json: Vec<&Vec<u8>> = files.iter().filter(|f| f.0 == "json").map(|f| &f.1).collect();
    let identical = csv.windows(2).all(|w| w[0] == w[1]) && json.windows(2).all(|w| w[0] == w[1]);
    let rows = String::from_utf8_lossy(csv[0]).lines().count() - 1;
    report(
        9,
        identical && rows == 8,
        &format!("{} runs at 1 and 4 threads, {rows} rows, identical: {identical}", files.len()),
        start.elapsed(),
        Some(Duration::from_secs(60)),
    );
}

#[test]
fn criterion_10_numerics() {
    let start = Instant::now();
    let mut rng = StreamKey::new(1010, 0, Purpose::Trace, 0).sensor_rng(0);
    let mut normal: f64 = 0.0;
    for i in 0..=12_000 {
        let x = -6.0 + 12.0 * f64::from(i) / 12_000.0;
        normal = normal.max((std_normal_quantile(std_normal_cdf(x).unwrap()).unwrap() - x).abs());
    }
    for _ in 0..10_000 {
        let x = rng.random_range(-6.0..6.0);
        normal = normal.max((std_normal_quantile(std_normal_cdf(x).unwrap()).unwrap() - x).abs());
    }
    let mut chi2: f64 = 0.0;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=30u32);
        let x = rng.random_range(0.05..60.0);
        let back = chi_squared_quantile(k, chi_squared_cdf(k, x).unwrap()).unwrap();
        chi2 = chi2.max((back - x).abs() / x.max(1.0));
    }
    let mut closed: f64 = 0.0;
    for i in 0..=5_000 {
        let x = 50.0 * f64::from(i) / 5_000.0;
        closed = closed.max((chi_squared_cdf(2, x).unwrap().value() - (1.0 - (-x / 2.0).exp())).abs());
    }
    let p = Probability::new(0.975).unwrap();
    let z = std_normal_quantile(p).unwrap();
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(5);
    report(
        10,
        normal <= NORMAL_ROUNDTRIP_TOL
            && chi2 <= CHI2_ROUNDTRIP_TOL
            && closed <= CHI2_CLOSED_FORM_TOL
            && (z - 1.959_963_984_540_054).abs() < 1e-12
            && elapsed < limit,
        &format!("normal roundtrip {normal:.1e}, chi-squared roundtrip {chi2:.1e}, k=2 closed form {closed:.1e}"),
        elapsed,
        Some(limit),
    );
}
