use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use gsprt::calibrate::{predict as predict_sizes, PredictionRequest};
use gsprt::centralized::CentralizedEngine;
use gsprt::experiment::{
    check_censoring, compare_schemes, point_thresholds, run_sweep, ExperimentSpec, McSummary, Phase,
};
use gsprt::lts::{simulate_lts_observed, LtsConfig};
use gsprt::model::{Hypothesis, TestingProblem};
use gsprt::rng::{Purpose, StreamKey};
use gsprt::scheme::{closest_points, Scheme, SchemeConfig};
use gsprt::uniform::{minimax_lambda, minimax_lambda_with, simulate_uniform_observed, MinimaxOptions, UniformConfig};

use crate::config::{OutputFormat, RunConfig};
use crate::report::{self, num, table, RunReport};
use crate::{CliError, ConfigArgs, KlArgs, PredictArgs, QuantizerArgs, RunArgs, SchemeArg, TraceArgs};

fn model_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn print_pairs(rows: &[(String, f64)]) {
    let rows: Vec<Vec<String>> = rows.iter().map(|(k, v)| vec![k.clone(), num(*v)]).collect();
    print!("{}", table(&["quantity", "value"], &rows));
}

pub fn kl(args: &KlArgs) -> Result<(), CliError> {
    let problem = args.model.config().build()?;
    let theta = args.theta.unwrap_or(problem.alt_set().lo());
    let gamma = args.gamma.unwrap_or(problem.null_set().hi());
    let mut rows = vec![
        ("kl_theta_gamma".to_string(), problem.kl_divergence(theta, gamma).map_err(model_err)?),
        ("kl_gamma_theta".to_string(), problem.kl_divergence(gamma, theta).map_err(model_err)?),
    ];
    // The infima only make sense for points inside their own hypothesis.
    let alt_truth = problem.truth(Hypothesis::H1, theta).ok();
    let null_truth = problem.truth(Hypothesis::H0, gamma).ok();
    if let Some(t) = &alt_truth {
        rows.push(("inf_kl_alt".into(), problem.inf_kl(t).map_err(model_err)?));
    }
    if let Some(t) = &null_truth {
        rows.push(("inf_kl_null".into(), problem.inf_kl(t).map_err(model_err)?));
    }
    if let Some(lambda) = args.lambda {
        let t0 = args.t0;
        let per = f64::from(t0);
        let p_theta = problem.bit_probability(theta, t0, lambda).map_err(model_err)?;
        let p_gamma = problem.bit_probability(gamma, t0, lambda).map_err(model_err)?;
        rows.push(("bit_probability_theta".into(), p_theta.value()));
        rows.push(("bit_probability_gamma".into(), p_gamma.value()));
        let mut quantized = vec![
            ("quantized_kl_theta_gamma", problem.quantized_kl(theta, gamma, t0, lambda).map_err(model_err)?),
            ("quantized_kl_gamma_theta", problem.quantized_kl(gamma, theta, t0, lambda).map_err(model_err)?),
        ];
        if let Some(t) = &alt_truth {
            quantized.push(("inf_quantized_kl_alt", problem.inf_quantized_kl(t, t0, lambda).map_err(model_err)?));
        }
        if let Some(t) = &null_truth {
            quantized.push(("inf_quantized_kl_null", problem.inf_quantized_kl(t, t0, lambda).map_err(model_err)?));
        }
        for (k, v) in &quantized {
            rows.push((k.to_string(), *v));
        }
        if t0 > 1 {
            for (k, v) in &quantized {
                rows.push((format!("{k}_per_sample"), v / per));
            }
        }
    }
    print_pairs(&rows);
    Ok(())
}

pub fn quantizer(args: &QuantizerArgs) -> Result<(), CliError> {
    let problem = args.model.config().build()?;
    let q = minimax_lambda_with(
        &problem,
        args.t0,
        args.resolution,
        &MinimaxOptions {
            inner_grid: args.inner_grid,
        },
    )
    .map_err(model_err)?;
    let per = f64::from(args.t0);
    print_pairs(&[
        ("t0".into(), per),
        ("lambda".into(), q.lambda),
        ("lambda_per_sample".into(), q.lambda / per),
        ("worst_case_kl".into(), q.worst_case_kl),
        ("worst_case_kl_per_sample".into(), q.worst_case_kl / per),
    ]);
    Ok(())
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let problem = args.model.config().build()?;
    let scheme = match args.scheme {
        SchemeArg::Centralized => Scheme::Centralized,
        SchemeArg::Uniform => Scheme::Uniform,
        SchemeArg::Lts => Scheme::Lts,
        SchemeArg::SimpleSprt => Scheme::SimpleSprt,
    };
    let (t0, lambda) = if scheme == Scheme::Uniform {
        let lambda = match args.lambda {
            Some(l) => l,
            None => minimax_lambda(&problem, args.t0, 0.01).map_err(model_err)?.lambda,
        };
        (Some(args.t0), Some(lambda))
    } else {
        (None, None)
    };
    let upper = args.upper.unwrap_or(-args.alpha.ln());
    let lower = args.lower.unwrap_or(-args.beta.ln());
    let request = PredictionRequest {
        scheme,
        sensors: args.sensors,
        upper,
        lower,
        null_value: args.gamma.unwrap_or(problem.null_set().hi()),
        alt_value: args.theta.unwrap_or(problem.alt_set().lo()),
        t0,
        lambda,
    };
    let p = predict_sizes(&problem, &request).map_err(model_err)?;
    let mut rows = vec![("upper".to_string(), upper), ("lower".to_string(), lower)];
    if let Some(l) = lambda {
        rows.push(("lambda".into(), l));
    }
    rows.extend([
        ("expected_size_h0".into(), p.expected_size_h0),
        ("expected_size_h1".into(), p.expected_size_h1),
        ("log_alpha".into(), p.log_alpha),
        ("log_beta".into(), p.log_beta),
    ]);
    print_pairs(&rows);
    Ok(())
}

fn scheme_params(scheme: &SchemeConfig) -> (String, String, String, String) {
    match *scheme {
        SchemeConfig::Uniform { t0, lambda } => (String::new(), String::new(), t0.to_string(), num(lambda)),
        SchemeConfig::Lts { a, b } => (num(a), num(b), String::new(), String::new()),
        _ => Default::default(),
    }
}

fn warn_regime(scheme: &SchemeConfig, upper: f64, lower: f64) {
    if let SchemeConfig::Lts { a, b } = *scheme {
        if upper / a < 5.0 || lower / b < 5.0 {
            eprintln!(
                "warning: A/a = {} and B/b = {}; the first-order predictions assume both are large (>= 5)",
                num(upper / a),
                num(lower / b)
            );
        }
    }
}

pub fn calibrate(args: &ConfigArgs) -> Result<(), CliError> {
    let config = RunConfig::load(&args.config)?;
    let specs = config.resolve()?;
    let mut rows = Vec::new();
    for spec in &specs {
        for i in 0..spec.sweep.len() {
            let point = spec.point(i);
            let t = point_thresholds(spec, i)?;
            warn_regime(&spec.scheme, t.upper, t.lower);
            let (a, b, t0, lambda) = scheme_params(&spec.scheme);
            let rate = |r: Option<gsprt::calibrate::ErrorRate>| r.map(|r| num(r.estimate)).unwrap_or_default();
            let (alpha, beta) = t
                .calibration
                .as_ref()
                .map(|c| (rate(c.alpha), rate(c.beta)))
                .unwrap_or_default();
            rows.push(vec![
                spec.scheme.scheme().name().to_string(),
                point.id.to_string(),
                num(point.target_alpha),
                num(point.target_beta),
                a,
                b,
                t0,
                lambda,
                num(t.upper),
                num(t.lower),
                alpha,
                beta,
                t.warning.unwrap_or_default(),
            ]);
        }
    }
    print!(
        "{}",
        table(
            &[
                "scheme", "point", "target_alpha", "target_beta", "a", "b", "T0", "lambda", "A", "B", "emp_alpha",
                "emp_beta", "warning",
            ],
            &rows,
        )
    );
    Ok(())
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Calibrating => "thresholds",
        Phase::Trajectories => "trajectories",
        Phase::ErrorProbes => "error probes",
        Phase::Done => "done",
    }
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let config = RunConfig::load(&args.config)?;
    let output = args.output.clone().or_else(|| config.output.clone());
    let format = args.format.or(config.format).unwrap_or(OutputFormat::Csv);
    let specs = config.resolve()?;

    let mut results: Vec<McSummary> = Vec::new();
    let mut per_scheme: Vec<Vec<McSummary>> = Vec::new();
    for spec in &specs {
        let name = spec.scheme.scheme().name();
        let summaries = run_sweep(spec, |p| {
            if !args.quiet {
                eprintln!("[{name}] point {}/{}: {}", p.point + 1, p.points, phase_name(p.phase));
            }
        })?;
        for s in &summaries {
            warn_regime(&spec.scheme, s.upper, s.lower);
            if let Some(w) = &s.calibration_warning {
                eprintln!("warning: [{name}] point {}: {w}", s.point_id);
            }
        }
        results.extend(summaries.iter().cloned());
        per_scheme.push(summaries);
    }

    let comparison = comparison_rows(&specs, &per_scheme)?;
    match format {
        OutputFormat::Csv => report::write_csv(open_output(output.as_deref())?, &results)?,
        OutputFormat::Json => report::write_json(
            open_output(output.as_deref())?,
            &RunReport {
                config: config.clone(),
                results: results.clone(),
                comparison: comparison.clone(),
            },
        )?,
    }
    if !comparison.is_empty() {
        let rows: Vec<Vec<String>> = comparison
            .iter()
            .map(|c| {
                vec![
                    c.point_id.to_string(),
                    num(c.centralized_mean_t),
                    num(c.uniform_mean_t),
                    num(c.lts_mean_t),
                    num(c.uniform_ratio),
                    num(c.lts_ratio),
                    num(c.uniform_message_ratio),
                    num(c.lts_message_ratio),
                ]
            })
            .collect();
        let text = table(
            &[
                "point", "centralized_T", "uniform_T", "lts_T", "uniform/c", "lts/c", "uniform_msg/c", "lts_msg/c",
            ],
            &rows,
        );
        if output.is_some() {
            print!("{text}");
        } else {
            eprint!("{text}");
        }
    }

    for (spec, summaries) in specs.iter().zip(&per_scheme) {
        for s in summaries {
            check_censoring(spec, s)?;
        }
    }
    Ok(())
}

/// Ratio rows against the centralized baseline, using the first entry of each
/// scheme kind, when all three are configured.
fn comparison_rows(
    specs: &[ExperimentSpec],
    per_scheme: &[Vec<McSummary>],
) -> Result<Vec<gsprt::experiment::ComparisonRow>, CliError> {
    let first = |kind: Scheme| {
        specs
            .iter()
            .position(|s| s.scheme.scheme() == kind)
            .map(|i| &per_scheme[i])
    };
    match (first(Scheme::Centralized), first(Scheme::Uniform), first(Scheme::Lts)) {
        (Some(c), Some(u), Some(l)) => Ok(compare_schemes(c, u, l)?),
        _ => Ok(Vec::new()),
    }
}

const TRACE_HEADER: [&str; 8] = [
    "time",
    "sensor",
    "bit",
    "fusion_statistic",
    "local_gllr",
    "samples",
    "plus",
    "minus",
];

fn centralized_trace(
    problem: &TestingProblem,
    spec: &ExperimentSpec,
    point: &gsprt::experiment::PointSpec,
    upper: f64,
    lower: f64,
    key: StreamKey,
    rows: &mut Vec<Vec<String>>,
) -> Result<gsprt::centralized::Verdict, CliError> {
    let mut engine = CentralizedEngine::new(*problem, point.sensors, upper, lower).map_err(model_err)?;
    engine
        .run_observed(&point.truth, &mut key.sensor_streams(point.sensors), spec.cap, |e| {
            rows.push(vec![
                e.time.to_string(),
                String::new(),
                String::new(),
                num(e.gllr),
                String::new(),
                e.samples_pooled.to_string(),
                String::new(),
                String::new(),
            ])
        })
        .map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn trace(args: &TraceArgs) -> Result<(), CliError> {
    let config = RunConfig::load(&args.config)?;
    let entry = config.schemes.get(args.scheme).ok_or_else(|| {
        CliError::Config(format!(
            "scheme index {} out of range ({} configured)",
            args.scheme,
            config.schemes.len()
        ))
    })?;
    let problem = config.model.build()?;
    let scheme = crate::config::resolve_scheme(&problem, entry, config.seed)?;
    let mut specs = config.resolve_with(vec![scheme])?;
    let spec = specs.remove(0);
    if args.point >= spec.sweep.len() {
        return Err(CliError::Config(format!(
            "point index {} out of range ({} grid points)",
            args.point,
            spec.sweep.len()
        )));
    }
    let point = spec.point(args.point);
    let t = point_thresholds(&spec, args.point)?;
    warn_regime(&spec.scheme, t.upper, t.lower);
    let key = StreamKey::new(spec.seed, point.id as u64, Purpose::Trace, args.replication);

    let mut rows: Vec<Vec<String>> = Vec::new();
    let verdict = match spec.scheme {
        SchemeConfig::Centralized => centralized_trace(&problem, &spec, &point, t.upper, t.lower, key, &mut rows)?,
        SchemeConfig::SimpleSprt => {
            let simple = closest_points(&problem).map_err(model_err)?;
            centralized_trace(&simple, &spec, &point, t.upper, t.lower, key, &mut rows)?
        }
        SchemeConfig::Uniform { t0, lambda } => {
            let cfg = UniformConfig {
                sensors: point.sensors,
                t0,
                lambda,
                upper: t.upper,
                lower: t.lower,
            };
            simulate_uniform_observed(
                &problem,
                &cfg,
                &point.truth,
                &mut key.sensor_streams(point.sensors),
                spec.cap,
                |e| {
                    rows.push(vec![
                        e.time.to_string(),
                        String::new(),
                        String::new(),
                        num(e.gllr),
                        String::new(),
                        (e.time * point.sensors as u64).to_string(),
                        e.r1.to_string(),
                        e.r0.to_string(),
                    ])
                },
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?
        }
        SchemeConfig::Lts { a, b } => {
            let cfg = LtsConfig {
                sensors: point.sensors,
                a,
                b,
                upper: t.upper,
                lower: t.lower,
            };
            simulate_lts_observed(
                &problem,
                &cfg,
                &point.truth,
                &mut key.sensor_streams(point.sensors),
                spec.cap,
                |e| {
                    rows.push(vec![
                        e.time.to_string(),
                        e.sensor.to_string(),
                        e.bit.as_i8().to_string(),
                        num(e.fusion_statistic),
                        num(e.local_gllr),
                        (e.time * point.sensors as u64).to_string(),
                        String::new(),
                        String::new(),
                    ])
                },
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .0
        }
    };

    let mut w = csv::Writer::from_writer(open_output(args.output.as_deref())?);
    let io = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(TRACE_HEADER).map_err(io)?;
    for r in &rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    let decision = match verdict.decision {
        Hypothesis::H0 => "H0",
        Hypothesis::H1 => "H1",
    };
    eprintln!(
        "{}: decided {decision} at t = {}{} after {} messages (A = {}, B = {})",
        spec.scheme.scheme(),
        verdict.stopping_time,
        if verdict.censored { " (censored)" } else { "" },
        verdict.messages_sent,
        num(t.upper),
        num(t.lower)
    );
    Ok(())
}
