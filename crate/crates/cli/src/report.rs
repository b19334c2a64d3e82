//! Number formatting and the CSV/JSON result files.

use std::io::Write;

use gsprt::experiment::{ComparisonRow, McSummary};
use gsprt::model::{Hypothesis, TruthPoint};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const CSV_HEADER: [&str; 24] = [
    "point_id",
    "scheme",
    "L",
    "target_alpha",
    "target_beta",
    "A",
    "B",
    "a",
    "b",
    "T0",
    "lambda",
    "truth",
    "mean_T",
    "stderr_T",
    "emp_alpha",
    "alpha_ci_lo",
    "alpha_ci_hi",
    "emp_beta",
    "beta_ci_lo",
    "beta_ci_hi",
    "mean_messages",
    "mean_tau",
    "censored",
    "pred_T",
];

/// Formats with 12 significant digits, trailing zeros trimmed. Plain decimal
/// notation for exponents in `-5..15`, scientific otherwise.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.11e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let sign = if x < 0.0 { "-" } else { "" };
    if !(-5..15).contains(&exp) {
        let m = trim(&format!("{}.{}", &digits[..1], &digits[1..]));
        return format!("{sign}{m}e{exp}");
    }
    let body = if exp < 0 {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    } else {
        let split = exp as usize + 1;
        if split >= digits.len() {
            format!("{}{}", digits, "0".repeat(split - digits.len()))
        } else {
            format!("{}.{}", &digits[..split], &digits[split..])
        }
    };
    format!("{sign}{}", trim(&body))
}

fn trim(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn truth_label(t: &TruthPoint) -> String {
    let h = match t.hypothesis {
        Hypothesis::H0 => "H0",
        Hypothesis::H1 => "H1",
    };
    format!("{h}:{}", num(t.value))
}

pub fn csv_row(s: &McSummary) -> Vec<String> {
    vec![
        s.point_id.to_string(),
        s.scheme.name().to_string(),
        s.sensors.to_string(),
        num(s.target_alpha),
        num(s.target_beta),
        num(s.upper),
        num(s.lower),
        opt(s.local_a),
        opt(s.local_b),
        s.t0.map(|t| t.to_string()).unwrap_or_default(),
        opt(s.lambda),
        truth_label(&s.truth),
        num(s.mean_stopping_time),
        num(s.stderr),
        opt(s.alpha.map(|r| r.estimate)),
        opt(s.alpha.map(|r| r.ci_lo)),
        opt(s.alpha.map(|r| r.ci_hi)),
        opt(s.beta.map(|r| r.estimate)),
        opt(s.beta.map(|r| r.ci_lo)),
        opt(s.beta.map(|r| r.ci_hi)),
        num(s.mean_messages),
        opt(s.mean_inter_comm_period),
        s.censored_count.to_string(),
        num(s.predicted_size),
    ]
}

pub fn write_csv<W: Write>(out: W, rows: &[McSummary]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record(csv_row(r)).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

/// The JSON result document: the validated config and every summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub results: Vec<McSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparison: Vec<ComparisonRow>,
}

pub fn write_json<W: Write>(mut out: W, report: &RunReport) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut out, report).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out).map_err(|e| CliError::Runtime(e.to_string()))
}

/// A fixed-width text table for terminal output.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
