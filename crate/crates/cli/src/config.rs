//! The TOML run configuration and its resolution into experiment specs.

use std::path::{Path, PathBuf};

use gsprt::calibrate::{calibrate_local_thresholds, ErrorProbes, LocalCalibrationOptions};
use gsprt::experiment::{ExperimentSpec, SweepAxis, ThresholdSource};
use gsprt::model::{Hypothesis, ParameterInterval, TestingProblem};
use gsprt::scheme::SchemeConfig;
use gsprt::uniform::minimax_lambda;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    MeanShift,
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: FamilyName,
    /// Noise variance of the mean-shift family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    pub null: [f64; 2],
    pub alt: [f64; 2],
}

impl ModelConfig {
    pub fn build(&self) -> Result<TestingProblem, CliError> {
        let cfg = |e: gsprt::model::ModelError| CliError::Config(e.to_string());
        let null = ParameterInterval::new(self.null[0], self.null[1]).map_err(cfg)?;
        let alt = ParameterInterval::new(self.alt[0], self.alt[1]).map_err(cfg)?;
        match self.family {
            FamilyName::MeanShift => {
                TestingProblem::mean_shift(self.sigma2.unwrap_or(1.0), null, alt).map_err(cfg)
            }
            FamilyName::Variance => {
                if self.sigma2.is_some() {
                    return Err(CliError::Config("sigma2 only applies to the mean-shift family".into()));
                }
                TestingProblem::variance(null, alt).map_err(cfg)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub hypothesis: Hypothesis,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub null: f64,
    pub alt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdKind {
    Explicit,
    Asymptotic,
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub source: ThresholdKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secant_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisName {
    Alpha,
    Beta,
    Truth,
    Sensors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: AxisName,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Centralized,
    Uniform,
    Lts,
    SimpleSprt,
}

/// One scheme to run. Which optional keys are allowed depends on `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeEntry {
    pub kind: SchemeKind,
    /// Uniform: block length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<u32>,
    /// Uniform: quantizer threshold; the minimax design is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Uniform: grid spacing of the minimax search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    /// LTS: explicit local thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    /// LTS: calibrate `a = b` to this mean inter-communication period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_period: Option<f64>,
    /// LTS: truth value under which the period is calibrated (default: the
    /// lower end of the alternative set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

fn default_replications() -> u64 {
    10_000
}

fn default_cap() -> u64 {
    10_000_000
}

fn default_censored() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sensors: usize,
    #[serde(default = "default_replications")]
    pub replications: u64,
    /// Replications per error probe; defaults to `replications`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_replications: Option<u64>,
    /// Time steps per replication before a run is censored.
    #[serde(default = "default_cap")]
    pub cap: u64,
    #[serde(default = "default_censored")]
    pub max_censored_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
    pub model: ModelConfig,
    pub truth: TruthConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<ProbeConfig>,
    pub targets: TargetConfig,
    pub thresholds: ThresholdConfig,
    pub sweep: SweepConfig,
    pub schemes: Vec<SchemeEntry>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Checks everything that does not need computation.
    pub fn check(&self) -> Result<(), CliError> {
        let problem = self.model.build()?;
        if self.schemes.is_empty() {
            return Err(CliError::Config("at least one [[schemes]] entry is required".into()));
        }
        for (i, s) in self.schemes.iter().enumerate() {
            check_scheme(i, s)?;
        }
        self.threshold_source()?;
        self.sweep_axis()?;
        self.base_spec(problem, SchemeConfig::Centralized)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    fn threshold_source(&self) -> Result<ThresholdSource, CliError> {
        let t = &self.thresholds;
        let unexpected = |what: &str| {
            Err(CliError::Config(format!(
                "thresholds.{what} does not apply to source {:?}",
                t.source
            )))
        };
        match t.source {
            ThresholdKind::Explicit => {
                if t.budget.is_some() {
                    return unexpected("budget");
                }
                if t.secant_steps.is_some() {
                    return unexpected("secant_steps");
                }
                match (t.upper, t.lower) {
                    (Some(upper), Some(lower)) => Ok(ThresholdSource::Explicit { upper, lower }),
                    _ => Err(CliError::Config("explicit thresholds need upper and lower".into())),
                }
            }
            ThresholdKind::Asymptotic => {
                if t.upper.is_some() || t.lower.is_some() {
                    return unexpected("upper/lower");
                }
                if t.budget.is_some() || t.secant_steps.is_some() {
                    return unexpected("budget/secant_steps");
                }
                Ok(ThresholdSource::Asymptotic)
            }
            ThresholdKind::Calibrated => {
                if t.upper.is_some() || t.lower.is_some() {
                    return unexpected("upper/lower");
                }
                Ok(ThresholdSource::Calibrated {
                    budget: t.budget.unwrap_or(self.replications),
                    secant_steps: t.secant_steps.unwrap_or(4),
                })
            }
        }
    }

    fn sweep_axis(&self) -> Result<SweepAxis, CliError> {
        let g = self.sweep.grid.clone();
        Ok(match self.sweep.axis {
            AxisName::Alpha => SweepAxis::Alpha(g),
            AxisName::Beta => SweepAxis::Beta(g),
            AxisName::Truth => SweepAxis::Truth(g),
            AxisName::Sensors => SweepAxis::Sensors(
                g.iter()
                    .map(|&v| {
                        if v >= 1.0 && v.fract() == 0.0 && v < 1e6 {
                            Ok(v as usize)
                        } else {
                            Err(CliError::Config(format!("sensor count {v} is not a positive integer")))
                        }
                    })
                    .collect::<Result<_, _>>()?,
            ),
        })
    }

    fn base_spec(&self, problem: TestingProblem, scheme: SchemeConfig) -> ExperimentSpec {
        ExperimentSpec {
            problem,
            scheme,
            sensors: self.sensors,
            target_alpha: self.targets.alpha,
            target_beta: self.targets.beta,
            thresholds: self.threshold_source().unwrap_or(ThresholdSource::Asymptotic),
            truth: gsprt::model::TruthPoint {
                hypothesis: self.truth.hypothesis,
                value: self.truth.value,
            },
            probes: match self.probes {
                Some(p) => ErrorProbes {
                    null_value: p.null,
                    alt_value: p.alt,
                },
                None => ErrorProbes::boundary(&problem),
            },
            sweep: self.sweep_axis().unwrap_or(SweepAxis::Alpha(Vec::new())),
            replications: self.replications,
            error_replications: self.error_replications.unwrap_or(self.replications),
            seed: self.seed,
            cap: self.cap,
            max_censored_fraction: self.max_censored_fraction,
        }
    }

    /// Resolves every scheme entry, designing quantizers and calibrating
    /// local thresholds where the config asks for it.
    pub fn resolve(&self) -> Result<Vec<ExperimentSpec>, CliError> {
        let problem = self.model.build()?;
        let schemes = self
            .schemes
            .iter()
            .map(|entry| resolve_scheme(&problem, entry, self.seed))
            .collect::<Result<_, _>>()?;
        self.resolve_with(schemes)
    }

    /// One spec per already-resolved scheme.
    pub fn resolve_with(&self, schemes: Vec<SchemeConfig>) -> Result<Vec<ExperimentSpec>, CliError> {
        let problem = self.model.build()?;
        Ok(schemes.into_iter().map(|s| self.base_spec(problem, s)).collect())
    }
}

fn check_scheme(index: usize, s: &SchemeEntry) -> Result<(), CliError> {
    let reject = |key: &str| {
        Err(CliError::Config(format!(
            "schemes[{index}]: key `{key}` does not apply to kind {:?}",
            s.kind
        )))
    };
    let uniform_keys = [("t0", s.t0.is_some()), ("lambda", s.lambda.is_some()), ("resolution", s.resolution.is_some())];
    let lts_keys = [
        ("a", s.a.is_some()),
        ("b", s.b.is_some()),
        ("target_period", s.target_period.is_some()),
        ("reference", s.reference.is_some()),
        ("period_tolerance", s.period_tolerance.is_some()),
    ];
    match s.kind {
        SchemeKind::Centralized | SchemeKind::SimpleSprt => {
            for (k, set) in uniform_keys.iter().chain(&lts_keys) {
                if *set {
                    return reject(k);
                }
            }
        }
        SchemeKind::Uniform => {
            for (k, set) in &lts_keys {
                if *set {
                    return reject(k);
                }
            }
            if s.t0.is_none() {
                return Err(CliError::Config(format!("schemes[{index}]: uniform needs t0")));
            }
            if s.lambda.is_some() && s.resolution.is_some() {
                return reject("resolution");
            }
        }
        SchemeKind::Lts => {
            for (k, set) in &uniform_keys {
                if *set {
                    return reject(k);
                }
            }
            let explicit = s.a.is_some() || s.b.is_some();
            if explicit && s.target_period.is_some() {
                return Err(CliError::Config(format!(
                    "schemes[{index}]: give either a/b or target_period, not both"
                )));
            }
            if explicit && (s.a.is_none() || s.b.is_none()) {
                return Err(CliError::Config(format!("schemes[{index}]: lts needs both a and b")));
            }
            if !explicit && s.target_period.is_none() {
                return Err(CliError::Config(format!(
                    "schemes[{index}]: lts needs a and b, or target_period"
                )));
            }
            if s.target_period.is_none() && (s.reference.is_some() || s.period_tolerance.is_some()) {
                return reject("reference");
            }
        }
    }
    Ok(())
}

pub fn resolve_scheme(problem: &TestingProblem, entry: &SchemeEntry, seed: u64) -> Result<SchemeConfig, CliError> {
    Ok(match entry.kind {
        SchemeKind::Centralized => SchemeConfig::Centralized,
        SchemeKind::SimpleSprt => SchemeConfig::SimpleSprt,
        SchemeKind::Uniform => {
            let t0 = entry.t0.ok_or_else(|| CliError::Config("uniform needs t0".into()))?;
            let lambda = match entry.lambda {
                Some(l) => l,
                None => {
                    minimax_lambda(problem, t0, entry.resolution.unwrap_or(0.01))
                        .map_err(|e| CliError::Config(e.to_string()))?
                        .lambda
                }
            };
            SchemeConfig::Uniform { t0, lambda }
        }
        SchemeKind::Lts => match (entry.a, entry.b, entry.target_period) {
            (Some(a), Some(b), None) => SchemeConfig::Lts { a, b },
            (None, None, Some(target)) => {
                let value = entry.reference.unwrap_or(problem.alt_set().lo());
                let reference = problem
                    .truth(Hypothesis::H1, value)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                let options = LocalCalibrationOptions {
                    seed,
                    tolerance: entry.period_tolerance.unwrap_or(0.02),
                    ..Default::default()
                };
                let c = calibrate_local_thresholds(problem, &reference, target, &options)
                    .map_err(|e| CliError::Calibration(e.to_string()))?;
                SchemeConfig::Lts { a: c.a, b: c.b }
            }
            _ => return Err(CliError::Config("lts needs a and b, or target_period".into())),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
sensors = 2
replications = 100

[model]
family = "mean-shift"
null = [0.0, 0.0]
alt = [0.4, 2.0]

[truth]
hypothesis = "H1"
value = 0.4

[targets]
alpha = 0.01
beta = 0.01

[thresholds]
source = "asymptotic"

[sweep]
axis = "alpha"
grid = [0.01]

[[schemes]]
kind = "centralized"
"#;

    #[test]
    fn minimal_config_parses() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.cap, 10_000_000);
        let specs = c.resolve().unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].error_replications, 100);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = MINIMAL.replace("replications = 100", "replicatons = 100");
        assert!(matches!(RunConfig::parse(&typo), Err(CliError::Config(_))));
        let nested = MINIMAL.replace("value = 0.4", "value = 0.4\nvalu = 1");
        assert!(RunConfig::parse(&nested).is_err());
    }

    #[test]
    fn scheme_keys_are_checked() {
        let bad = MINIMAL.replace("kind = \"centralized\"", "kind = \"centralized\"\nt0 = 2");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = MINIMAL.replace("kind = \"centralized\"", "kind = \"uniform\"");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = MINIMAL.replace("kind = \"centralized\"", "kind = \"lts\"\na = 1.0");
        assert!(RunConfig::parse(&bad).is_err());
        let ok = MINIMAL.replace("kind = \"centralized\"", "kind = \"lts\"\na = 1.0\nb = 1.0");
        assert!(RunConfig::parse(&ok).is_ok());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for (from, to) in [
            ("grid = [0.01]", "grid = [1.5]"),
            ("value = 0.4", "value = 0.1"),
            ("alt = [0.4, 2.0]", "alt = [-0.4, 2.0]"),
            ("source = \"asymptotic\"", "source = \"explicit\""),
            ("sensors = 2", "sensors = 0"),
        ] {
            let bad = MINIMAL.replace(from, to);
            assert!(matches!(RunConfig::parse(&bad), Err(CliError::Config(_))), "{to}");
        }
    }

    #[test]
    fn serialized_config_parses_back() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
    }

    #[test]
    fn shipped_configs_validate() {
        for text in [
            include_str!("../../../configs/fig1.toml"),
            include_str!("../../../configs/fig2.toml"),
            include_str!("../../../configs/fig5.toml"),
            include_str!("../../../configs/fig6.toml"),
        ] {
            let c = RunConfig::parse(text).unwrap();
            assert_eq!(c.schemes.len(), 4);
            assert_eq!(c.sweep.grid, [1e-1, 1e-2, 1e-3]);
        }
    }
}
