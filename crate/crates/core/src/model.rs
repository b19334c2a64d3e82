//! Composite testing problems: `H0: y ~ h_γ, γ ∈ Γ` against `H1: y ~ f_θ, θ ∈ Θ`,
//! with i.i.d. observations at every sensor.
//!
//! Two families are supported, both with closed-interval parameter sets:
//!
//! * **Mean shift** `y = x + e`, `e ~ N(0, σ²)`. Sufficient statistic: `Σ y`.
//! * **Variance** `y ~ N(0, x)` (spectrum sensing). Sufficient statistic: `Σ y²`.
//!
//! For both families the log-likelihood is unimodal in the parameter with its
//! unconstrained maximum at the per-sample mean of the statistic, so the
//! constrained MLE is a clamp and every infimum of a KL divergence over an
//! interval is attained at the clamp of the fixed parameter.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, NumericsError, Probability};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("value {value} is not in the {hypothesis:?} parameter set [{lo}, {hi}]")]
    TruthOutOfRange {
        hypothesis: Hypothesis,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("sufficient statistic holds no samples")]
    EmptyStatistic,
    #[error("{what} = {value} is outside the model's domain")]
    Domain { what: &'static str, value: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A closed interval `[lo, hi]`; `lo == hi` is a singleton.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct ParameterInterval {
    lo: f64,
    hi: f64,
}

impl ParameterInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if lo.is_finite() && hi.is_finite() && lo <= hi {
            Ok(ParameterInterval { lo, hi })
        } else {
            Err(ModelError::InvalidInterval { lo, hi })
        }
    }

    pub fn singleton(x: f64) -> Result<Self, ModelError> {
        Self::new(x, x)
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn is_singleton(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Projection of `x` onto the interval.
    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        clamp(x, self)
    }
}

impl TryFrom<[f64; 2]> for ParameterInterval {
    type Error = ModelError;
    fn try_from([lo, hi]: [f64; 2]) -> Result<Self, Self::Error> {
        ParameterInterval::new(lo, hi)
    }
}

impl From<ParameterInterval> for [f64; 2] {
    fn from(i: ParameterInterval) -> Self {
        [i.lo, i.hi]
    }
}

/// `x` projected onto `[lo, hi]`. NaN maps to the lower endpoint.
#[inline]
pub fn clamp(x: f64, interval: &ParameterInterval) -> f64 {
    if x > interval.hi {
        interval.hi
    } else if x >= interval.lo {
        x
    } else {
        interval.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

impl Hypothesis {
    pub fn opposite(self) -> Hypothesis {
        match self {
            Hypothesis::H0 => Hypothesis::H1,
            Hypothesis::H1 => Hypothesis::H0,
        }
    }
}

/// The parameter that actually generates the data in a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub hypothesis: Hypothesis,
    pub value: f64,
}

/// Running sufficient statistic: the accumulated value and the sample count.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SuffStat {
    pub acc: f64,
    pub n: u64,
}

impl SuffStat {
    pub const EMPTY: SuffStat = SuffStat { acc: 0.0, n: 0 };

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Adds one already-transformed statistic value (`y` or `y²`).
    #[inline]
    pub fn push(&mut self, value: f64) {
        self.acc += value;
        self.n += 1;
    }

    pub fn merge(&self, other: &SuffStat) -> SuffStat {
        SuffStat {
            acc: self.acc + other.acc,
            n: self.n + other.n,
        }
    }

    pub fn reset(&mut self) {
        *self = SuffStat::EMPTY;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// `y = x + N(0, sigma2)`.
    MeanShift { sigma2: f64 },
    /// `y ~ N(0, x)`.
    Variance,
}

/// An immutable composite testing problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestingProblem {
    family: Family,
    null_set: ParameterInterval,
    alt_set: ParameterInterval,
}

impl TestingProblem {
    /// Mean-shift problem. The null set must lie strictly below the
    /// alternative set.
    pub fn mean_shift(
        sigma2: f64,
        null_set: ParameterInterval,
        alt_set: ParameterInterval,
    ) -> Result<Self, ModelError> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(ModelError::InvalidModel(format!(
                "noise variance must be positive, got {sigma2}"
            )));
        }
        if null_set.hi >= alt_set.lo {
            return Err(ModelError::InvalidModel(format!(
                "null set [{}, {}] must lie below the alternative set [{}, {}]",
                null_set.lo, null_set.hi, alt_set.lo, alt_set.hi
            )));
        }
        Ok(TestingProblem {
            family: Family::MeanShift { sigma2 },
            null_set,
            alt_set,
        })
    }

    /// Variance problem; requires `0 < γ₀ ≤ γ₁ < θ₀ ≤ θ₁`.
    pub fn variance(
        null_set: ParameterInterval,
        alt_set: ParameterInterval,
    ) -> Result<Self, ModelError> {
        if !(null_set.lo > 0.0 && null_set.hi < alt_set.lo) {
            return Err(ModelError::InvalidModel(format!(
                "variance model needs 0 < γ0 ≤ γ1 < θ0 ≤ θ1, got Γ=[{}, {}], Θ=[{}, {}]",
                null_set.lo, null_set.hi, alt_set.lo, alt_set.hi
            )));
        }
        Ok(TestingProblem {
            family: Family::Variance,
            null_set,
            alt_set,
        })
    }

    /// The same family with different parameter sets.
    pub fn with_sets(
        &self,
        null_set: ParameterInterval,
        alt_set: ParameterInterval,
    ) -> Result<Self, ModelError> {
        match self.family {
            Family::MeanShift { sigma2 } => TestingProblem::mean_shift(sigma2, null_set, alt_set),
            Family::Variance => TestingProblem::variance(null_set, alt_set),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn null_set(&self) -> &ParameterInterval {
        &self.null_set
    }

    pub fn alt_set(&self) -> &ParameterInterval {
        &self.alt_set
    }

    pub fn interval(&self, hypothesis: Hypothesis) -> &ParameterInterval {
        match hypothesis {
            Hypothesis::H0 => &self.null_set,
            Hypothesis::H1 => &self.alt_set,
        }
    }

    /// A validated truth point.
    pub fn truth(&self, hypothesis: Hypothesis, value: f64) -> Result<TruthPoint, ModelError> {
        let set = self.interval(hypothesis);
        if !set.contains(value) {
            return Err(ModelError::TruthOutOfRange {
                hypothesis,
                value,
                lo: set.lo,
                hi: set.hi,
            });
        }
        Ok(TruthPoint { hypothesis, value })
    }

    /// One draw from `h_γ` or `f_θ` at the truth point.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, truth: &TruthPoint, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match self.family {
            Family::MeanShift { sigma2 } => truth.value + sigma2.sqrt() * z,
            Family::Variance => truth.value.sqrt() * z,
        }
    }

    /// Per-sample contribution to the sufficient statistic.
    #[inline]
    pub fn statistic(&self, y: f64) -> f64 {
        match self.family {
            Family::MeanShift { .. } => y,
            Family::Variance => y * y,
        }
    }

    pub fn accumulate(&self, stat: SuffStat, y: f64) -> SuffStat {
        let mut out = stat;
        out.push(self.statistic(y));
        out
    }

    /// Parameter-dependent part of the log-likelihood of a sample batch
    /// summarized by `stat`, at parameter `x`.
    #[inline]
    pub fn log_likelihood(&self, stat: &SuffStat, x: f64) -> f64 {
        let n = stat.n as f64;
        match self.family {
            Family::MeanShift { sigma2 } => (x * stat.acc - 0.5 * n * x * x) / sigma2,
            Family::Variance => -0.5 * stat.acc / x - 0.5 * n * x.ln(),
        }
    }

    /// Clamp of the per-sample mean of the statistic onto `interval`.
    pub fn constrained_mle(
        &self,
        stat: &SuffStat,
        interval: &ParameterInterval,
    ) -> Result<f64, ModelError> {
        if stat.is_empty() {
            return Err(ModelError::EmptyStatistic);
        }
        Ok(interval.clamp(stat.acc / stat.n as f64))
    }

    /// Generalized log-likelihood ratio:
    /// `sup_Θ log f_θ(y₁..yₙ) − sup_Γ log h_γ(y₁..yₙ)`.
    pub fn gllr(&self, stat: &SuffStat) -> Result<f64, ModelError> {
        let theta = self.constrained_mle(stat, &self.alt_set)?;
        let gamma = self.constrained_mle(stat, &self.null_set)?;
        Ok(self.log_likelihood(stat, theta) - self.log_likelihood(stat, gamma))
    }

    fn check_parameter(&self, what: &'static str, x: f64) -> Result<(), ModelError> {
        let ok = match self.family {
            Family::MeanShift { .. } => x.is_finite(),
            Family::Variance => x > 0.0 && x.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::Domain { what, value: x })
        }
    }

    /// KL divergence `D(P_from || P_to)` between two members of the family.
    pub fn kl_divergence(&self, from: f64, to: f64) -> Result<f64, ModelError> {
        self.check_parameter("parameter", from)?;
        self.check_parameter("parameter", to)?;
        Ok(match self.family {
            Family::MeanShift { sigma2 } => (from - to).powi(2) / (2.0 * sigma2),
            Family::Variance => {
                let r = from / to;
                0.5 * (r - 1.0) - 0.5 * r.ln()
            }
        })
    }

    /// `inf` over the opposite hypothesis' interval of `D(P_truth || P_x)`.
    pub fn inf_kl(&self, truth: &TruthPoint) -> Result<f64, ModelError> {
        let other = self.interval(truth.hypothesis.opposite());
        self.kl_divergence(truth.value, other.clamp(truth.value))
    }

    /// Probability that the one-bit quantizer `sign(φ − λ)` on a block of
    /// `t0` samples outputs `+1` under parameter `value`.
    pub fn bit_probability(
        &self,
        value: f64,
        t0: u32,
        lambda: f64,
    ) -> Result<Probability, ModelError> {
        if t0 == 0 {
            return Err(ModelError::Domain {
                what: "block length",
                value: 0.0,
            });
        }
        if lambda.is_nan() {
            return Err(ModelError::Domain {
                what: "quantizer threshold",
                value: lambda,
            });
        }
        self.check_parameter("parameter", value)?;
        let t0f = f64::from(t0);
        match self.family {
            Family::MeanShift { sigma2 } => {
                if lambda == f64::NEG_INFINITY {
                    return Ok(Probability::ONE);
                }
                if lambda == f64::INFINITY {
                    return Ok(Probability::ZERO);
                }
                let z = (value * t0f - lambda) / (sigma2 * t0f).sqrt();
                // P(S > λ) = Φ(z) with S ~ N(x T0, σ² T0).
                Ok(numerics::std_normal_cdf(z)?)
            }
            Family::Variance => {
                if !(lambda >= 0.0) {
                    return Err(ModelError::Domain {
                        what: "quantizer threshold",
                        value: lambda,
                    });
                }
                if lambda == f64::INFINITY {
                    return Ok(Probability::ZERO);
                }
                Ok(numerics::chi_squared_sf(t0, lambda / value)?)
            }
        }
    }

    /// KL divergence between the quantized-bit laws, `D(Bern(p_from) || Bern(p_to))`.
    pub fn quantized_kl(&self, from: f64, to: f64, t0: u32, lambda: f64) -> Result<f64, ModelError> {
        let p = self.bit_probability(from, t0, lambda)?;
        let q = self.bit_probability(to, t0, lambda)?;
        Ok(bernoulli_kl(p, q))
    }

    /// `inf` over the opposite interval of the quantized-bit KL. The bit
    /// probability is increasing in the parameter, so the minimizer is the
    /// clamp of the truth value, exactly as for the raw KL.
    pub fn inf_quantized_kl(
        &self,
        truth: &TruthPoint,
        t0: u32,
        lambda: f64,
    ) -> Result<f64, ModelError> {
        let other = self.interval(truth.hypothesis.opposite());
        self.quantized_kl(truth.value, other.clamp(truth.value), t0, lambda)
    }
}

/// `D(Bern(p) || Bern(q))` using the stored complements, with `0 log 0 = 0`.
pub fn bernoulli_kl(p: Probability, q: Probability) -> f64 {
    fn term(a: f64, b: f64) -> f64 {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    }
    let kl = term(p.value(), q.value()) + term(p.complement_value(), q.complement_value());
    kl.max(0.0)
}
