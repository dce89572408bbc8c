//! The operators `F^t` on Hessian eigenvalues, their derivatives, and the scalar
//! identities tying neighbouring members of the family together.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{snapped_trig, MetricConstants, PlaneError};

/// Log arguments and denominators smaller than this in magnitude are rejected.
pub const ADMISSIBILITY_MARGIN: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquationError {
    #[error(transparent)]
    Angle(#[from] PlaneError),
    #[error("eigenvalue {index} is not finite")]
    NonFinite { index: usize },
    #[error("eigenvalue {index} = {value} is inadmissible: {reason}")]
    Inadmissible {
        index: usize,
        value: f64,
        reason: &'static str,
    },
    #[error("eigenvalue {index} = {value} sits on a pole")]
    Pole { index: usize, value: f64 },
    #[error(
        "metric weight for eigenvalue {index} = {value} degenerates (non-space-like direction)"
    )]
    DegenerateMetric { index: usize, value: f64 },
    #[error("sigma + tau * lambda changes sign at lambda = {lambda}; add {shift} to the principal-branch residual")]
    BranchCrossing {
        lambda: f64,
        shift: f64,
        raw_residual: f64,
    },
    #[error("{0}")]
    Undefined(&'static str),
}

/// Which closed form of `F^t` applies at a given angle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquationForm {
    /// `t = 0`: `sum ln lambda_i`.
    Logarithmic,
    /// `0 < t < pi/4`: `sum ln((lambda_i + a - b) / (lambda_i + a + b))`.
    LogRatio,
    /// `t = pi/4`: `sum 1 / (1 + lambda_i)`.
    Reciprocal,
    /// `pi/4 < t < pi/2`: `sum arctan((lambda_i + a - b) / (lambda_i + a + b))`.
    ArctanRatio,
    /// `t = pi/2`: `sum arctan lambda_i`.
    Arctan,
}

impl EquationForm {
    pub fn for_constants(m: &MetricConstants) -> Self {
        if m.t == 0.0 {
            EquationForm::Logarithmic
        } else if m.t == FRAC_PI_2 {
            EquationForm::Arctan
        } else if m.t == FRAC_PI_4 {
            EquationForm::Reciprocal
        } else if m.t < FRAC_PI_4 {
            EquationForm::LogRatio
        } else {
            EquationForm::ArctanRatio
        }
    }
}

/// Hessian eigenvalues; every operation is symmetric in the entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EigenList(Vec<f64>);

impl EigenList {
    pub fn new(values: Vec<f64>) -> Result<Self, EquationError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EquationError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for EigenList {
    type Error = EquationError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EigenList> for Vec<f64> {
    fn from(l: EigenList) -> Self {
        l.0
    }
}

impl Deref for EigenList {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A member of the family together with its right-hand side `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyPoint {
    pub t: f64,
    pub c: f64,
    pub constants: MetricConstants,
}

impl FamilyPoint {
    pub fn new(t: f64, c: f64) -> Result<Self, EquationError> {
        let constants = MetricConstants::new(t)?;
        Ok(Self {
            t: constants.t,
            c,
            constants,
        })
    }

    pub fn form(&self) -> EquationForm {
        EquationForm::for_constants(&self.constants)
    }

    /// `F^t(lambda) - c`.
    pub fn residual(&self, lambdas: &[f64]) -> Result<f64, EquationError> {
        Ok(f_t(lambdas, self)? - self.c)
    }
}

fn check_finite(lambdas: &[f64]) -> Result<(), EquationError> {
    match lambdas.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(EquationError::NonFinite { index }),
        None => Ok(()),
    }
}

/// One term of `F^t` and its derivative.
fn term(l: f64, index: usize, m: &MetricConstants) -> Result<(f64, f64), EquationError> {
    let (a, b) = (m.a, m.b);
    match EquationForm::for_constants(m) {
        EquationForm::Logarithmic => {
            if l < ADMISSIBILITY_MARGIN {
                return Err(EquationError::Inadmissible {
                    index,
                    value: l,
                    reason: "logarithm needs a positive eigenvalue",
                });
            }
            Ok((l.ln(), 1.0 / l))
        }
        EquationForm::LogRatio => {
            let num = l + a - b;
            let den = l + a + b;
            if num.abs() < ADMISSIBILITY_MARGIN || den.abs() < ADMISSIBILITY_MARGIN {
                return Err(EquationError::Inadmissible {
                    index,
                    value: l,
                    reason: "ratio numerator or denominator vanishes",
                });
            }
            let ratio = num / den;
            if ratio <= 0.0 {
                return Err(EquationError::Inadmissible {
                    index,
                    value: l,
                    reason: "log ratio argument is negative (lies between -a-b and -a+b)",
                });
            }
            Ok((ratio.ln(), 2.0 * b / (num * den)))
        }
        EquationForm::Reciprocal => {
            let s = 1.0 + l;
            if s.abs() < ADMISSIBILITY_MARGIN {
                return Err(EquationError::Pole { index, value: l });
            }
            Ok((1.0 / s, -1.0 / (s * s)))
        }
        EquationForm::ArctanRatio => {
            let num = l + a - b;
            let den = l + a + b;
            if den.abs() < ADMISSIBILITY_MARGIN {
                return Err(EquationError::Pole { index, value: l });
            }
            Ok(((num / den).atan(), 2.0 * b / (num * num + den * den)))
        }
        EquationForm::Arctan => Ok((l.atan(), 1.0 / (1.0 + l * l))),
    }
}

/// Left-hand side of the family equation at `point.t`.
pub fn f_t(lambdas: &[f64], point: &FamilyPoint) -> Result<f64, EquationError> {
    check_finite(lambdas)?;
    let mut sum = 0.0;
    for (i, &l) in lambdas.iter().enumerate() {
        sum += term(l, i, &point.constants)?.0;
    }
    Ok(sum)
}

/// Exact partial derivatives `dF^t / d lambda_i`.
///
/// These equal `gradient_scale(t) * g^{ii}`, see [`inverse_metric_weights`].
pub fn f_t_gradient(lambdas: &[f64], point: &FamilyPoint) -> Result<Vec<f64>, EquationError> {
    check_finite(lambdas)?;
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            metric_weight_denominator(l, i, point.t)?;
            Ok(term(l, i, &point.constants)?.1)
        })
        .collect()
}

fn metric_weight_denominator(l: f64, index: usize, t: f64) -> Result<f64, EquationError> {
    let (cos, sin) = snapped_trig(t);
    let d = sin * (1.0 + l * l) + 2.0 * cos * l;
    if d.abs() < ADMISSIBILITY_MARGIN {
        return Err(EquationError::DegenerateMetric { index, value: l });
    }
    Ok(d)
}

/// `g^{ii} = 1 / (sin t (1 + lambda_i^2) + 2 cos t lambda_i)`.
pub fn inverse_metric_weights(lambdas: &[f64], t: f64) -> Result<Vec<f64>, EquationError> {
    check_finite(lambdas)?;
    MetricConstants::new(t)?;
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| Ok(1.0 / metric_weight_denominator(l, i, t)?))
        .collect()
}

/// The factor `s(t)` with `dF^t / d lambda_i = s(t) g^{ii}` for the closed forms above.
///
/// Negative at `t = pi/4`, where the reciprocal form decreases in each eigenvalue.
pub fn gradient_scale(constants: &MetricConstants) -> f64 {
    let (_, sin) = constants.trig();
    match EquationForm::for_constants(constants) {
        EquationForm::Logarithmic => 2.0,
        EquationForm::LogRatio => 2.0 * constants.b * sin,
        EquationForm::Reciprocal => -sin,
        EquationForm::ArctanRatio => constants.b * sin,
        EquationForm::Arctan => 1.0,
    }
}

/// `lambda_hat = (tau + sigma lambda) / (sigma + tau lambda)`.
pub fn eigenvalue_transform(
    lambda: f64,
    constants: &MetricConstants,
) -> Result<f64, EquationError> {
    if !lambda.is_finite() {
        return Err(EquationError::NonFinite { index: 0 });
    }
    let (s, t) = (constants.sigma, constants.tau);
    let den = s + t * lambda;
    if den.abs() < ADMISSIBILITY_MARGIN {
        return Err(EquationError::Pole {
            index: 0,
            value: lambda,
        });
    }
    Ok((t + s * lambda) / den)
}

/// `arctan((lambda + a)/b) + C_t - arctan(lambda_hat)`, zero on the principal branch.
///
/// Defined for `t` in `(pi/4, pi/2]`. When `sigma + tau lambda < 0` the right side
/// leaves the principal branch; the error carries the raw residual and the shift
/// (`-pi`) that restores it.
pub fn ct_identity_residual(
    lambda: f64,
    constants: &MetricConstants,
) -> Result<f64, EquationError> {
    if constants.t <= FRAC_PI_4 {
        return Err(EquationError::Undefined(
            "the arctan identity needs t in (pi/4, pi/2]",
        ));
    }
    let c_t = constants
        .c_t
        .ok_or(EquationError::Undefined("C_t is undefined at this angle"))?;
    let hat = eigenvalue_transform(lambda, constants)?;
    let raw = ((lambda + constants.a) / constants.b).atan() + c_t - hat.atan();
    if constants.sigma + constants.tau * lambda < 0.0 {
        return Err(EquationError::BranchCrossing {
            lambda,
            shift: -PI,
            raw_residual: raw,
        });
    }
    Ok(raw)
}

/// `(lambda + a) / b`, the eigenvalue action of `u -> u/b + (a / 2b)|x|^2`.
pub fn v_transform(lambda: f64, constants: &MetricConstants) -> Result<f64, EquationError> {
    let b = constants.b;
    if b == 0.0 || !b.is_finite() || !constants.a.is_finite() {
        return Err(EquationError::Undefined(
            "the affine eigenvalue map needs finite nonzero b",
        ));
    }
    Ok((lambda + constants.a) / b)
}

/// `sum arctan((lambda_i + a)/b)`, the arctan form after [`v_transform`].
///
/// For `t` in `(pi/4, pi/2)` and `lambda_i > -a - b` this equals
/// `f_t(lambda) + n pi/4`.
pub fn shifted_arctan_sum(
    lambdas: &[f64],
    constants: &MetricConstants,
) -> Result<f64, EquationError> {
    lambdas
        .iter()
        .map(|&l| Ok(v_transform(l, constants)?.atan()))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeClass {
    pub spacelike: bool,
    pub convex: bool,
    pub concave: bool,
}

/// Pointwise ellipticity and convexity of the operator at `lambdas`.
pub fn classify_regime(lambdas: &[f64], point: &FamilyPoint) -> RegimeClass {
    let (cos, sin) = snapped_trig(point.t);
    let a = point.constants.a;
    RegimeClass {
        spacelike: lambdas
            .iter()
            .all(|&l| sin * (1.0 + l * l) + 2.0 * cos * l > 0.0),
        convex: lambdas.iter().all(|&l| l < -a),
        concave: lambdas.iter().all(|&l| l > -a),
    }
}

/// Normalized residuals below this are rounding noise; `lambda = 1` is a fixed point
/// of the limit and sits there for every `t`.
pub const LIMIT_FLOOR: f64 = 1e-13;

/// `kappa(t)` in `f_t - n ln(a - b) ~ kappa (sum 1/(1 + lambda_i) - n/2)` as `t -> pi/4`.
pub fn quarter_pi_scale(constants: &MetricConstants) -> f64 {
    -2.0 * constants.b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitSample {
    pub t: f64,
    pub b: f64,
    pub kappa: f64,
    /// `f_t - n ln(a - b) - kappa (sum 1/(1 + lambda) - n/2)`.
    pub residual: f64,
    /// `|residual / kappa|`.
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitRecord {
    pub samples: Vec<LimitSample>,
    /// Observed orders of `normalized` in `b` between consecutive samples.
    pub orders: Vec<f64>,
    pub converging: bool,
}

/// Compares the log-ratio form near `pi/4` with its reciprocal limit along `t_sequence`.
pub fn limit_quarter_pi_check(
    lambdas: &[f64],
    t_sequence: &[f64],
) -> Result<LimitRecord, EquationError> {
    check_finite(lambdas)?;
    for (index, &l) in lambdas.iter().enumerate() {
        if (1.0 + l).abs() < ADMISSIBILITY_MARGIN.max(1e-8) {
            return Err(EquationError::Pole { index, value: l });
        }
    }
    let n = lambdas.len() as f64;
    let reciprocal: f64 = lambdas.iter().map(|l| 1.0 / (1.0 + l)).sum();
    let mut samples = Vec::with_capacity(t_sequence.len());
    for &t in t_sequence {
        let point = FamilyPoint::new(t, 0.0)?;
        if point.form() != EquationForm::LogRatio {
            return Err(EquationError::Undefined(
                "limit samples must lie strictly inside (0, pi/4)",
            ));
        }
        let m = point.constants;
        let kappa = quarter_pi_scale(&m);
        let residual =
            f_t(lambdas, &point)? - n * (m.a - m.b).ln() - kappa * (reciprocal - n / 2.0);
        samples.push(LimitSample {
            t: m.t,
            b: m.b,
            kappa,
            residual,
            normalized: (residual / kappa).abs(),
        });
    }
    let orders: Vec<f64> = samples
        .windows(2)
        .map(|w| (w[0].normalized / w[1].normalized).ln() / (w[0].b / w[1].b).ln())
        .collect();
    let converging = samples.len() >= 2
        && samples.windows(2).all(|w| {
            w[1].b < w[0].b && w[1].normalized <= (w[0].normalized * (1.0 + 1e-9)).max(LIMIT_FLOOR)
        })
        && orders.iter().all(|o| !o.is_finite() || *o > 0.5);
    Ok(LimitRecord {
        samples,
        orders,
        converging,
    })
}
