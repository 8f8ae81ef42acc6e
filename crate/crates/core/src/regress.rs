//! Closed-form slope estimators: OLS, inverse OLS, reduced major axis and the
//! general errors-in-variables model for a known noise ratio.
//!
//! For a pair with positive covariance the estimators are ordered
//! `ols <= rma <= inv`, and `ols / R = rma = R * inv`. The EVM slope sweeps
//! that interval monotonically as the noise ratio goes from infinity to zero.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::series::{PairedSeries, Series};

/// `c_OLS` above which the predictand is divided by `c_OLS` before noise
/// matching, so elementary fluctuations stay noise-dominated.
pub const STEEPNESS_THRESHOLD: f64 = 3.0;

/// Relative distance under which a slope is treated as an endpoint of the
/// EVM range when inverting for the noise ratio.
const ENDPOINT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ols,
    Inv,
    Rma,
    Evm,
    Sinoma,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Ols => "ols",
            Method::Inv => "inv",
            Method::Rma => "rma",
            Method::Evm => "evm",
            Method::Sinoma => "sinoma",
        };
        f.write_str(s)
    }
}

/// Ratio of predictand to predictor noise variance, `S²_δ / S²_ε`.
///
/// Infinity (a noiseless predictor) is kept symbolic and dispatched to the
/// OLS closed form. Serialized as a number, or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseRatio {
    Finite(f64),
    Infinite,
}

impl NoiseRatio {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::NegativeLambda(lambda));
        }
        if lambda.is_infinite() {
            Ok(NoiseRatio::Infinite)
        } else {
            Ok(NoiseRatio::Finite(lambda))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            NoiseRatio::Finite(v) => v,
            NoiseRatio::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, NoiseRatio::Infinite)
    }
}

impl Serialize for NoiseRatio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NoiseRatio::Finite(v) => s.serialize_f64(*v),
            NoiseRatio::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NoiseRatio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RatioVisitor;

        impl Visitor<'_> for RatioVisitor {
            type Value = NoiseRatio;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<NoiseRatio, E> {
                NoiseRatio::new(v).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<NoiseRatio, E> {
                self.visit_f64(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<NoiseRatio, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<NoiseRatio, E> {
                match v {
                    "inf" | "infinity" => Ok(NoiseRatio::Infinite),
                    other => other
                        .parse::<f64>()
                        .map_err(E::custom)
                        .and_then(|x| self.visit_f64(x)),
                }
            }
        }

        d.deserialize_any(RatioVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub method: Method,
    pub slope: f64,
    pub intercept: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<NoiseRatio>,
}

fn estimate(pair: &PairedSeries, method: Method, slope: f64, lambda: Option<NoiseRatio>) -> SlopeEstimate {
    let m = pair.summary();
    SlopeEstimate { method, slope, intercept: m.mean_y - slope * m.mean_x, lambda }
}

pub fn fit_ols(pair: &PairedSeries) -> SlopeEstimate {
    let m = pair.summary();
    estimate(pair, Method::Ols, m.cov_xy / m.var_x, None)
}

pub fn fit_inv(pair: &PairedSeries) -> Result<SlopeEstimate> {
    let m = pair.summary();
    if m.cov_xy == 0.0 {
        return Err(Error::ZeroCovariance);
    }
    Ok(estimate(pair, Method::Inv, m.var_y / m.cov_xy, None))
}

pub fn fit_rma(pair: &PairedSeries) -> SlopeEstimate {
    let m = pair.summary();
    estimate(pair, Method::Rma, (m.var_y / m.var_x).sqrt(), None)
}

fn require_positive_cov(pair: &PairedSeries) -> Result<()> {
    let cov = pair.summary().cov_xy;
    if cov == 0.0 {
        Err(Error::ZeroCovariance)
    } else if cov < 0.0 {
        Err(Error::NegativeCovariance)
    } else {
        Ok(())
    }
}

/// Positive root of `S_xy c² + (λ S²_x − S²_y) c − λ S_xy = 0`.
fn evm_slope(var_x: f64, var_y: f64, cov: f64, lambda: NoiseRatio) -> f64 {
    let lambda = match lambda {
        NoiseRatio::Infinite => return cov / var_x,
        NoiseRatio::Finite(0.0) => return var_y / cov,
        NoiseRatio::Finite(l) => l,
    };
    let b = lambda * var_x - var_y;
    let disc = (b * b + 4.0 * lambda * cov * cov).sqrt();
    if b > 0.0 {
        // The textbook form would subtract two nearly equal numbers here.
        2.0 * lambda * cov / (b + disc)
    } else {
        (disc - b) / (2.0 * cov)
    }
}

pub fn fit_evm(pair: &PairedSeries, lambda: NoiseRatio) -> Result<SlopeEstimate> {
    require_positive_cov(pair)?;
    let m = pair.summary();
    let slope = evm_slope(m.var_x, m.var_y, m.cov_xy, lambda);
    Ok(estimate(pair, Method::Evm, slope, Some(lambda)))
}

/// Residual of the EVM quadratic at `slope`.
pub fn evm_residual(pair: &PairedSeries, lambda: f64, slope: f64) -> f64 {
    let m = pair.summary();
    m.cov_xy * slope * slope + (lambda * m.var_x - m.var_y) * slope - lambda * m.cov_xy
}

/// Inverts the EVM slope for the noise ratio it implies.
///
/// Valid for `c_OLS <= slope <= c_INV`; the endpoints map to infinity and zero.
pub fn lambda_from_slope(pair: &PairedSeries, slope: f64) -> Result<NoiseRatio> {
    require_positive_cov(pair)?;
    let m = pair.summary();
    let ols = m.cov_xy / m.var_x;
    let inv = m.var_y / m.cov_xy;
    let near = |a: f64, b: f64| (a - b).abs() <= ENDPOINT_RTOL * b.abs();
    if near(slope, ols) {
        return Ok(NoiseRatio::Infinite);
    }
    if near(slope, inv) {
        return Ok(NoiseRatio::Finite(0.0));
    }
    if !(slope > ols && slope < inv) {
        return Err(Error::SlopeOutOfRange { slope, ols, inv });
    }
    // c (S²_y − c S_xy) / (c S²_x − S_xy), the moment form of (c_INV − c) / (1/c_OLS − 1/c).
    // Both factors cancel near an endpoint; fused products keep the residual.
    let num = slope * (-slope).mul_add(m.cov_xy, m.var_y);
    let den = slope.mul_add(m.var_x, -m.cov_xy);
    let lambda = num / den;
    Ok(NoiseRatio::Finite(lambda.max(0.0)))
}

/// `ŷ' = slope · x' + intercept`.
pub fn predict(x: &Series, est: &SlopeEstimate) -> Series {
    let values = x.values().iter().map(|v| est.slope * v + est.intercept).collect();
    // An affine map of a valid series with finite coefficients stays valid.
    Series::new(values).expect("affine image of a valid series")
}

/// Variance of the prediction at `slope` relative to the observed predictand.
pub fn variance_ratio(pair: &PairedSeries, slope: f64) -> f64 {
    let m = pair.summary();
    slope * slope * m.var_x / m.var_y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

/// Negates `y'` when the covariance is negative so every estimator sees a
/// positive slope. Slopes fitted on the result must be multiplied by the sign.
pub fn sign_normalize(pair: &PairedSeries) -> Result<(PairedSeries, Sign)> {
    let cov = pair.summary().cov_xy;
    if cov == 0.0 {
        return Err(Error::ZeroCovariance);
    }
    if cov > 0.0 {
        return Ok((pair.clone(), Sign::Positive));
    }
    let y = pair.y().affine(-1.0, 0.0)?;
    Ok((PairedSeries::new(pair.x().clone(), y)?, Sign::Negative))
}

pub fn rescale_if_steep(pair: &PairedSeries) -> Result<(PairedSeries, f64)> {
    rescale_if_steep_with(pair, STEEPNESS_THRESHOLD)
}

/// Divides `y'` by `c_OLS` when `c_OLS` exceeds `threshold`; returns the scale
/// to multiply the final slope by (1 when untouched).
pub fn rescale_if_steep_with(pair: &PairedSeries, threshold: f64) -> Result<(PairedSeries, f64)> {
    let ols = fit_ols(pair).slope;
    if ols <= threshold {
        return Ok((pair.clone(), 1.0));
    }
    let y = pair.y().affine(1.0 / ols, 0.0)?;
    Ok((PairedSeries::new(pair.x().clone(), y)?, ols))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Fixed 8-point fixture: a ramp with recorded perturbations.
    fn fixture() -> PairedSeries {
        let dx = [0.13, -0.21, 0.05, 0.17, -0.09, -0.14, 0.22, -0.03];
        let dy = [-0.31, 0.12, 0.27, -0.18, 0.09, 0.35, -0.22, 0.04];
        let x: Vec<f64> = (0..8).map(|i| i as f64 + dx[i]).collect();
        let y: Vec<f64> = (0..8).map(|i| 2.0 * i as f64 + dy[i]).collect();
        PairedSeries::from_vecs(x, y).unwrap()
    }

    // Direct summation oracle, independent of `summarize`.
    fn oracle(pair: &PairedSeries) -> (f64, f64, f64) {
        let x = pair.x().values();
        let y = pair.y().values();
        let n = x.len() as f64;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..x.len() {
            sx += x[i];
            sy += y[i];
            sxx += x[i] * x[i];
            syy += y[i] * y[i];
            sxy += x[i] * y[i];
        }
        let vx = sxx / n - (sx / n).powi(2);
        let vy = syy / n - (sy / n).powi(2);
        let cxy = sxy / n - sx * sy / (n * n);
        (vx, vy, cxy)
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn sine_pair(c: f64) -> PairedSeries {
        let x: Vec<f64> = (1..=64).map(|i| (2.0 * std::f64::consts::PI * i as f64 / 64.0).sin()).collect();
        let y = x.iter().map(|v| c * v).collect();
        PairedSeries::from_vecs(x, y).unwrap()
    }

    #[test]
    fn fixture_moments_match_summation_oracle() {
        let p = fixture();
        let (vx, vy, cxy) = oracle(&p);
        let m = p.summary();
        assert!((m.var_x - vx).abs() < 1e-12);
        assert!((m.var_y - vy).abs() < 1e-12);
        assert!((m.cov_xy - cxy).abs() < 1e-12);
        assert!((fit_ols(&p).slope - cxy / vx).abs() < 1e-12);
        assert!((fit_inv(&p).unwrap().slope - vy / cxy).abs() < 1e-12);
        assert!((fit_rma(&p).slope - (vy / vx).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn noiseless_pair_all_agree() {
        let p = sine_pair(2.1);
        let ols = fit_ols(&p).slope;
        assert!((ols - 2.1).abs() < 1e-12);
        assert!((fit_inv(&p).unwrap().slope - ols).abs() < 1e-12);
        assert!((fit_rma(&p).slope - ols).abs() < 1e-12);
    }

    #[test]
    fn evm_special_cases() {
        let p = fixture();
        let m = *p.summary();
        let inv = fit_inv(&p).unwrap().slope;
        let ols = fit_ols(&p).slope;
        let rma = fit_rma(&p).slope;
        assert!((fit_evm(&p, NoiseRatio::new(0.0).unwrap()).unwrap().slope - inv).abs() < 1e-10);
        assert!((fit_evm(&p, NoiseRatio::Infinite).unwrap().slope - ols).abs() < 1e-10);
        let l_rma = NoiseRatio::new(m.var_y / m.var_x).unwrap();
        assert!((fit_evm(&p, l_rma).unwrap().slope - rma).abs() < 1e-10);
    }

    #[test]
    fn evm_matches_bisection_oracle() {
        let p = fixture();
        let ols = fit_ols(&p).slope;
        let inv = fit_inv(&p).unwrap().slope;
        let root = bisect(|c| evm_residual(&p, 1.0, c), ols, inv);
        let got = fit_evm(&p, NoiseRatio::Finite(1.0)).unwrap().slope;
        assert!((got - root).abs() < 1e-9, "{got} vs {root}");
    }

    #[test]
    fn evm_rejects_bad_inputs() {
        assert!(matches!(NoiseRatio::new(-0.5), Err(Error::NegativeLambda(_))));
        let p = fixture();
        let neg = PairedSeries::new(p.x().clone(), p.y().affine(-1.0, 0.0).unwrap()).unwrap();
        assert_eq!(fit_evm(&neg, NoiseRatio::Finite(1.0)).unwrap_err(), Error::NegativeCovariance);
        let zero = PairedSeries::from_vecs(vec![-1.0, 0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0, 2.0]).unwrap();
        assert_eq!(zero.summary().cov_xy, 0.0);
        assert_eq!(fit_evm(&zero, NoiseRatio::Finite(1.0)).unwrap_err(), Error::ZeroCovariance);
        assert_eq!(fit_inv(&zero).unwrap_err(), Error::ZeroCovariance);
    }

    #[test]
    fn lambda_from_slope_endpoints_and_rma() {
        let p = fixture();
        let m = *p.summary();
        assert_eq!(lambda_from_slope(&p, fit_ols(&p).slope).unwrap(), NoiseRatio::Infinite);
        assert_eq!(lambda_from_slope(&p, fit_inv(&p).unwrap().slope).unwrap(), NoiseRatio::Finite(0.0));
        let l = lambda_from_slope(&p, fit_rma(&p).slope).unwrap().value();
        assert!((l - m.var_y / m.var_x).abs() < 1e-10);
        assert!(matches!(lambda_from_slope(&p, 0.5 * fit_ols(&p).slope), Err(Error::SlopeOutOfRange { .. })));
    }

    #[test]
    fn predict_and_variance_ratio() {
        let p = fixture();
        let id = SlopeEstimate { method: Method::Ols, slope: 1.0, intercept: 0.0, lambda: None };
        assert_eq!(predict(p.x(), &id), *p.x());
        let est = fit_evm(&p, NoiseRatio::Finite(2.0)).unwrap();
        let yhat = predict(p.x(), &est);
        assert!((yhat.mean() - p.summary().mean_y).abs() < 1e-10);
        assert!((yhat.variance() - est.slope.powi(2) * p.summary().var_x).abs() < 1e-10);
        assert!((variance_ratio(&p, fit_rma(&p).slope) - 1.0).abs() < 1e-12);
        assert!((variance_ratio(&p, fit_ols(&p).slope) - p.summary().r_squared).abs() < 1e-12);
        let inv = fit_inv(&p).unwrap().slope;
        assert!((variance_ratio(&p, inv) - 1.0 / p.summary().r_squared).abs() < 1e-12);
    }

    #[test]
    fn sign_normalization() {
        let p = fixture();
        let (same, sign) = sign_normalize(&p).unwrap();
        assert_eq!(sign, Sign::Positive);
        assert_eq!(same, p);

        // True slope -2: negate-and-compare against the positive fixture.
        let neg = PairedSeries::new(p.x().clone(), p.y().affine(-1.0, 0.0).unwrap()).unwrap();
        let (flipped, sign) = sign_normalize(&neg).unwrap();
        assert_eq!(sign, Sign::Negative);
        let reported = sign.factor() * fit_ols(&flipped).slope;
        assert!((reported + fit_ols(&p).slope).abs() < 1e-12);
        assert!((reported + 2.0).abs() < 0.1);
    }

    #[test]
    fn steep_rescale() {
        let p = sine_pair(1.0);
        let (q, scale) = rescale_if_steep(&p).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(q, p);

        let f = fixture();
        let steep = PairedSeries::new(f.x().clone(), f.y().affine(10.0, 0.0).unwrap()).unwrap();
        let (r, scale) = rescale_if_steep(&steep).unwrap();
        assert!((scale - 10.0 * fit_ols(&f).slope).abs() < 1e-9);
        assert!((fit_ols(&r).slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noise_ratio_serde() {
        let v = serde_json::to_string(&NoiseRatio::Infinite).unwrap();
        assert_eq!(v, "\"inf\"");
        let back: NoiseRatio = serde_json::from_str(&v).unwrap();
        assert_eq!(back, NoiseRatio::Infinite);
        let f: NoiseRatio = serde_json::from_str("4.41").unwrap();
        assert_eq!(f, NoiseRatio::Finite(4.41));
        assert!(serde_json::from_str::<NoiseRatio>("-1.0").is_err());
    }
}
