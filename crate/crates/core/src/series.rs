//! Series type and the second-moment statistics every estimator builds on.
//!
//! All moments use the population convention (divide by N). Every formula
//! downstream only involves ratios of second moments, so the choice of
//! denominator does not change any estimate; it is fixed for reproducibility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible series: one elementary fluctuation needs three points.
pub const MIN_LEN: usize = 3;

/// An ordered, gap-free sequence of finite samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Series(Vec<f64>);

impl Series {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < MIN_LEN {
            return Err(Error::TooShort { len: values.len(), min: MIN_LEN });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Series(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.0)
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        variance(&self.0)
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Elementwise `scale * v + offset`.
    pub fn affine(&self, scale: f64, offset: f64) -> Result<Series> {
        Series::new(self.0.iter().map(|v| scale * v + offset).collect())
    }

    /// Elementwise sum with an equally long sample vector.
    pub fn add(&self, other: &[f64]) -> Result<Series> {
        if other.len() != self.len() {
            return Err(Error::LengthMismatch { x: self.len(), y: other.len() });
        }
        Series::new(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }
}

impl TryFrom<Vec<f64>> for Series {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Series::new(values)
    }
}

impl From<Series> for Vec<f64> {
    fn from(s: Series) -> Vec<f64> {
        s.0
    }
}

impl AsRef<[f64]> for Series {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

/// Means, variances, covariance and R² of an aligned pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n: usize,
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov_xy: f64,
    pub r_squared: f64,
}

impl MomentSummary {
    pub fn sd_x(&self) -> f64 {
        self.var_x.sqrt()
    }

    pub fn sd_y(&self) -> f64 {
        self.var_y.sqrt()
    }

    /// Signed Pearson correlation.
    pub fn r(&self) -> f64 {
        self.cov_xy / (self.sd_x() * self.sd_y())
    }
}

pub fn summarize(x: &Series, y: &Series) -> Result<MomentSummary> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { x: x.len(), y: y.len() });
    }
    let (xs, ys) = (x.values(), y.values());
    let n = xs.len() as f64;
    let mean_x = mean(xs);
    let mean_y = mean(ys);
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in xs.iter().zip(ys) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (var_x, var_y, cov_xy) = (sxx / n, syy / n, sxy / n);
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::DegenerateSeries);
    }
    // Rounding can push the ratio a hair above one for collinear data.
    let r_squared = (cov_xy * cov_xy / (var_x * var_y)).min(1.0);
    Ok(MomentSummary { n: xs.len(), mean_x, mean_y, var_x, var_y, cov_xy, r_squared })
}

/// Rescales a series to population standard deviation one.
pub fn normalize_to_unit_sd(series: &Series) -> Result<Series> {
    let sd = series.sd();
    if sd == 0.0 {
        return Err(Error::DegenerateSeries);
    }
    series.affine(1.0 / sd, 0.0)
}

/// Noisy predictor `x'` and predictand `y'` with their cached moment summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    x: Series,
    y: Series,
    summary: MomentSummary,
}

impl PairedSeries {
    pub fn new(x: Series, y: Series) -> Result<Self> {
        let summary = summarize(&x, &y)?;
        Ok(PairedSeries { x, y, summary })
    }

    pub fn from_vecs(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        PairedSeries::new(Series::new(x)?, Series::new(y)?)
    }

    pub fn x(&self) -> &Series {
        &self.x
    }

    pub fn y(&self) -> &Series {
        &self.y
    }

    pub fn summary(&self) -> &MomentSummary {
        &self.summary
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn into_parts(self) -> (Series, Series) {
        (self.x, self.y)
    }
}
