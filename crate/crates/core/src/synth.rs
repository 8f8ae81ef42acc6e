//! Deterministic validation datasets: a sine base signal, a red-noise
//! surrogate climate series, uniform white-noise contamination and
//! pseudo-proxy suites with a prescribed noise ratio and expected R².

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regress::NoiseRatio;
use crate::series::{self, normalize_to_unit_sd, PairedSeries, Series};
use crate::stream::{self, Role};

pub const MIN_SINE_LEN: usize = 16;
pub const MIN_SURROGATE_LEN: usize = 32;
pub const DEFAULT_AR_COEFFICIENT: f64 = 0.7;

/// Samples generated and discarded before the surrogate series starts.
const BURN_IN: usize = 500;

/// White-noise variances of the predictor (`ε`) and predictand (`δ`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub s2_epsilon: f64,
    pub s2_delta: f64,
}

impl NoiseSpec {
    pub fn new(s2_epsilon: f64, s2_delta: f64) -> Result<Self> {
        for v in [s2_epsilon, s2_delta] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::NegativeVariance(v));
            }
        }
        Ok(NoiseSpec { s2_epsilon, s2_delta })
    }

    /// `S²_δ / S²_ε`, infinite for a noiseless predictor.
    pub fn lambda(&self) -> NoiseRatio {
        if self.s2_epsilon == 0.0 {
            NoiseRatio::Infinite
        } else {
            NoiseRatio::Finite(self.s2_delta / self.s2_epsilon)
        }
    }
}

/// `x_i = sin(2πi/n)` and `y_i = c x_i + c0` for `i = 1..=n`.
pub fn gen_sine(n: usize, c: f64, c0: f64) -> Result<(Series, Series)> {
    if n < MIN_SINE_LEN {
        return Err(Error::InvalidLength { len: n, min: MIN_SINE_LEN });
    }
    let x: Vec<f64> = (1..=n).map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin()).collect();
    let y = x.iter().map(|v| c * v + c0).collect();
    Ok((Series::new(x)?, Series::new(y)?))
}

/// A contaminated pair together with the noise that was added.
#[derive(Debug, Clone, PartialEq)]
pub struct Contaminated {
    pub pair: PairedSeries,
    pub epsilon: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Adds uniform white noise to both series. `ε` and `δ` come from separate
/// streams keyed by `(seed, index)`.
pub fn contaminate(x: &Series, y: &Series, noise: &NoiseSpec, seed: u64, index: u64) -> Result<PairedSeries> {
    Ok(contaminate_detailed(x, y, noise, seed, index)?.pair)
}

pub fn contaminate_detailed(x: &Series, y: &Series, noise: &NoiseSpec, seed: u64, index: u64) -> Result<Contaminated> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { x: x.len(), y: y.len() });
    }
    let noise = NoiseSpec::new(noise.s2_epsilon, noise.s2_delta)?;
    let epsilon = stream::uniform_noise(&mut stream::stream(seed, Role::Epsilon, index), x.len(), noise.s2_epsilon);
    let delta = stream::uniform_noise(&mut stream::stream(seed, Role::Delta, index), y.len(), noise.s2_delta);
    let pair = PairedSeries::new(x.add(&epsilon)?, y.add(&delta)?)?;
    Ok(Contaminated { pair, epsilon, delta })
}

/// Realized covariances that are zero in the ideal noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCovariances {
    pub eps_delta: f64,
    pub eps_x: f64,
    pub delta_y: f64,
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (series::mean(a), series::mean(b));
    a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / a.len() as f64
}

pub fn noise_covariances(x: &Series, y: &Series, c: &Contaminated) -> NoiseCovariances {
    NoiseCovariances {
        eps_delta: cov(&c.epsilon, &c.delta),
        eps_x: cov(&c.epsilon, x.values()),
        delta_y: cov(&c.delta, y.values()),
    }
}

/// First-order autoregressive series with Gaussian innovations, normalized to
/// population sd 1.
pub fn gen_surrogate_climate(n: usize, ar_coefficient: f64, seed: u64, index: u64) -> Result<Series> {
    if !(0.0..1.0).contains(&ar_coefficient) {
        return Err(Error::InvalidCoefficient(ar_coefficient));
    }
    if n < MIN_SURROGATE_LEN {
        return Err(Error::InvalidLength { len: n, min: MIN_SURROGATE_LEN });
    }
    let mut rng = stream::stream(seed, Role::Signal, index);
    let mut state = 0.0;
    let mut values = Vec::with_capacity(n);
    for t in 0..BURN_IN + n {
        let e: f64 = StandardNormal.sample(&mut rng);
        state = ar_coefficient * state + e;
        if t >= BURN_IN {
            values.push(state);
        }
    }
    normalize_to_unit_sd(&Series::new(values)?)
}

/// Expected R² between `x + ε` and `c x + δ` for a signal of variance `var_x`.
pub fn expected_r2(var_x: f64, slope: f64, noise: &NoiseSpec) -> f64 {
    let sy = slope * slope * var_x;
    sy * var_x / ((var_x + noise.s2_epsilon) * (sy + noise.s2_delta))
}

/// Noise variances with ratio `lambda` that give expected R² `target_r2`
/// for `y = x` and a signal of variance `var_x`.
pub fn noise_for_target(var_x: f64, lambda: f64, target_r2: f64) -> Result<NoiseSpec> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InfeasibleTarget(format!("noise ratio must be positive and finite, got {lambda}")));
    }
    if !(target_r2 > 0.0 && target_r2 < 1.0) {
        return Err(Error::InfeasibleTarget(format!("target R2 must lie in (0, 1), got {target_r2}")));
    }
    if !(var_x.is_finite() && var_x > 0.0) {
        return Err(Error::InfeasibleTarget("signal variance must be positive".into()));
    }
    // λe² + S²(1 + λ)e + S⁴(1 − 1/R²) = 0; c < 0, so one positive root.
    let b = var_x * (1.0 + lambda);
    let c = var_x * var_x * (1.0 - 1.0 / target_r2);
    let disc = b * b - 4.0 * lambda * c;
    let e = -2.0 * c / (b + disc.sqrt());
    NoiseSpec::new(e, lambda * e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyMember {
    pub lambda: f64,
    pub noise: NoiseSpec,
    pub pair: PairedSeries,
}

/// One contaminated copy of `signal` (true slope 1, intercept 0) per noise
/// ratio, each with expected OLS R² `target_r2`. Member `i` draws its noise
/// from sub-stream `i`.
pub fn pseudo_proxy_suite(signal: &Series, lambdas: &[f64], target_r2: f64, seed: u64) -> Result<Vec<ProxyMember>> {
    let var = signal.variance();
    if var <= 0.0 {
        return Err(Error::DegenerateSeries);
    }
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let noise = noise_for_target(var, lambda, target_r2)?;
            let pair = contaminate(signal, signal, &noise, seed, i as u64)?;
            Ok(ProxyMember { lambda, noise, pair })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Sine,
    SurrogateAr,
    External,
}

/// A dataset described in TOML:
///
/// ```toml
/// signal = "sine"        # sine | surrogate_ar | external
/// n = 128
/// slope = 2.1
/// intercept = 0.0
/// s2_epsilon = 0.195
/// s2_delta = 0.86
/// seed = 1
/// # ar_coefficient = 0.7         (surrogate_ar)
/// # signal_file = "signal.txt"   (external: one value per line)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecipe {
    pub signal: SignalKind,
    #[serde(default)]
    pub n: Option<usize>,
    pub slope: f64,
    #[serde(default)]
    pub intercept: f64,
    pub s2_epsilon: f64,
    pub s2_delta: f64,
    pub seed: u64,
    #[serde(default)]
    pub ar_coefficient: Option<f64>,
    #[serde(default)]
    pub signal_file: Option<String>,
}

impl DatasetRecipe {
    pub fn from_toml(text: &str) -> Result<Self> {
        let recipe: DatasetRecipe = toml::from_str(text).map_err(|e| Error::InvalidRecipe(e.to_string()))?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slope.is_finite() && self.slope != 0.0) {
            return Err(Error::InvalidRecipe("slope must be finite and non-zero".into()));
        }
        if !self.intercept.is_finite() {
            return Err(Error::InvalidRecipe("intercept must be finite".into()));
        }
        self.noise()?;
        match self.signal {
            SignalKind::Sine | SignalKind::SurrogateAr if self.n.is_none() => {
                Err(Error::InvalidRecipe("n is required for generated signals".into()))
            }
            SignalKind::External if self.signal_file.is_none() => {
                Err(Error::InvalidRecipe("signal_file is required for an external signal".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn noise(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.s2_epsilon, self.s2_delta)
    }

    /// Noiseless `x`. Relative `signal_file` paths resolve against `base`.
    pub fn signal_series(&self, base: &Path) -> Result<Series> {
        match self.signal {
            SignalKind::Sine => Ok(gen_sine(self.n.unwrap_or(0), 1.0, 0.0)?.0),
            SignalKind::SurrogateAr => gen_surrogate_climate(
                self.n.unwrap_or(0),
                self.ar_coefficient.unwrap_or(DEFAULT_AR_COEFFICIENT),
                self.seed,
                0,
            ),
            SignalKind::External => {
                let path = base.join(self.signal_file.as_deref().unwrap_or_default());
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::InvalidRecipe(format!("{}: {e}", path.display())))?;
                let values = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(|l| l.parse::<f64>().map_err(|e| Error::InvalidRecipe(format!("{l:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                if let Some(n) = self.n {
                    if n != values.len() {
                        return Err(Error::InvalidRecipe(format!("n = {n} but signal_file has {} values", values.len())));
                    }
                }
                Series::new(values)
            }
        }
    }

    pub fn generate(&self, base: &Path) -> Result<(Series, Series, Contaminated)> {
        self.validate()?;
        let x = self.signal_series(base)?;
        let y = x.affine(self.slope, self.intercept)?;
        let c = contaminate_detailed(&x, &y, &self.noise()?, self.seed, 0)?;
        Ok((x, y, c))
    }
}
