//! Noise matching: the `Q_EP` / `Δ_EP` diagnostics, slope estimates derived
//! from them, the artificial-noise iteration and the recovery of the original
//! noise variances.
//!
//! The loop adds white noise to one variable until the explanatory-power
//! ratio `Q_EP` of the modified pair is close to one. At that point the RMA
//! slope of the modified pair is consistent for the true slope, and the amount
//! of noise that had to be added identifies both noise variances.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluct::{self, EpOptions, Segmentation, Weighting};
use crate::regress::{self, NoiseRatio, Sign, SlopeEstimate};
use crate::series::{PairedSeries, Series};
use crate::stream::{self, Role};

/// Below this gap between `λ″_RMA` and `λ_EVM` the noise variances are not
/// identifiable.
const IDENTIFIABILITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpEvalMode {
    /// Partial powers at `c_OLS` and `c_INV`.
    #[default]
    Endpoints,
    /// Maxima of the partial-power curves over a slope grid on `[c_OLS, c_INV]`.
    GridMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSample {
    pub slope: f64,
    pub ep: f64,
    pub ep_prime: f64,
    pub ep_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QepDiagnostic {
    pub q_ep: f64,
    pub delta_ep: f64,
    pub ep_hat_at_ols: f64,
    pub ep_prime_at_inv: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_grid: Option<Vec<GridSample>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QepOptions {
    pub mode: EpEvalMode,
    pub grid_points: usize,
    pub segmentation: Segmentation,
}

impl Default for QepOptions {
    fn default() -> Self {
        QepOptions {
            mode: EpEvalMode::Endpoints,
            grid_points: 21,
            segmentation: Segmentation::Extrema(fluct::BoundaryKind::Maxima),
        }
    }
}

fn ep_options(segmentation: Segmentation) -> EpOptions {
    EpOptions { segmentation, ..EpOptions::default() }
}

fn ep_at(pair: &PairedSeries, observed: &fluct::FluctuationPartition, slope: f64, opts: &EpOptions) -> Result<GridSample> {
    let m = pair.summary();
    let est = SlopeEstimate {
        method: regress::Method::Evm,
        slope,
        intercept: m.mean_y - slope * m.mean_x,
        lambda: None,
    };
    let modeled = regress::predict(pair.x(), &est);
    if modeled.variance() == 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    let part = fluct::partition(&modeled, opts)?;
    let (_, s) = fluct::explanatory_powers_on(observed, &part, Weighting::Unweighted)?;
    Ok(GridSample { slope, ep: s.ep_mean, ep_prime: s.ep_prime_mean, ep_hat: s.ep_hat_mean })
}

fn slope_grid(ols: f64, inv: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points)
        .map(|k| {
            if k + 1 == points {
                inv
            } else {
                ols + (inv - ols) * k as f64 / (points - 1) as f64
            }
        })
        .collect()
}

/// Mean explanatory powers of predictions at `points` slopes evenly spread
/// over `[c_OLS, c_INV]`.
pub fn ep_curve(pair: &PairedSeries, points: usize, segmentation: Segmentation) -> Result<Vec<GridSample>> {
    let opts = ep_options(segmentation);
    let ols = regress::fit_ols(pair).slope;
    let inv = regress::fit_inv(pair)?.slope;
    if ols <= 0.0 {
        return Err(Error::NegativeCovariance);
    }
    let observed = fluct::partition(pair.y(), &opts)?;
    slope_grid(ols, inv, points).into_iter().map(|c| ep_at(pair, &observed, c, &opts)).collect()
}

pub fn q_ep(pair: &PairedSeries, mode: EpEvalMode, grid_points: usize) -> Result<QepDiagnostic> {
    q_ep_with(pair, &QepOptions { mode, grid_points, ..QepOptions::default() })
}

pub fn q_ep_with(pair: &PairedSeries, opts: &QepOptions) -> Result<QepDiagnostic> {
    let ols = regress::fit_ols(pair).slope;
    let inv = regress::fit_inv(pair)?.slope;
    if ols <= 0.0 {
        return Err(Error::NegativeCovariance);
    }
    let ep_opts = ep_options(opts.segmentation);
    let observed = fluct::partition(pair.y(), &ep_opts)?;
    let (ep_hat_at_ols, ep_prime_at_inv, slope_grid) = match opts.mode {
        EpEvalMode::Endpoints => {
            let lo = ep_at(pair, &observed, ols, &ep_opts)?;
            let hi = ep_at(pair, &observed, inv, &ep_opts)?;
            (lo.ep_hat, hi.ep_prime, None)
        }
        EpEvalMode::GridMax => {
            let grid = slope_grid(ols, inv, opts.grid_points)
                .into_iter()
                .map(|c| ep_at(pair, &observed, c, &ep_opts))
                .collect::<Result<Vec<_>>>()?;
            let hat = grid.iter().map(|g| g.ep_hat).fold(f64::NEG_INFINITY, f64::max);
            let prime = grid.iter().map(|g| g.ep_prime).fold(f64::NEG_INFINITY, f64::max);
            (hat, prime, Some(grid))
        }
    };
    if ep_prime_at_inv <= 0.0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(QepDiagnostic {
        q_ep: ep_hat_at_ols / ep_prime_at_inv,
        delta_ep: ep_prime_at_inv - ep_hat_at_ols,
        ep_hat_at_ols,
        ep_prime_at_inv,
        slope_grid,
    })
}

/// Slope implied by `Q_EP`:
/// `c_inv (1 − q²)/2 + sqrt(c_rma² q² + c_inv² (1 − q²)²/4)`.
///
/// Returns `c_rma` at `q = 1`, `c_inv` at `q = 0` and tends to
/// `c_rma² / c_inv = c_ols` as `q` grows.
pub fn slope_from_q(q: f64, c_rma: f64, c_inv: f64) -> Result<f64> {
    if !(q.is_finite() && q >= 0.0) {
        return Err(Error::InvalidSlopeInputs(format!("q must be finite and non-negative, got {q}")));
    }
    if !(c_rma > 0.0 && c_rma.is_finite() && c_inv.is_finite() && c_rma <= c_inv * (1.0 + 1e-12)) {
        return Err(Error::InvalidSlopeInputs(format!("need 0 < c_rma <= c_inv, got {c_rma}, {c_inv}")));
    }
    let b = 0.5 * c_inv * (1.0 - q * q);
    let k = c_rma * c_rma * q * q;
    let root = (b * b + k).sqrt();
    if b >= 0.0 {
        Ok(b + root)
    } else {
        // b + root cancels for large q; multiply through by the conjugate.
        Ok(k / (root - b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaBranch {
    /// Negative `Δ` moves the estimate from `c_rma` toward `c_ols`.
    #[default]
    Corrected,
    /// `c_rma + (c_ols − c_rma)·Δ` for negative `Δ`, as printed.
    Verbatim,
}

/// Linear interpolation of the slope from `Δ_EP`.
pub fn slope_from_delta(delta: f64, c_ols: f64, c_rma: f64, c_inv: f64, branch: DeltaBranch) -> Result<f64> {
    if !(-1.0..=1.0).contains(&delta) {
        return Err(Error::DeltaOutOfRange(delta));
    }
    if !(c_ols <= c_rma && c_rma <= c_inv) {
        return Err(Error::InvalidSlopeInputs(format!(
            "need c_ols <= c_rma <= c_inv, got {c_ols}, {c_rma}, {c_inv}"
        )));
    }
    Ok(if delta >= 0.0 {
        c_rma + (c_inv - c_rma) * delta
    } else {
        match branch {
            DeltaBranch::Corrected => c_rma + (c_rma - c_ols) * delta,
            DeltaBranch::Verbatim => c_rma + (c_ols - c_rma) * delta,
        }
    })
}

/// `λ ≈ c_rma² q²`.
pub fn lambda_from_q(q: f64, c_rma: f64) -> f64 {
    c_rma * c_rma * q * q
}

/// Adds zero-mean uniform white noise of population variance `variance`.
pub fn add_artificial_noise<R: Rng + ?Sized>(series: &Series, variance: f64, rng: &mut R) -> Result<Series> {
    if variance.is_nan() || variance < 0.0 {
        return Err(Error::NegativeVariance(variance));
    }
    let noise = stream::uniform_noise(rng, series.len(), variance);
    series.add(&noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinomaConfig {
    pub seed: u64,
    pub max_iterations: usize,
    pub q_tolerance: f64,
    pub slope_tolerance: f64,
    pub noise_growth_factor: f64,
    pub bracket_shrink_factor: f64,
    /// Warm-up noise variance as a fraction of the variance of the series it is added to.
    pub tiny_noise_factor: f64,
    /// First artificial variance as a fraction of the targeted series' variance.
    pub initial_noise_factor: f64,
    /// Ceiling on the artificial variance, same units as `initial_noise_factor`.
    pub max_noise_factor: f64,
    pub replicates: usize,
    pub ep_eval_mode: EpEvalMode,
    pub grid_points: usize,
    pub whiteness_shuffles: usize,
    pub whiteness_alpha: f64,
    /// Refuse to fit when neither series is distinguishable from white noise.
    pub reject_white: bool,
}

impl Default for SinomaConfig {
    fn default() -> Self {
        SinomaConfig {
            seed: 0,
            max_iterations: 50,
            q_tolerance: 0.01,
            slope_tolerance: 0.01,
            noise_growth_factor: 2.0,
            bracket_shrink_factor: 0.5,
            tiny_noise_factor: 1e-3,
            initial_noise_factor: 0.25,
            max_noise_factor: 64.0,
            replicates: 10,
            ep_eval_mode: EpEvalMode::Endpoints,
            grid_points: 21,
            whiteness_shuffles: 199,
            whiteness_alpha: 0.01,
            reject_white: true,
        }
    }
}

impl SinomaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !pos(self.q_tolerance) || !pos(self.slope_tolerance) {
            return bad("tolerances must be positive");
        }
        if !(self.noise_growth_factor.is_finite() && self.noise_growth_factor > 1.0) {
            return bad("noise_growth_factor must exceed 1");
        }
        if !(self.bracket_shrink_factor > 0.0 && self.bracket_shrink_factor < 1.0) {
            return bad("bracket_shrink_factor must lie in (0, 1)");
        }
        if !(self.tiny_noise_factor.is_finite() && self.tiny_noise_factor >= 0.0) {
            return bad("tiny_noise_factor must be non-negative");
        }
        if !pos(self.initial_noise_factor) || self.max_noise_factor.partial_cmp(&self.initial_noise_factor).is_none_or(|o| o.is_lt()) {
            return bad("need 0 < initial_noise_factor <= max_noise_factor");
        }
        if !self.max_noise_factor.is_finite() {
            return bad("max_noise_factor must be finite");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.grid_points < 2 {
            return bad("grid_points must be at least 2");
        }
        if self.whiteness_shuffles == 0 {
            return bad("whiteness_shuffles must be at least 1");
        }
        if !(self.whiteness_alpha > 0.0 && self.whiteness_alpha < 1.0) {
            return bad("whiteness_alpha must lie in (0, 1)");
        }
        Ok(())
    }

    fn qep_options(&self) -> QepOptions {
        QepOptions { mode: self.ep_eval_mode, grid_points: self.grid_points, ..QepOptions::default() }
    }
}

/// Which variable receives the artificial noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseTarget {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub s2_epsilon_artificial: f64,
    pub s2_delta_artificial: f64,
    /// Absent when the modified pair lost its positive covariance.
    pub q_ep: Option<f64>,
    pub c_tilde: Option<f64>,
    pub c_rma: Option<f64>,
    pub sign_change: bool,
}

/// Recovered noise variances and the noiseless standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecovery {
    pub s2_epsilon: f64,
    pub s2_delta: f64,
    pub sd_x_noiseless: Option<f64>,
    pub sd_y_noiseless: Option<f64>,
    /// A raw estimate was negative (clamped to 0) or exceeded the observed variance.
    pub non_physical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub first_q: f64,
    pub target: NoiseTarget,
    pub slope: f64,
    pub intercept: f64,
    pub lambda_evm: NoiseRatio,
    pub lambda_rma_pp: f64,
    pub s2_epsilon_artificial: f64,
    pub s2_delta_artificial: f64,
    pub noise: Option<NoiseRecovery>,
    pub iterations_used: usize,
    pub converged: bool,
    /// The slope fell outside `[c_OLS, c_INV]` and was clamped.
    pub clamped: bool,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhitenessCheck {
    pub contrast_x: f64,
    pub contrast_y: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub hazard: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinomaResult {
    /// Mean slope over replicates.
    pub slope: f64,
    /// Sample standard deviation of the replicate slopes (0 for one replicate).
    pub slope_sd: f64,
    pub intercept: f64,
    pub lambda_evm: NoiseRatio,
    pub lambda_rma_pp: f64,
    pub s2_epsilon_artificial: f64,
    pub s2_delta_artificial: f64,
    pub noise: Option<NoiseRecovery>,
    pub converged: bool,
    pub clamped: bool,
    pub sign: Sign,
    /// Factor `y′` was divided by before matching (1 when not steep).
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whiteness: Option<WhitenessCheck>,
    /// Per-replicate results in working coordinates (after sign and scale normalization).
    pub replicates: Vec<ReplicateResult>,
}

/// Noise-recovery quantities of one replicate in the units of the input pair.
/// Standard deviations rather than variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub slope: f64,
    pub s_epsilon_artificial: f64,
    pub s_delta_artificial: f64,
    pub lambda_evm: NoiseRatio,
    pub s_epsilon: Option<f64>,
    pub s_delta: Option<f64>,
    pub sd_x: Option<f64>,
    pub sd_y: Option<f64>,
}

impl SinomaResult {
    pub fn replicate_rows(&self) -> Vec<RecoveryRow> {
        let k = self.scale;
        self.replicates
            .iter()
            .map(|r| {
                let noise = r.noise.as_ref();
                RecoveryRow {
                    slope: self.sign.factor() * k * r.slope,
                    s_epsilon_artificial: r.s2_epsilon_artificial.sqrt(),
                    s_delta_artificial: k * r.s2_delta_artificial.sqrt(),
                    lambda_evm: match r.lambda_evm {
                        NoiseRatio::Finite(l) => NoiseRatio::Finite(l * k * k),
                        NoiseRatio::Infinite => NoiseRatio::Infinite,
                    },
                    s_epsilon: noise.map(|n| n.s2_epsilon.sqrt()),
                    s_delta: noise.map(|n| k * n.s2_delta.sqrt()),
                    sd_x: noise.and_then(|n| n.sd_x_noiseless),
                    sd_y: noise.and_then(|n| n.sd_y_noiseless.map(|v| k * v)),
                }
            })
            .collect()
    }
}

/// `S²_ε = (S²_δa − λ″ S²_εa) / (λ″ − λ_EVM)`, `S²_δ = λ_EVM S²_ε`, without sign checks.
pub fn recover_noise_raw(lambda_evm: f64, lambda_rma_pp: f64, s2_eps_art: f64, s2_del_art: f64) -> Result<(f64, f64)> {
    let den = lambda_rma_pp - lambda_evm;
    if den.abs() < IDENTIFIABILITY_EPS {
        return Err(Error::DegenerateDenominator);
    }
    let s2_epsilon = (s2_del_art - lambda_rma_pp * s2_eps_art) / den;
    Ok((s2_epsilon, lambda_evm * s2_epsilon))
}

pub fn recover_noise(lambda_evm: f64, lambda_rma_pp: f64, s2_eps_art: f64, s2_del_art: f64) -> Result<(f64, f64)> {
    let (e, d) = recover_noise_raw(lambda_evm, lambda_rma_pp, s2_eps_art, s2_del_art)?;
    if e < 0.0 || d < 0.0 {
        return Err(Error::NonPhysicalNoise(format!("negative variance (S2_eps = {e}, S2_delta = {d})")));
    }
    Ok((e, d))
}

/// `sqrt(S²_x′ − S²_ε)` and `sqrt(S²_y′ − S²_δ)`.
pub fn noiseless_sds(pair: &PairedSeries, s2_epsilon: f64, s2_delta: f64) -> Result<(f64, f64)> {
    let m = pair.summary();
    if s2_epsilon < 0.0 || s2_delta < 0.0 {
        return Err(Error::NonPhysicalNoise("negative noise variance".into()));
    }
    if s2_epsilon >= m.var_x {
        return Err(Error::NonPhysicalNoise(format!("S2_eps {s2_epsilon} >= var(x') {}", m.var_x)));
    }
    if s2_delta >= m.var_y {
        return Err(Error::NonPhysicalNoise(format!("S2_delta {s2_delta} >= var(y') {}", m.var_y)));
    }
    Ok(((m.var_x - s2_epsilon).sqrt(), (m.var_y - s2_delta).sqrt()))
}

fn recovery(pair: &PairedSeries, lambda_evm: NoiseRatio, lambda_pp: f64, ea: f64, da: f64) -> Option<NoiseRecovery> {
    let lambda = match lambda_evm {
        NoiseRatio::Finite(l) => l,
        NoiseRatio::Infinite => return None,
    };
    let (e, d) = recover_noise_raw(lambda, lambda_pp, ea, da).ok()?;
    let mut non_physical = e < 0.0 || d < 0.0;
    let (e, d) = (e.max(0.0), d.max(0.0));
    let sds = noiseless_sds(pair, e, d).ok();
    non_physical |= sds.is_none();
    Some(NoiseRecovery {
        s2_epsilon: e,
        s2_delta: d,
        sd_x_noiseless: sds.map(|s| s.0),
        sd_y_noiseless: sds.map(|s| s.1),
        non_physical,
    })
}

fn intercept(pair: &PairedSeries, slope: f64) -> f64 {
    let m = pair.summary();
    m.mean_y - slope * m.mean_x
}

/// Clamps into `[c_OLS, c_INV]`, reporting whether clamping happened.
fn clamp_slope(pair: &PairedSeries, slope: f64) -> Result<(f64, bool)> {
    let ols = regress::fit_ols(pair).slope;
    let inv = regress::fit_inv(pair)?.slope;
    let c = slope.clamp(ols, inv);
    Ok((c, c != slope))
}

struct Probe {
    q: f64,
    c_tilde: f64,
    c_rma: f64,
    lambda_pp: f64,
}

fn probe(x: Series, y: Series, opts: &QepOptions) -> Result<Option<Probe>> {
    let pair = PairedSeries::new(x, y)?;
    let m = pair.summary();
    if m.cov_xy <= 0.0 {
        return Ok(None);
    }
    let diag = q_ep_with(&pair, opts)?;
    let c_rma = regress::fit_rma(&pair).slope;
    let c_inv = regress::fit_inv(&pair)?.slope;
    let c_tilde = slope_from_q(diag.q_ep, c_rma, c_inv)?;
    Ok(Some(Probe { q: diag.q_ep, c_tilde, c_rma, lambda_pp: m.var_y / m.var_x }))
}

/// One replicate of the noise-matching loop on a sign-normalized pair.
pub fn run_sinoma_replicate(pair: &PairedSeries, config: &SinomaConfig, replicate: usize) -> Result<ReplicateResult> {
    config.validate()?;
    if pair.summary().cov_xy <= 0.0 {
        return Err(Error::NegativeCovariance);
    }
    let opts = config.qep_options();
    let mut rng = stream::stream(config.seed, Role::Artificial, replicate as u64);
    let (x, y) = (pair.x(), pair.y());
    let m = pair.summary();
    let tiny_x = config.tiny_noise_factor * m.var_x;
    let tiny_y = config.tiny_noise_factor * m.var_y;

    let warm = probe(
        add_artificial_noise(x, tiny_x, &mut rng)?,
        add_artificial_noise(y, tiny_y, &mut rng)?,
        &opts,
    )?
    .ok_or(Error::ZeroCovariance)?;
    let first_q = warm.q;
    let target = if first_q > 1.0 { NoiseTarget::X } else { NoiseTarget::Y };
    let target_var = match target {
        NoiseTarget::X => m.var_x,
        NoiseTarget::Y => m.var_y,
    };
    let cap = config.max_noise_factor * target_var;
    let mut variance = config.initial_noise_factor * target_var;
    let mut log_step = config.noise_growth_factor.ln();
    let mut side = (first_q - 1.0).signum();

    let mut trace = Vec::with_capacity(config.max_iterations);
    // (|q − 1|, c_tilde, λ″, εa, δa) of the best probe so far.
    let mut best: Option<(f64, f64, f64, f64, f64)> = None;
    let mut converged = false;

    for iteration in 0..config.max_iterations {
        let (ea, da) = match target {
            NoiseTarget::X => (variance, tiny_y),
            NoiseTarget::Y => (tiny_x, variance),
        };
        let x2 = add_artificial_noise(x, ea, &mut rng)?;
        let y2 = add_artificial_noise(y, da, &mut rng)?;
        let p = probe(x2, y2, &opts)?;

        // Without positive covariance the probe is read as too much noise.
        let s = match &p {
            Some(p) => (p.q - 1.0).signum(),
            None => match target {
                NoiseTarget::X => -1.0,
                NoiseTarget::Y => 1.0,
            },
        };
        let sign_change = s != 0.0 && s != side;
        trace.push(TraceStep {
            iteration,
            s2_epsilon_artificial: ea,
            s2_delta_artificial: da,
            q_ep: p.as_ref().map(|p| p.q),
            c_tilde: p.as_ref().map(|p| p.c_tilde),
            c_rma: p.as_ref().map(|p| p.c_rma),
            sign_change,
        });

        if let Some(p) = &p {
            let gap = (p.q - 1.0).abs();
            if best.is_none_or(|b| gap < b.0) {
                best = Some((gap, p.c_tilde, p.lambda_pp, ea, da));
            }
            if (p.c_tilde - p.c_rma).abs() < config.slope_tolerance || gap < config.q_tolerance {
                best = Some((gap, p.c_tilde, p.lambda_pp, ea, da));
                converged = true;
                break;
            }
        }

        if sign_change {
            log_step *= config.bracket_shrink_factor;
            side = s;
        }
        let up = match target {
            NoiseTarget::X => s > 0.0,
            NoiseTarget::Y => s < 0.0,
        };
        variance = if up { variance * log_step.exp() } else { variance / log_step.exp() };
        variance = variance.min(cap);
    }

    let (_, c_tilde, lambda_rma_pp, ea, da) = match best {
        Some(b) => b,
        // Every probe lost covariance; fall back to the warm-up probe.
        None => (0.0, warm.c_tilde, warm.lambda_pp, tiny_x, tiny_y),
    };
    let (slope, clamped) = clamp_slope(pair, c_tilde)?;
    let lambda_evm = regress::lambda_from_slope(pair, slope)?;
    Ok(ReplicateResult {
        replicate,
        first_q,
        target,
        slope,
        intercept: intercept(pair, slope),
        lambda_evm,
        lambda_rma_pp,
        s2_epsilon_artificial: ea,
        s2_delta_artificial: da,
        noise: recovery(pair, lambda_evm, lambda_rma_pp, ea, da),
        iterations_used: trace.len(),
        converged,
        clamped,
        trace,
    })
}

fn mean_sd(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs all replicates on a sign-normalized pair and aggregates them.
///
/// The aggregate slope is the replicate mean; `λ_EVM`, the noise variances
/// and the noiseless sds are recomputed from it and from the mean `λ″` and
/// mean artificial variances, so the aggregate satisfies the same identities
/// as a single replicate.
pub fn run_sinoma(pair: &PairedSeries, config: &SinomaConfig) -> Result<SinomaResult> {
    config.validate()?;
    let replicates = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_sinoma_replicate(pair, config, r))
        .collect::<Result<Vec<_>>>()?;

    let (slope, slope_sd) = mean_sd(replicates.iter().map(|r| r.slope));
    let (lambda_rma_pp, _) = mean_sd(replicates.iter().map(|r| r.lambda_rma_pp));
    let (ea, _) = mean_sd(replicates.iter().map(|r| r.s2_epsilon_artificial));
    let (da, _) = mean_sd(replicates.iter().map(|r| r.s2_delta_artificial));
    let (slope, clamped_mean) = clamp_slope(pair, slope)?;
    let lambda_evm = regress::lambda_from_slope(pair, slope)?;
    Ok(SinomaResult {
        slope,
        slope_sd,
        intercept: intercept(pair, slope),
        lambda_evm,
        lambda_rma_pp,
        s2_epsilon_artificial: ea,
        s2_delta_artificial: da,
        noise: recovery(pair, lambda_evm, lambda_rma_pp, ea, da),
        converged: replicates.iter().all(|r| r.converged),
        clamped: clamped_mean || replicates.iter().any(|r| r.clamped),
        sign: Sign::Positive,
        scale: 1.0,
        whiteness: None,
        replicates,
    })
}

/// Mean local sd of the elementary fluctuations relative to the global sd.
pub fn bandwidth_contrast(values: &[f64]) -> f64 {
    let sd = crate::series::variance(values).sqrt();
    let b = fluct::extremum_boundaries(values, fluct::BoundaryKind::Maxima);
    let local: f64 = b
        .windows(2)
        .map(|w| crate::series::variance(&values[w[0]..=w[1]]).sqrt())
        .sum::<f64>()
        / (b.len() - 1) as f64;
    local / sd
}

/// Permutation test of each series against white noise.
///
/// A signal with a red spectrum keeps its variance in slow swings, so the
/// local sds inside fluctuations are small compared to the global sd. Each
/// series is compared with `shuffles` random permutations of itself; the
/// hazard is raised when neither series has a significantly smaller contrast.
pub fn whiteness_check(pair: &PairedSeries, config: &SinomaConfig) -> Result<WhitenessCheck> {
    config.validate()?;
    let m = pair.summary();
    let mut noise_rng = stream::stream(config.seed, Role::Guard, 0);
    let x = add_artificial_noise(pair.x(), config.tiny_noise_factor * m.var_x, &mut noise_rng)?;
    let y = add_artificial_noise(pair.y(), config.tiny_noise_factor * m.var_y, &mut noise_rng)?;

    let test = |s: &Series, index: u64| {
        let observed = bandwidth_contrast(s.values());
        let mut rng = stream::stream(config.seed, Role::Guard, index);
        let mut buf = s.values().to_vec();
        let below = (0..config.whiteness_shuffles)
            .filter(|_| {
                buf.shuffle(&mut rng);
                bandwidth_contrast(&buf) <= observed
            })
            .count();
        let p = (1 + below) as f64 / (1 + config.whiteness_shuffles) as f64;
        (observed, p)
    };
    let (contrast_x, p_x) = test(&x, 1);
    let (contrast_y, p_y) = test(&y, 2);
    // Whiteness is rejected at p <= alpha.
    let hazard = p_x > config.whiteness_alpha && p_y > config.whiteness_alpha;
    Ok(WhitenessCheck { contrast_x, contrast_y, p_x, p_y, hazard })
}

/// Full pipeline on an arbitrary pair: sign normalization, steep-slope
/// rescaling, the whiteness guard, replicated noise matching, and mapping the
/// results back to the original units.
pub fn fit_sinoma(pair: &PairedSeries, config: &SinomaConfig) -> Result<SinomaResult> {
    config.validate()?;
    let (signed, sign) = regress::sign_normalize(pair)?;
    let (work, scale) = regress::rescale_if_steep(&signed)?;

    let whiteness = whiteness_check(&work, config)?;
    if whiteness.hazard && config.reject_white {
        return Err(Error::WhitenessHazard { p_x: whiteness.p_x, p_y: whiteness.p_y });
    }

    let mut r = run_sinoma(&work, config)?;
    let s2 = scale * scale;
    r.slope *= scale;
    r.slope_sd *= scale;
    r.lambda_evm = match r.lambda_evm {
        NoiseRatio::Finite(l) => NoiseRatio::Finite(l * s2),
        NoiseRatio::Infinite => NoiseRatio::Infinite,
    };
    r.lambda_rma_pp *= s2;
    r.s2_delta_artificial *= s2;
    if let Some(n) = r.noise.as_mut() {
        n.s2_delta *= s2;
        n.sd_y_noiseless = n.sd_y_noiseless.map(|v| v * scale);
    }
    r.slope *= sign.factor();
    r.intercept = intercept(pair, r.slope);
    r.sign = sign;
    r.scale = scale;
    r.whiteness = Some(whiteness);
    Ok(r)
}
