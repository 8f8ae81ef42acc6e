use thiserror::Error;

/// Errors raised by the estimators, diagnostics and generators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("series lengths differ: x has {x} values, y has {y}")]
    LengthMismatch { x: usize, y: usize },

    #[error("series has {len} values, at least {min} are required")]
    TooShort { len: usize, min: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("degenerate series: variance is zero")]
    DegenerateSeries,

    #[error("covariance of x and y is zero")]
    ZeroCovariance,

    #[error("covariance of x and y is negative; sign-normalize the pair first")]
    NegativeCovariance,

    #[error("noise ratio must be non-negative, got {0}")]
    NegativeLambda(f64),

    #[error("slope {slope} lies outside the EVM range [{ols}, {inv}]")]
    SlopeOutOfRange { slope: f64, ols: f64, inv: f64 },

    #[error(
        "only {found} elementary fluctuations, at least {required} are required \
         (add more data or check that the series is not monotone/smooth without noise)"
    )]
    TooFewFluctuations { found: usize, required: usize },

    #[error("partitions cover different index ranges ({a} vs {b} points)")]
    RangeMismatch { a: usize, b: usize },

    #[error("invalid fluctuation boundaries: {0}")]
    InvalidBoundaries(String),

    #[error("a series is constant, local bandwidths are all zero")]
    DegenerateBandwidth,

    #[error("explanatory power ratio is undefined (zero partial explanatory power)")]
    UndefinedRatio,

    #[error("invalid slope inputs: {0}")]
    InvalidSlopeInputs(String),

    #[error("delta_ep {0} outside (-1, 1)")]
    DeltaOutOfRange(f64),

    #[error("variance must be non-negative, got {0}")]
    NegativeVariance(f64),

    #[error("lambda''_RMA and lambda_EVM coincide, noise variances are unidentifiable")]
    DegenerateDenominator,

    #[error("non-physical noise estimate: {0}")]
    NonPhysicalNoise(String),

    #[error("invalid series length {len}: at least {min} required")]
    InvalidLength { len: usize, min: usize },

    #[error("autoregressive coefficient must lie in [0, 1), got {0}")]
    InvalidCoefficient(f64),

    #[error("infeasible target: {0}")]
    InfeasibleTarget(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    #[error(
        "signal is indistinguishable from white noise (fluctuation bandwidth contrast \
         p = {p_x:.3} for x, {p_y:.3} for y); estimates would not be reliable"
    )]
    WhitenessHazard { p_x: f64, p_y: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
