use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no alpha on the search grid certifies (beta={beta}, dim={dim}, kind={kind})")]
    CalibrationFailed { beta: f64, dim: usize, kind: String },
    #[error("offset |b|={b} must be strictly below L0={l0}")]
    InvalidOffset { b: f64, l0: f64 },
    #[error("partition order {0} exceeds the supported maximum of 8")]
    TooLarge(usize),
    #[error("slope L r^beta |K'| = {slope} exceeds 1/2")]
    SlopeOutOfRange { slope: f64 },
    #[error("step size underflow at t={t} (h={h})")]
    StepsizeUnderflow { t: f64, h: f64 },
    #[error("tolerance {0} outside [1e-13, 1e-3]")]
    InvalidTolerance(f64),
    #[error("time {t} outside trajectory span [{lo}, {hi}]")]
    OutOfSpan { t: f64, lo: f64, hi: f64 },
    #[error("class too tight: r_max={r_max} < 1e-3")]
    ClassTooTight { r_max: f64 },
    #[error("dimension {0} too small, need d >= 2")]
    DimensionTooSmall(usize),
    #[error("delta {delta} exceeds admissible maximum {max}")]
    DeltaTooLarge { delta: f64, max: f64 },
    #[error("tube is empty: trajectory velocity vanishes on the whole span")]
    EmptyTube,
    #[error("radius {r} too large for the domain")]
    RadiusTooLarge { r: f64 },
    #[error("code search failed for eta={eta}")]
    SearchFailed { eta: usize },
    #[error("covariance is not symmetric positive definite")]
    SingularCovariance,
    #[error("radius r={r} outside [{lo}, {hi}): {reason}")]
    RadiusOutOfRange { r: f64, lo: f64, hi: f64, reason: String },
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
