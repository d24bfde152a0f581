use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown surface kind `{0}`")]
    UnknownSurface(String),
    #[error("invalid surface parameter: {0}")]
    InvalidParameter(String),
    #[error("point (theta={theta}, z={z}) lies outside the parameter domain")]
    OutsideDomain { theta: f64, z: f64 },
    #[error("point (theta={theta}, z={z}) lies inside the guard radius of a coordinate singularity")]
    NearSingularity { theta: f64, z: f64 },
    #[error("surface has no flat points")]
    NoFlatPoints,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("curvature ratio has no limit at flat point ({theta}, {z}): spread {spread:.3e}")]
    RatioLimit { theta: f64, z: f64, spread: f64 },

    #[error("thickness h={h} too large: h * max curvature / 2 = {ratio:.4} >= 1")]
    ThicknessTooLarge { h: f64, ratio: f64 },
    #[error("mesh resolution {0:?} below minimum (8, 8, 2)")]
    ResolutionTooSmall((usize, usize, usize)),

    #[error("thickness-shift factor 1 + t*kappa = {0} is not positive")]
    NonPositiveShift(f64),
    #[error("assembly would need {needed} bytes, above the cap of {cap}")]
    MemoryBudget { needed: usize, cap: usize },
    #[error("matrix dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("numerator form is not positive definite on the free dofs")]
    NotPositiveDefinite,
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("dense oracle limited to {cap} free dofs, problem has {size}")]
    OracleTooLarge { size: usize, cap: usize },
    #[error("zero field")]
    ZeroField,

    #[error("Ansatz support leaves the parameter domain: {0}")]
    SupportOutsideDomain(String),
    #[error("Ansatz scale {radius:.4e} under-resolved by mesh spacing {spacing:.4e}")]
    UnderResolved { radius: f64, spacing: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("nonpositive value {0} in log-log fit")]
    NonPositive(f64),
    #[error("trial field support touches the domain boundary")]
    SupportTouchesBoundary,

    #[error("invalid elastic tensor: {0}")]
    InvalidElasticTensor(String),
    #[error("destabilizing cone is empty: no buckling for this stress direction")]
    EmptyCone,
    #[error("indefinite pencil solver breakdown: {0}")]
    Breakdown(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
