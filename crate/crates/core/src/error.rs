use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("matrix exponential overflowed (1-norm {norm:.3e})")]
    Overflow { norm: f64 },

    #[error("eigenvalue solver did not converge")]
    EigenSolver,

    #[error("{what} is not Hurwitz (max real part {max_re:.6e})")]
    NotHurwitz { what: &'static str, max_re: f64 },

    #[error("pair ({0}) is not controllable")]
    Uncontrollable(&'static str),

    #[error("{name} is singular or ill-conditioned (condition number {cond:.3e})")]
    Singular { name: &'static str, cond: f64 },

    #[error("{what} has an eigenvalue at -k^2 pi^2 (k = {k})")]
    EigenvalueCondition { what: &'static str, k: usize },

    #[error("derivative order {order} exceeds the supported maximum {max}")]
    OrderOutOfRange { order: usize, max: usize },

    #[error("point ({x}, {y}) lies outside the triangle 0 <= y <= x <= 1")]
    OutsideDomain { x: f64, y: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("explicit scheme unstable: q*dt/dx^2 = {ratio:.6} > 0.5")]
    StabilityCondition { ratio: f64 },

    #[error("grid too coarse: {points} points, stencils need {needed}")]
    GridTooCoarse { points: usize, needed: usize },

    #[error("decay fit needs positive samples; found {value} at t = {t}")]
    NonPositiveSample { t: f64, value: f64 },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Scenario(_) | Error::Json(_) | Error::Dimension(_) | Error::InvalidParameter(_) => "schema",
            Error::StabilityCondition { .. } | Error::GridTooCoarse { .. } => "stability_condition",
            Error::NotHurwitz { .. }
            | Error::Uncontrollable(_)
            | Error::Singular { .. }
            | Error::EigenvalueCondition { .. } => "synthesis",
            Error::Io(_) => "io",
            _ => "numerical",
        }
    }

    /// Process exit code for [`Error::kind`].
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "schema" => 2,
            "stability_condition" => 3,
            "synthesis" => 4,
            "io" => 5,
            _ => 6,
        }
    }
}
