use thiserror::Error;

/// Everything that can go wrong inside the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config validation error at `{key}`: {reason}")]
    ConfigValidation { key: String, reason: String },

    #[error("field mismatch: {0}")]
    FieldMismatch(String),

    #[error("ghost layer of `{0}` is not populated")]
    GhostsNotPopulated(&'static str),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "negative concentration {value:e} for species {species} in cell {cell}; try dt <= {suggested_dt:e}"
    )]
    NegativeConcentration {
        species: usize,
        cell: usize,
        value: f64,
        suggested_dt: f64,
    },

    #[error("time step {dt:e} exceeds the {kind} stability bound {limit:e}")]
    StabilityViolation {
        kind: &'static str,
        dt: f64,
        limit: f64,
    },

    #[error("exp({exponent}) overflows in cell {cell}")]
    Overflow { cell: usize, exponent: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("unknown {kind} `{name}`; available: {available}")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("problem too large for {what}: {size} > {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. }
            | Error::ConfigValidation { .. }
            | Error::InvalidGrid(_)
            | Error::InvalidParameter { .. }
            | Error::Unknown { .. } => 2,
            Error::NegativeConcentration { .. } | Error::Invariant(_) => 4,
            _ => 3,
        }
    }

    /// Short name of the subsystem that raised the error.
    pub fn module(&self) -> &'static str {
        match self {
            Error::ConfigParse { .. } | Error::ConfigValidation { .. } | Error::Unknown { .. } => {
                "sim_orchestrator"
            }
            Error::InvalidGrid(_) | Error::FieldMismatch(_) | Error::GhostsNotPopulated(_) => {
                "core_fields"
            }
            Error::NonConvergence { solver, .. } => {
                if solver.starts_with("pressure") {
                    "fluid_solver"
                } else {
                    "poisson_robin"
                }
            }
            Error::NegativeConcentration { .. } | Error::Overflow { .. } => "nernst_planck",
            Error::StabilityViolation { kind, .. } => {
                if matches!(*kind, "fluid" | "viscous" | "advective") {
                    "fluid_solver"
                } else {
                    "nernst_planck"
                }
            }
            Error::Hypothesis(_) | Error::TooLarge { .. } => "verification_oracle",
            Error::Checkpoint(_) | Error::Io(_) | Error::Json(_) => "sim_orchestrator",
            Error::InvalidParameter { .. } | Error::Invariant(_) => "sim_orchestrator",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
