use std::path::PathBuf;

use crate::solve::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("geometry infeasible: {0}")]
    GeometryInfeasible(String),

    #[error("cell {cell} of the level-{level} partition is not simply connected (euler characteristic {euler})")]
    NotSimplyConnected { level: u32, cell: usize, euler: i64 },

    #[error("invalid mesh size {0}: must be 2^-p with p >= 0")]
    NonDyadicMeshSize(f64),

    #[error("degenerate triangle with vertices {0:?}")]
    DegenerateTriangle([[f64; 2]; 3]),

    #[error("mesh does not resolve the interface network ({violations} facet violations)")]
    Unresolved { violations: usize },

    #[error("triangle {triangle} straddles cells {cells:?}")]
    TriangleStraddlesCells { triangle: usize, cells: [u32; 2] },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("coefficient value {value} outside declared bounds [{lower}, {upper}]")]
    CoefficientOutOfBounds { value: f64, lower: f64, upper: f64 },

    #[error("no form weight defined for interface level {0}")]
    MissingWeight(u32),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("patch {patch} on level {level} has a singular local matrix")]
    SingularPatch { level: u32, patch: usize },

    #[error("solver did not converge within {} iterations", .report.iterations)]
    MaxIterations { report: Box<SolveReport> },

    #[error("segment rejected: {0}")]
    DegenerateSegment(String),

    #[error("invalid level range: {0}")]
    InvalidLevel(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
