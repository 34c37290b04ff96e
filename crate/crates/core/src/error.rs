use crate::model::Point;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({x}, {y}) lies outside the closed domain", x = .0.x, y = .0.y)]
    OutsideDomain(Point),

    #[error("point ({x}, {y}) is not on the boundary (distance {distance:e})", x = .point.x, y = .point.y)]
    NotOnBoundary { point: Point, distance: f64 },

    #[error("level curve H_{edge} = {level} not found: {reason}")]
    LevelCurveNotFound {
        edge: usize,
        level: f64,
        reason: String,
    },

    #[error("quadrature did not converge on edge {edge} at h = {level}: change {change:e} with {nodes} nodes")]
    QuadratureNotConverged {
        edge: usize,
        level: f64,
        nodes: usize,
        change: f64,
    },

    #[error("non-finite state after step; last valid state ({x}, {y})", x = .last_valid.x, y = .last_valid.y)]
    NonFiniteState { last_valid: Point },

    #[error("degenerate generator: {0}")]
    DegenerateGenerator(String),

    #[error("compatibility violated: residual {residual:e} exceeds tolerance {tolerance:e}; no bounded solution exists")]
    Incompatible { residual: f64, tolerance: f64 },

    #[error("edge {edge}: M*abar = {value:e} below floor at h = {level}")]
    CoefficientFloor { edge: usize, level: f64, value: f64 },

    #[error("h = {level} outside edge {edge} range [{minimum}, 0]")]
    OffEdge { edge: usize, level: f64, minimum: f64 },

    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },

    #[error("config: {0}")]
    Config(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
