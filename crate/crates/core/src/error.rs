use thiserror::Error;

/// Errors raised while building or querying the map substrate.
#[derive(Debug, Error)]
pub enum WorldError {
    #[error("raster decode failed: {0}")]
    Decode(String),
    #[error("invalid map configuration: {0}")]
    Config(String),
    #[error("map contains no occupied cells; distance field is unbounded")]
    NoObstacles,
    #[error("point ({x:.3}, {y:.3}) lies inside an obstacle")]
    InsideObstacle { x: f64, y: f64 },
    #[error("point ({x:.3}, {y:.3}) lies outside the map")]
    OutOfBounds { x: f64, y: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors from encoding, decoding and persisting metric encoding maps.
#[derive(Debug, Error)]
pub enum MemError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("malformed MEM image: {0}")]
    Malformed(String),
    #[error("MEM metadata: {0}")]
    Metadata(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("{what} pose ({x:.3}, {y:.3}) violates the safety margin")]
    Blocked { what: &'static str, x: f64, y: f64 },
    #[error("no path found after expanding {expanded} nodes")]
    NoPath { expanded: usize },
    #[error("node budget of {limit} exhausted")]
    IterationLimit { limit: usize },
}

#[derive(Debug, Error)]
pub enum MincoError {
    #[error("segment duration {0} is not positive")]
    NonPositiveDuration(f64),
    #[error("waypoint/duration shape mismatch: {0}")]
    Shape(String),
    #[error("singular banded system at pivot {0}")]
    Singular(usize),
}

/// Top-level error for the planning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Minco(#[from] MincoError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
