use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("derivative order {0} exceeds 3")]
    DerivativeOrder(usize),
    #[error("local basis index {0} out of range")]
    BasisIndex(usize),
    #[error("point {0:?} lies outside the mesh domain")]
    PointOutside(Vec<f64>),
    #[error("face {0} is on the boundary")]
    BoundaryFace(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
