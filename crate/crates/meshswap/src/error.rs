use thiserror::Error;

/// Errors produced by mesh construction, coordinate transforms and the
/// exchange protocol.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("more ranks than leaves ({ranks} ranks, {leaves} leaves)")]
    MoreRanksThanLeaves { ranks: usize, leaves: usize },

    #[error("undefined direction: point at coordinate origin")]
    UndefinedDirection,

    #[error("outside dipole domain (q={q}, p={p})")]
    OutsideDipoleDomain { q: f64, p: f64 },

    #[error("inversion failed after {0} iterations")]
    InversionFailed(usize),

    #[error("on dipole axis (colatitude {0})")]
    OnDipoleAxis(f64),

    #[error("not owning patch: reference point {point:?} outside patch box")]
    NotOwningPatch { point: Vec<f64> },

    #[error("missing field '{0}'")]
    MissingField(String),

    #[error("ambiguous ownership: query {0} matched by multiple producer leaves")]
    AmbiguousOwnership(u64),

    #[error("transport violation: {0}")]
    Transport(String),

    #[error("invalid config: {field}: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
