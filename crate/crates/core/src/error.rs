use std::path::PathBuf;

/// Errors across the whole pipeline.
///
/// Variants are grouped by how the CLI maps them to exit codes: data errors
/// (bad files, bad configs, missing artifacts) and numerical failures
/// (non-convergence, NaN losses).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("triangle {triangle} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        vertex_count: usize,
    },

    #[error("degenerate triangle {triangle}: area {area} cm^2 is below 1e-12")]
    DegenerateTriangle { triangle: usize, area: f64 },

    #[error("non-manifold edge ({a}, {b}) shared by {count} triangles")]
    NonManifoldEdge { a: usize, b: usize, count: usize },

    #[error("mesh is not connected: {components} components")]
    Disconnected { components: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("zero-length normal cannot define a tangent frame")]
    ZeroNormal,

    #[error("negative barycentric weight {weight}")]
    NegativeWeight { weight: f64 },

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {residual:.3e})")]
    EigenNoConvergence { iterations: usize, residual: f64 },

    #[error("{count} vertices unreachable from the pacing sources")]
    UnreachableVertices { count: usize },

    #[error("eikonal solver did not converge after {sweeps} sweeps")]
    EikonalNoConvergence { sweeps: usize },

    #[error("requested {requested} samples but the mesh has only {available} vertices; lower the density")]
    DensityTooHigh { requested: usize, available: usize },

    #[error("requested {requested} pacing sites but the mesh has only {available} vertices")]
    TooManySites { requested: usize, available: usize },

    #[error("non-finite loss at iteration {iteration} ({term})")]
    NanLoss { iteration: usize, term: String },

    #[error("non-finite eikonal residual at element {element}")]
    NonFiniteResidual { element: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty activation map {map}")]
    EmptyMap { map: usize },

    #[error("missing artifact: {what}; run `{hint}` first")]
    MissingArtifact { what: String, hint: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (solver divergence, NaN) as opposed
    /// to bad inputs; the CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigenNoConvergence { .. }
                | Error::EikonalNoConvergence { .. }
                | Error::UnreachableVertices { .. }
                | Error::NanLoss { .. }
                | Error::NonFiniteResidual { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
