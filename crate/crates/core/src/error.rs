use thiserror::Error;

/// Errors raised by mesh construction, assembly, solves and the experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),

    #[error("point ({:.6}, {:.6}, {:.6}) lies outside the domain", .0[0], .0[1], .0[2])]
    OutOfDomain([f64; 3]),

    #[error("degenerate tetrahedron {0}")]
    DegenerateTet(usize),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("coefficient bounds violated: {0}")]
    BoundViolation(String),

    #[error("{tag} matrix is singular or near-singular: {detail}")]
    Singular { tag: String, detail: String },

    #[error("linear solver failure ({tag}): {detail}")]
    Solver { tag: String, detail: String },

    #[error("cell problem on macro element {element} failed: {source}")]
    Cell {
        element: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("system dimension {dim} exceeds the guard {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("fine mesh does not resolve the periodicity: n = {given} but at least n = {required} is needed")]
    Resolution { given: usize, required: usize },

    #[error("meshes are not nested: {0}")]
    NotNested(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
