use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("row {0} has zero norm")]
    ZeroRow(usize),
    #[error("degenerate update direction: |delta| = {norm:e}")]
    DegenerateDirection { norm: f64 },
    #[error("base row norm {norm} is not below 1; no unit-norm scaling exists")]
    InfeasibleBase { norm: f64 },
    #[error("negative discriminant {0:e}")]
    NegativeDiscriminant(f64),
    #[error("projection failed on row {row}: {source}")]
    RowProjection { row: usize, source: Box<Error> },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("did not converge after {iterations} iterations (last change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),
    #[error("parameter registries differ: {0}")]
    RegistryMismatch(String),
    #[error("post-update hook {mode} cannot be applied: {reason}")]
    HookMismatch { mode: &'static str, reason: String },
    #[error("snapshot format error: {0}")]
    Snapshot(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_shape(
    context: &'static str,
    expected: &[usize],
    got: &[usize],
) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            context,
            expected: expected.to_vec(),
            got: got.to_vec(),
        })
    }
}
