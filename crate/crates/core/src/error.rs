use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("row {row}: expected {expected} values, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: duplicate sample id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: non-finite value in column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("sample `{id}` has a zero-norm embedding")]
    ZeroNorm { id: String },
    #[error("age bin {0} is outside 0..=5")]
    AgeBinOutOfRange(u32),
    #[error("unknown {kind} label `{value}`")]
    UnknownLabel { kind: &'static str, value: String },
    #[error("embedding/annotation id sets differ: {} unmatched id(s), first: {:?}", .ids.len(), .ids.first())]
    CohortMismatch { ids: Vec<String> },
    #[error("unknown sample id `{0}`")]
    UnknownSample(String),
    #[error("pair ({a}, {b}) is labelled genuine={flag} but identities disagree")]
    GenuineContradiction { a: String, b: String, flag: bool },
    #[error("pair ({0}, {0}) compares a sample with itself")]
    SelfPair(String),
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("fold {fold} contains a single class")]
    SingleClassFold { fold: u32 },
    #[error("non-finite coordinates at iteration {iteration}")]
    NumericalOverflow { iteration: usize },
    #[error("theta + m >= pi for sample(s) {samples:?}")]
    MarginDomain { samples: Vec<usize> },
    #[error("row {row} is not unit-normalized (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },
    #[error("oracle size cap exceeded: {size} > {cap}")]
    OracleCap { size: usize, cap: usize },
}
