use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cyclic model: dependency cycle among endogenous variables involving `{0}`")]
    CyclicModel(String),
    #[error("missing law for endogenous variable `{0}`")]
    MissingLaw(String),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("incomplete assignment: missing `{0}`")]
    IncompleteAssignment(String),
    #[error("zero-probability evidence: {0}")]
    ZeroProbabilityEvidence(String),
    #[error("overlapping variables: `{0}` appears in both factors")]
    OverlappingVariables(String),
    #[error("unsupported backend: {0}")]
    UnsupportedBackend(String),
    #[error("unbounded normalizer: {0}")]
    UnboundedNormalizer(String),
    #[error("undecidable: {0}")]
    Undecidable(String),
    #[error("counterlegal antecedent: {0}")]
    CounterlegalAntecedent(String),
    #[error("reserved symbol collision: {0}")]
    ReservedSymbolCollision(String),
    #[error("reduced form not invertible at the observation: {0}")]
    NonInvertibleAtObservation(String),
    #[error("feature space too large: {0} features (limit 20)")]
    FeatureSpaceTooLarge(usize),
    #[error("declared kernel property `{property}` does not hold: {detail}")]
    PropertyMismatch { property: String, detail: String },
    #[error("parse error at {line}:{col}: {msg}")]
    ParseError { line: usize, col: usize, msg: String },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
