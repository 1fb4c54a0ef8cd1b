use thiserror::Error;

use crate::semiring::SemiringKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("semiring kinds differ: {left} vs {right}")]
    KindMismatch { left: SemiringKind, right: SemiringKind },
    #[error("annotations of kind {0} cannot be weighed")]
    UnsupportedScale(SemiringKind),
    #[error("invalid weight `{0}`")]
    InvalidWeight(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: String, message: String },
    #[error("type error at row {row}, column {column}: expected {expected}, found `{found}`")]
    Type { row: usize, column: String, expected: String, found: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid json: {0}")]
    Json(String),

    #[error("relation `{relation}` has no attribute `{attribute}`")]
    MissingAttribute { relation: String, attribute: String },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("payload `{0}` is not numeric")]
    NonNumericPayload(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("duplicate relation `{0}`")]
    DuplicateRelation(String),

    #[error("join graph has a cycle through {}", .0.join(" - "))]
    CycleDetected(Vec<String>),
    #[error("join graph is disconnected: {}", fmt_components(.0))]
    Disconnected(Vec<Vec<String>>),
    #[error("bad join attribute: {0}")]
    BadJoinAttr(String),
    #[error("cardinality mismatch on {edge}: declared {declared}, observed {observed}")]
    CardinalityMismatch { edge: String, declared: String, observed: String },

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid predicate `{0}`")]
    InvalidPredicate(String),

    #[error("missing weights for {}", .0.join(", "))]
    MissingWeights(Vec<String>),
    #[error("proportional weighing on {relation}: row {row_id} has non-positive value {value}")]
    NonPositiveProportionalValue { relation: String, row_id: u64, value: String },
    #[error("relation `{relation}` has no ordering attribute `{attribute}`")]
    MissingOrderAttr { relation: String, attribute: String },
    #[error("custom weights for {relation} are missing row {row_id}")]
    MissingRowId { relation: String, row_id: u64 },
    #[error("custom weights for {relation} name unknown row {row_id}")]
    UnknownRowId { relation: String, row_id: u64 },
    #[error("invalid weighing strategy: {0}")]
    InvalidStrategy(String),
}

fn fmt_components(components: &[Vec<String>]) -> String {
    components
        .iter()
        .map(|c| format!("{{{}}}", c.join(", ")))
        .collect::<Vec<_>>()
        .join(" ")
}

impl Error {
    /// Stable machine-readable code for service and CLI error payloads.
    pub fn code(&self) -> &'static str {
        match self {
            Error::KindMismatch { .. } => "kind_mismatch",
            Error::UnsupportedScale(_) => "unsupported_scale",
            Error::InvalidWeight(_) => "invalid_weight",
            Error::Parse { .. } => "parse_error",
            Error::Type { .. } => "type_error",
            Error::Io { .. } => "io_error",
            Error::Json(_) => "invalid_json",
            Error::MissingAttribute { .. } => "missing_attribute",
            Error::UnknownAttribute(_) => "unknown_attribute",
            Error::NonNumericPayload(_) => "non_numeric_payload",
            Error::UnknownRelation(_) => "unknown_relation",
            Error::DuplicateRelation(_) => "duplicate_relation",
            Error::CycleDetected(_) => "cycle_detected",
            Error::Disconnected(_) => "disconnected",
            Error::BadJoinAttr(_) => "bad_join_attr",
            Error::CardinalityMismatch { .. } => "cardinality_mismatch",
            Error::UnknownMetric(_) => "unknown_metric",
            Error::InvalidQuery(_) => "invalid_query",
            Error::InvalidPredicate(_) => "invalid_predicate",
            Error::MissingWeights(_) => "missing_weights",
            Error::NonPositiveProportionalValue { .. } => "non_positive_proportional_value",
            Error::MissingOrderAttr { .. } => "missing_order_attr",
            Error::MissingRowId { .. } => "missing_row_id",
            Error::UnknownRowId { .. } => "unknown_row_id",
            Error::InvalidStrategy(_) => "invalid_strategy",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), message: err.to_string() }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Json(err.to_string())
    }
}
