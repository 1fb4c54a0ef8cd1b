use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::{json, Value};

use fanout_core::weighing::WeightValidation;

#[derive(Debug)]
pub enum ServiceError {
    Core(fanout_core::Error),
    SessionNotFound(String),
    GraphNotFound(String),
    UnknownTarget(String),
    ValidationFailed { target: String, validation: Box<WeightValidation> },
    Range(String),
    BadRequest(String),
    Internal(String),
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

impl From<fanout_core::Error> for ServiceError {
    fn from(e: fanout_core::Error) -> Self {
        ServiceError::Core(e)
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub details: Value,
}

fn core_details(e: &fanout_core::Error) -> Value {
    use fanout_core::Error::*;
    match e {
        Parse { row, column, .. } => json!({ "row": row, "column": column }),
        Type { row, column, expected, found } => {
            json!({ "row": row, "column": column, "expected": expected, "found": found })
        }
        MissingAttribute { relation, attribute } | MissingOrderAttr { relation, attribute } => {
            json!({ "relation": relation, "attribute": attribute })
        }
        CycleDetected(path) => json!({ "cycle": path }),
        Disconnected(components) => json!({ "components": components }),
        CardinalityMismatch { edge, declared, observed } => {
            json!({ "edge": edge, "declared": declared, "observed": observed })
        }
        MissingWeights(targets) => json!({ "targets": targets }),
        NonPositiveProportionalValue { relation, row_id, value } => {
            json!({ "relation": relation, "row_id": row_id, "value": value })
        }
        MissingRowId { relation, row_id } | UnknownRowId { relation, row_id } => {
            json!({ "relation": relation, "row_id": row_id })
        }
        _ => Value::Null,
    }
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::SessionNotFound(_) | ServiceError::GraphNotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::ValidationFailed { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (code, message, details) = match self {
            ServiceError::Core(e) => (e.code().to_string(), e.to_string(), core_details(e)),
            ServiceError::SessionNotFound(id) => {
                ("session_not_found".into(), format!("no session `{id}`"), json!({ "id": id }))
            }
            ServiceError::GraphNotFound(id) => ("graph_not_found".into(), format!("no graph `{id}`"), json!({ "id": id })),
            ServiceError::UnknownTarget(t) => (
                "unknown_target".into(),
                format!("`{t}` is not a weighing target of this session"),
                json!({ "target": t }),
            ),
            ServiceError::ValidationFailed { target, validation } => (
                "validation_failed".into(),
                format!("weights for `{target}` do not sum to 1 in every join-key group"),
                json!({ "target": target, "validation": validation }),
            ),
            ServiceError::Range(m) => ("range_error".into(), m.clone(), Value::Null),
            ServiceError::BadRequest(m) => ("bad_request".into(), m.clone(), Value::Null),
            ServiceError::Internal(m) => ("internal".into(), m.clone(), Value::Null),
        };
        ErrorBody { code, message, details }
    }
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.body();
        write!(f, "{}: {}", b.code, b.message)
    }
}

impl std::error::Error for ServiceError {}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
