use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use windflow_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("raster {height}x{width} exceeds the {max} pixel limit")]
    TooLarge { height: usize, width: usize, max: usize },
    #[error("{0}")]
    Unprocessable(String),
    #[error("request exceeded the {0} s timeout")]
    Timeout(u64),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(CoreError),
}

impl From<CoreError> for ServeError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidScene(_) | CoreError::CorruptContainer(_) | CoreError::Json(_) => Self::BadRequest(e.to_string()),
            CoreError::UnsupportedAngle(_)
            | CoreError::UnnormalizedRose(_)
            | CoreError::InvalidConfig(_)
            | CoreError::CriteriaShapeMismatch(_)
            | CoreError::SpecMismatch(_)
            | CoreError::InvalidGrid(_)
            | CoreError::UnknownName { .. } => Self::Unprocessable(e.to_string()),
            other => Self::Core(other),
        }
    }
}

impl ServeError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::UnknownModel(_) => StatusCode::NOT_FOUND,
            Self::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            Self::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
            Self::Config(_) | Self::Internal(_) | Self::Io(_) | Self::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServeError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string(), "status": status.as_u16() }))).into_response()
    }
}
