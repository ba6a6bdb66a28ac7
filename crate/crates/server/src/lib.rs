//! Service layer for the driftmap engine: HTTP sessions, an event stream and remote labels.

pub mod api;
pub mod label_http;
pub mod probe;

pub use api::{router, ApiError, AppState, SessionCreated, StreamEvent};
pub use label_http::{client_for, HttpLabelClient};
