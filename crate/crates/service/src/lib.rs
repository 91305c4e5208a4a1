//! Session server for interactive latent-space photo editing.

pub mod api;
pub mod config;
pub mod error;
pub mod session;
pub mod store;

pub use api::{router, AppState};
pub use config::{ServiceConfig, Settings};
pub use error::{ApiError, ErrorBody, Result};
pub use session::{FrameMessage, HistoryEntry, Session};
pub use store::SessionStore;
