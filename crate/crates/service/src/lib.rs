//! HTTP service and operator CLI plumbing for the twinvault evidence store.

pub mod config;
pub mod http;

pub use config::ServiceConfig;
pub use http::router;
