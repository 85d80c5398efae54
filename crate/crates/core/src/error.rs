use thiserror::Error;

/// Errors raised by the reachability engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The system or run configuration is malformed or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown action `{0}`")]
    UnknownAction(String),

    /// An argument lies outside the operation's domain (negative radius, empty set, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("numeric error: {0}")]
    NonFinite(String),

    /// A configured exploration budget was exhausted.
    #[error("budget exceeded: {what} (limit {limit})")]
    Budget { what: &'static str, limit: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
