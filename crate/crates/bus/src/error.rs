use thiserror::Error;

/// Errors raised by the interchange document layer and the transports.
#[derive(Debug, Error)]
pub enum BusError {
    /// The octet sequence is not a well-formed document.
    #[error("decode error at byte {offset}: {message}")]
    Decode { offset: usize, message: String },

    /// The document is well-formed but violates a schema invariant.
    #[error("schema error: {0}")]
    Schema(String),

    /// Endpoint registration rejected.
    #[error("registration error: {0}")]
    Registration(String),

    /// The remote peer did not answer the handshake, or answered with an
    /// incompatible protocol version / schema fingerprint.
    #[error("handshake failed with {peer}: {message}")]
    Handshake { peer: String, message: String },

    /// The endpoint did not answer within its configured timeout.
    #[error("endpoint '{endpoint}' timed out after {timeout_ms} ms")]
    EndpointTimeout { endpoint: String, timeout_ms: u64 },

    /// Connection refused, reset, or closed mid-exchange.
    #[error("endpoint '{endpoint}' unavailable: {message}")]
    EndpointUnavailable { endpoint: String, message: String },

    /// The endpoint answered with an application-level error document.
    #[error("endpoint '{endpoint}' reported: {message}")]
    Endpoint { endpoint: String, message: String },

    /// No endpoint is registered for the requested stage.
    #[error("no endpoint registered for stage '{0}'")]
    NoEndpoint(String),
}

impl BusError {
    pub fn decode(offset: usize, message: impl Into<String>) -> Self {
        BusError::Decode {
            offset,
            message: message.into(),
        }
    }

    pub fn schema(message: impl Into<String>) -> Self {
        BusError::Schema(message.into())
    }
}
