//! Black-box component integration fabric.
//!
//! Components are pure document processors: a request document goes in, a
//! response document comes out, and no hidden cross-invocation state may
//! affect the result. The bus provides the document format ([`Doc`]), an
//! endpoint registry keyed by pipeline stage, and two observably equivalent
//! transports: direct in-process calls and a length-prefixed TCP protocol
//! with a version/fingerprint handshake.

pub mod doc;
pub mod error;
pub mod registry;
pub mod server;
pub mod transport;

pub use doc::{Doc, Node, Payload};
pub use error::BusError;
pub use registry::{ComponentDescriptor, Endpoint, InProcessFn, Registry, RegistryHandle, Transport};
pub use server::{serve, Handler};
pub use transport::{HandshakeInfo, RemoteConnection, PROTOCOL_VERSION};

/// FNV-1a based fingerprint over a schema vocabulary. Both ends of a
/// connection must agree on it before any dispatch.
pub fn schema_fingerprint(vocabulary: &[&str]) -> String {
    let mut sorted: Vec<&str> = vocabulary.to_vec();
    sorted.sort_unstable();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for word in sorted {
        for byte in word.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash ^= u64::from(b'\n');
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
