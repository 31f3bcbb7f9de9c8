//! Wire protocol for remote endpoints.
//!
//! A connection is a TCP stream carrying one handshake exchange followed by
//! length-prefixed request/response pairs. Every frame is a 4-octet
//! big-endian payload length followed by the payload, which is the canonical
//! document encoding. One response per request; a connection serves one
//! request at a time.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use crate::doc::{Doc, Node};
use crate::error::BusError;

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on a single frame; guards against garbage length prefixes.
const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;

pub fn write_frame(stream: &mut impl Write, payload: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "frame too large"))?;
    stream.write_all(&len.to_be_bytes())?;
    stream.write_all(payload)?;
    stream.flush()
}

pub fn read_frame(stream: &mut impl Read) -> std::io::Result<Vec<u8>> {
    let mut len_buf = [0u8; 4];
    stream.read_exact(&mut len_buf)?;
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME_LEN {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame length {len} exceeds limit"),
        ));
    }
    let mut payload = vec![0u8; len];
    stream.read_exact(&mut payload)?;
    Ok(payload)
}

/// Identity and interface version announced during the handshake.
#[derive(Debug, Clone, PartialEq)]
pub struct HandshakeInfo {
    pub protocol_version: u32,
    pub schema_fingerprint: String,
    pub component_name: String,
}

impl HandshakeInfo {
    pub fn new(schema_fingerprint: impl Into<String>, component_name: impl Into<String>) -> Self {
        HandshakeInfo {
            protocol_version: PROTOCOL_VERSION,
            schema_fingerprint: schema_fingerprint.into(),
            component_name: component_name.into(),
        }
    }

    pub fn to_doc(&self) -> Doc {
        Doc::new(
            Node::new("handshake")
                .child(Node::new("protocolVersion").number(self.protocol_version as f64))
                .child(Node::new("schemaFingerprint").text(&self.schema_fingerprint))
                .child(Node::new("componentName").text(&self.component_name)),
        )
        .expect("handshake doc is always valid")
    }

    pub fn from_doc(doc: &Doc) -> Result<HandshakeInfo, BusError> {
        let root = doc.root();
        if root.name() != "handshake" {
            return Err(BusError::schema("expected <handshake> root"));
        }
        let version = root
            .find("protocolVersion")
            .and_then(|n| n.as_number())
            .ok_or_else(|| BusError::schema("handshake missing protocolVersion"))?;
        let fingerprint = root
            .find("schemaFingerprint")
            .and_then(|n| n.as_text())
            .ok_or_else(|| BusError::schema("handshake missing schemaFingerprint"))?;
        let name = root
            .find("componentName")
            .and_then(|n| n.as_text())
            .ok_or_else(|| BusError::schema("handshake missing componentName"))?;
        Ok(HandshakeInfo {
            protocol_version: version as u32,
            schema_fingerprint: fingerprint,
            component_name: name,
        })
    }

    pub fn check_compatible(&self, peer: &HandshakeInfo, peer_label: &str) -> Result<(), BusError> {
        if peer.protocol_version != self.protocol_version {
            return Err(BusError::Handshake {
                peer: peer_label.to_string(),
                message: format!(
                    "protocol version mismatch: ours {} theirs {}",
                    self.protocol_version, peer.protocol_version
                ),
            });
        }
        if peer.schema_fingerprint != self.schema_fingerprint {
            return Err(BusError::Handshake {
                peer: peer_label.to_string(),
                message: format!(
                    "schema fingerprint mismatch: ours {} theirs {}",
                    self.schema_fingerprint, peer.schema_fingerprint
                ),
            });
        }
        Ok(())
    }
}

/// Client side of a remote endpoint connection. Handshakes on connect and
/// then serves strict request/response exchanges.
#[derive(Debug)]
pub struct RemoteConnection {
    stream: TcpStream,
    address: String,
    timeout: Duration,
    pub peer: HandshakeInfo,
}

impl RemoteConnection {
    pub fn connect(
        address: &str,
        timeout: Duration,
        ours: &HandshakeInfo,
    ) -> Result<RemoteConnection, BusError> {
        let mut stream = TcpStream::connect(address).map_err(|e| BusError::EndpointUnavailable {
            endpoint: address.to_string(),
            message: e.to_string(),
        })?;
        stream.set_nodelay(true).ok();
        stream
            .set_read_timeout(Some(timeout))
            .map_err(|e| BusError::EndpointUnavailable {
                endpoint: address.to_string(),
                message: e.to_string(),
            })?;

        write_frame(&mut stream, &ours.to_doc().encode()).map_err(|e| {
            BusError::EndpointUnavailable {
                endpoint: address.to_string(),
                message: e.to_string(),
            }
        })?;
        let reply = read_frame(&mut stream).map_err(|e| BusError::Handshake {
            peer: address.to_string(),
            message: e.to_string(),
        })?;
        let peer = HandshakeInfo::from_doc(&Doc::decode(&reply)?)?;
        ours.check_compatible(&peer, address)?;

        Ok(RemoteConnection {
            stream,
            address: address.to_string(),
            timeout,
            peer,
        })
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn invoke(&mut self, request: &Doc) -> Result<Doc, BusError> {
        write_frame(&mut self.stream, &request.encode()).map_err(|e| {
            BusError::EndpointUnavailable {
                endpoint: self.address.clone(),
                message: e.to_string(),
            }
        })?;
        let payload = read_frame(&mut self.stream).map_err(|e| {
            if matches!(
                e.kind(),
                std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
            ) {
                BusError::EndpointTimeout {
                    endpoint: self.address.clone(),
                    timeout_ms: self.timeout.as_millis() as u64,
                }
            } else {
                BusError::EndpointUnavailable {
                    endpoint: self.address.clone(),
                    message: e.to_string(),
                }
            }
        })?;
        let doc = Doc::decode(&payload)?;
        if doc.root().name() == "error" {
            let message = doc
                .root()
                .find("message")
                .and_then(|n| n.as_text())
                .unwrap_or_else(|| "unspecified endpoint error".to_string());
            return Err(BusError::Endpoint {
                endpoint: self.address.clone(),
                message,
            });
        }
        Ok(doc)
    }
}
