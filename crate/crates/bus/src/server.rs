//! Serving side: wraps a document handler as a socket endpoint.

use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::doc::{Doc, Node};
use crate::error::BusError;
use crate::transport::{read_frame, write_frame, HandshakeInfo};

/// A stateless request handler: one response document per request document.
pub type Handler = Arc<dyn Fn(&Doc) -> Result<Doc, String> + Send + Sync>;

/// Serves `handler` on `listener` until `shutdown` is set. Each connection
/// gets its own thread; a connection serves one request at a time.
pub fn serve(
    listener: TcpListener,
    info: HandshakeInfo,
    handler: Handler,
    shutdown: Arc<AtomicBool>,
) -> std::io::Result<()> {
    listener.set_nonblocking(true)?;
    let mut workers = Vec::new();
    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let info = info.clone();
                let handler = Arc::clone(&handler);
                let shutdown = Arc::clone(&shutdown);
                workers.push(std::thread::spawn(move || {
                    let _ = serve_connection(stream, &info, &handler, &shutdown);
                }));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(e),
        }
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

fn serve_connection(
    mut stream: TcpStream,
    info: &HandshakeInfo,
    handler: &Handler,
    shutdown: &AtomicBool,
) -> Result<(), BusError> {
    stream.set_nodelay(true).ok();
    // Handshake: read the client's announcement, answer with ours, verify.
    let hello = read_frame(&mut stream).map_err(|e| BusError::Handshake {
        peer: "client".into(),
        message: e.to_string(),
    })?;
    let peer = HandshakeInfo::from_doc(&Doc::decode(&hello)?)?;
    write_frame(&mut stream, &info.to_doc().encode()).map_err(|e| BusError::Handshake {
        peer: "client".into(),
        message: e.to_string(),
    })?;
    info.check_compatible(&peer, "client")?;

    // Poll for shutdown between requests.
    stream
        .set_read_timeout(Some(Duration::from_millis(100)))
        .ok();
    loop {
        if shutdown.load(Ordering::Relaxed) {
            return Ok(());
        }
        let payload = match read_frame(&mut stream) {
            Ok(p) => p,
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
            {
                continue;
            }
            Err(_) => return Ok(()), // connection closed
        };
        let response = match Doc::decode(&payload) {
            Ok(request) => match handler(&request) {
                Ok(doc) => doc,
                Err(message) => error_doc(&message),
            },
            Err(e) => error_doc(&e.to_string()),
        };
        write_frame(&mut stream, &response.encode()).map_err(|e| {
            BusError::EndpointUnavailable {
                endpoint: "client".into(),
                message: e.to_string(),
            }
        })?;
    }
}

fn error_doc(message: &str) -> Doc {
    Doc::new(Node::new("error").child(Node::new("message").text(message)))
        .expect("error doc is always valid")
}
