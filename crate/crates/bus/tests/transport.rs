//! Socket transport, handshake, registry, and timeout behaviour.

use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use uam_bus::registry::{ComponentDescriptor, Registry};
use uam_bus::server::{serve, Handler};
use uam_bus::transport::HandshakeInfo;
use uam_bus::{schema_fingerprint, BusError, Doc, Node};

fn fingerprint() -> String {
    schema_fingerprint(&["echo", "payload"])
}

struct TestServer {
    address: String,
    shutdown: Arc<AtomicBool>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl TestServer {
    fn spawn(name: &str, fp: String, handler: Handler) -> TestServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let address = listener.local_addr().unwrap().to_string();
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&shutdown);
        let info = HandshakeInfo::new(fp, name);
        let thread = std::thread::spawn(move || {
            let _ = serve(listener, info, handler, flag);
        });
        TestServer {
            address,
            shutdown,
            thread: Some(thread),
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn echo_handler() -> Handler {
    Arc::new(|req: &Doc| Ok(req.clone()))
}

fn sample_request() -> Doc {
    Doc::new(
        Node::new("echo")
            .child(Node::new("payload").number(9.7313671))
            .child(Node::new("payload2").text("hello & goodbye")),
    )
    .unwrap()
}

#[test]
fn echo_endpoint_returns_request() {
    let server = TestServer::spawn("echo", fingerprint(), echo_handler());
    let registry = Registry::new(
        HandshakeInfo::new(fingerprint(), "abs-core"),
        vec!["echo-stage".to_string()],
    );
    registry
        .register_remote(ComponentDescriptor::remote(
            "echo-stage",
            "echo-1",
            &server.address,
        ))
        .unwrap();
    let endpoint = &registry.endpoints("echo-stage").unwrap()[0];
    let request = sample_request();
    let response = endpoint.invoke(&request).unwrap();
    assert_eq!(response, request);
}

#[test]
fn in_process_and_remote_responses_are_byte_identical() {
    let handler: Handler = Arc::new(|req: &Doc| {
        let value = req
            .root()
            .find("payload")
            .and_then(|n| n.as_number())
            .unwrap_or(0.0);
        Doc::new(Node::new("result").child(Node::new("doubled").number(value * 2.0)))
            .map_err(|e| e.to_string())
    });

    let server = TestServer::spawn("doubler", fingerprint(), Arc::clone(&handler));
    let registry = Registry::new(
        HandshakeInfo::new(fingerprint(), "abs-core"),
        vec!["double".to_string()],
    );
    registry
        .register_in_process(
            ComponentDescriptor::in_process("double", "local"),
            handler,
        )
        .unwrap();
    registry
        .register_remote(ComponentDescriptor::remote(
            "double",
            "remote",
            &server.address,
        ))
        .unwrap();

    let request = sample_request();
    let endpoints = registry.endpoints("double").unwrap();
    let local = endpoints[0].invoke(&request).unwrap();
    let remote = endpoints[1].invoke(&request).unwrap();
    assert_eq!(local.encode(), remote.encode());
}

#[test]
fn sleepy_endpoint_times_out_near_configured_duration() {
    let handler: Handler = Arc::new(|req: &Doc| {
        std::thread::sleep(Duration::from_millis(3000));
        Ok(req.clone())
    });
    let server = TestServer::spawn("sleepy", fingerprint(), handler);
    let registry = Registry::new(
        HandshakeInfo::new(fingerprint(), "abs-core"),
        vec!["sleepy".to_string()],
    );
    let timeout = Duration::from_millis(1000);
    registry
        .register_remote(
            ComponentDescriptor::remote("sleepy", "sleepy-1", &server.address)
                .with_timeout(timeout),
        )
        .unwrap();
    let endpoint = &registry.endpoints("sleepy").unwrap()[0];
    let started = Instant::now();
    let err = endpoint.invoke(&sample_request()).unwrap_err();
    let elapsed = started.elapsed();
    assert!(matches!(err, BusError::EndpointTimeout { .. }), "{err:?}");
    assert!(
        elapsed >= Duration::from_millis(900) && elapsed <= Duration::from_millis(1100),
        "timeout fired after {elapsed:?}, expected ~1000 ms +/- 10%"
    );
}

#[test]
fn mismatched_fingerprint_fails_handshake() {
    let server = TestServer::spawn("echo", schema_fingerprint(&["other"]), echo_handler());
    let registry = Registry::new(
        HandshakeInfo::new(fingerprint(), "abs-core"),
        vec!["echo-stage".to_string()],
    );
    let err = registry
        .register_remote(ComponentDescriptor::remote(
            "echo-stage",
            "echo-1",
            &server.address,
        ))
        .unwrap_err();
    assert!(matches!(err, BusError::Handshake { .. }), "{err:?}");
}

#[test]
fn registry_rules() {
    let registry = Registry::new(
        HandshakeInfo::new(fingerprint(), "abs-core"),
        vec!["stage-a".to_string()],
    );

    // Unknown stage rejected.
    let err = registry
        .register_in_process(ComponentDescriptor::in_process("nope", "x"), echo_handler())
        .unwrap_err();
    assert!(matches!(err, BusError::Registration(_)));

    // Duplicate (stage, name) rejected.
    let handle = registry
        .register_in_process(ComponentDescriptor::in_process("stage-a", "x"), echo_handler())
        .unwrap();
    let err = registry
        .register_in_process(ComponentDescriptor::in_process("stage-a", "x"), echo_handler())
        .unwrap_err();
    assert!(matches!(err, BusError::Registration(_)));

    // Eight endpoints for one stage form a fan-out pool of eight.
    for i in 0..8 {
        registry
            .register_in_process(
                ComponentDescriptor::in_process("stage-a", format!("inst-{i}")),
                echo_handler(),
            )
            .unwrap();
    }
    assert_eq!(registry.endpoints("stage-a").unwrap().len(), 9);

    // Re-registering after deregistration succeeds.
    registry.deregister(&handle).unwrap();
    registry
        .register_in_process(ComponentDescriptor::in_process("stage-a", "x"), echo_handler())
        .unwrap();
}

#[test]
fn permuting_invocations_permutes_responses_identically() {
    // A pure endpoint holds no hidden cross-invocation state: the response
    // to a request is the same wherever it sits in the call sequence.
    let handler: Handler = Arc::new(|req: &Doc| {
        let v = req.root().find("payload").and_then(|n| n.as_number()).unwrap_or(0.0);
        Doc::new(Node::new("result").child(Node::new("square").number(v * v)))
            .map_err(|e| e.to_string())
    });
    let server = TestServer::spawn("square", fingerprint(), handler);
    let registry = Registry::new(
        HandshakeInfo::new(fingerprint(), "abs-core"),
        vec!["square".to_string()],
    );
    registry
        .register_remote(ComponentDescriptor::remote("square", "sq", &server.address))
        .unwrap();
    let endpoint = &registry.endpoints("square").unwrap()[0];

    let request = |v: f64| {
        Doc::new(Node::new("q").child(Node::new("payload").number(v))).unwrap()
    };
    let forward: Vec<Vec<u8>> = (0..8)
        .map(|i| endpoint.invoke(&request(i as f64)).unwrap().encode())
        .collect();
    let backward: Vec<Vec<u8>> = (0..8)
        .rev()
        .map(|i| endpoint.invoke(&request(i as f64)).unwrap().encode())
        .collect();
    for (i, fwd) in forward.iter().enumerate() {
        assert_eq!(*fwd, backward[7 - i]);
    }
}
