//! Endpoint registration and lookup.
//!
//! A registry is created with the set of pipeline stage ids it serves.
//! Multiple endpoints may register per stage; their registration order is
//! the deterministic fan-out assignment order.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use crate::doc::Doc;
use crate::error::BusError;
use crate::transport::{HandshakeInfo, RemoteConnection};

/// How an endpoint is reached.
#[derive(Debug, Clone, PartialEq)]
pub enum Transport {
    InProcess,
    RemoteSocket { address: String },
}

/// Descriptor of one component endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDescriptor {
    pub name: String,
    pub stage: String,
    pub transport: Transport,
    /// Whether one invocation may carry a whole batch of items.
    pub batch_capable: bool,
    pub timeout: Duration,
}

impl ComponentDescriptor {
    pub fn in_process(stage: impl Into<String>, name: impl Into<String>) -> Self {
        ComponentDescriptor {
            name: name.into(),
            stage: stage.into(),
            transport: Transport::InProcess,
            batch_capable: true,
            timeout: Duration::from_secs(30),
        }
    }

    pub fn remote(
        stage: impl Into<String>,
        name: impl Into<String>,
        address: impl Into<String>,
    ) -> Self {
        ComponentDescriptor {
            name: name.into(),
            stage: stage.into(),
            transport: Transport::RemoteSocket {
                address: address.into(),
            },
            batch_capable: true,
            timeout: Duration::from_secs(30),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

pub type InProcessFn = Arc<dyn Fn(&Doc) -> Result<Doc, String> + Send + Sync>;

enum Backing {
    InProcess(InProcessFn),
    Remote(Mutex<RemoteConnection>),
}

/// One registered endpoint. Invocations through a remote endpoint are
/// serialized on its connection; the fan-out pool multiplexes across
/// endpoints, never across one connection.
pub struct Endpoint {
    pub descriptor: ComponentDescriptor,
    backing: Backing,
}

impl Endpoint {
    pub fn invoke(&self, request: &Doc) -> Result<Doc, BusError> {
        match &self.backing {
            Backing::InProcess(f) => f(request).map_err(|message| BusError::Endpoint {
                endpoint: self.descriptor.name.clone(),
                message,
            }),
            Backing::Remote(conn) => {
                let mut conn = conn.lock().expect("endpoint connection poisoned");
                conn.invoke(request)
            }
        }
    }
}

/// Handle returned by registration; used to deregister.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryHandle {
    stage: String,
    name: String,
}

pub struct Registry {
    handshake: HandshakeInfo,
    stages: RwLock<BTreeMap<String, Vec<Arc<Endpoint>>>>,
}

impl Registry {
    /// Creates a registry serving exactly the given stage ids.
    pub fn new(handshake: HandshakeInfo, stages: impl IntoIterator<Item = String>) -> Registry {
        let stages = stages
            .into_iter()
            .map(|s| (s, Vec::new()))
            .collect::<BTreeMap<_, _>>();
        Registry {
            handshake,
            stages: RwLock::new(stages),
        }
    }

    pub fn handshake(&self) -> &HandshakeInfo {
        &self.handshake
    }

    /// Registers an in-process endpoint backed by a document handler.
    pub fn register_in_process(
        &self,
        descriptor: ComponentDescriptor,
        handler: InProcessFn,
    ) -> Result<RegistryHandle, BusError> {
        self.register(descriptor, |_| Ok(Backing::InProcess(handler)))
    }

    /// Registers a remote endpoint; the version handshake completes here,
    /// before any dispatch can reach the endpoint.
    pub fn register_remote(
        &self,
        descriptor: ComponentDescriptor,
    ) -> Result<RegistryHandle, BusError> {
        let handshake = self.handshake.clone();
        self.register(descriptor, move |desc| {
            let address = match &desc.transport {
                Transport::RemoteSocket { address } => address.clone(),
                Transport::InProcess => {
                    return Err(BusError::Registration(
                        "register_remote requires a RemoteSocket transport".into(),
                    ))
                }
            };
            let conn = RemoteConnection::connect(&address, desc.timeout, &handshake)?;
            Ok(Backing::Remote(Mutex::new(conn)))
        })
    }

    fn register(
        &self,
        descriptor: ComponentDescriptor,
        make_backing: impl FnOnce(&ComponentDescriptor) -> Result<Backing, BusError>,
    ) -> Result<RegistryHandle, BusError> {
        let mut stages = self.stages.write().expect("registry poisoned");
        let pool = stages.get_mut(&descriptor.stage).ok_or_else(|| {
            BusError::Registration(format!("unknown stage '{}'", descriptor.stage))
        })?;
        if pool.iter().any(|e| e.descriptor.name == descriptor.name) {
            return Err(BusError::Registration(format!(
                "endpoint '{}' already registered for stage '{}'",
                descriptor.name, descriptor.stage
            )));
        }
        let backing = make_backing(&descriptor)?;
        let handle = RegistryHandle {
            stage: descriptor.stage.clone(),
            name: descriptor.name.clone(),
        };
        pool.push(Arc::new(Endpoint {
            descriptor,
            backing,
        }));
        Ok(handle)
    }

    pub fn deregister(&self, handle: &RegistryHandle) -> Result<(), BusError> {
        let mut stages = self.stages.write().expect("registry poisoned");
        let pool = stages
            .get_mut(&handle.stage)
            .ok_or_else(|| BusError::Registration(format!("unknown stage '{}'", handle.stage)))?;
        let before = pool.len();
        pool.retain(|e| e.descriptor.name != handle.name);
        if pool.len() == before {
            return Err(BusError::Registration(format!(
                "endpoint '{}' not registered for stage '{}'",
                handle.name, handle.stage
            )));
        }
        Ok(())
    }

    /// Endpoints for a stage in registration order.
    pub fn endpoints(&self, stage: &str) -> Result<Vec<Arc<Endpoint>>, BusError> {
        let stages = self.stages.read().expect("registry poisoned");
        let pool = stages
            .get(stage)
            .ok_or_else(|| BusError::NoEndpoint(stage.to_string()))?;
        if pool.is_empty() {
            return Err(BusError::NoEndpoint(stage.to_string()));
        }
        Ok(pool.clone())
    }
}
