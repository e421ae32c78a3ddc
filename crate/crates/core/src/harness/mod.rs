//! Two-server delegation harness: wire format, scripted servers, transports
//! and reproducible scenarios.

pub mod scenario;
pub mod server;
pub mod transport;
pub mod wire;

pub use scenario::{run_scenario, run_scenario_with, Execution, Outcome, Protocol, ScenarioConfig, ScenarioReport, TransportKind};
pub use server::{BitPolicy, Scope, ServerBehavior, ServerSpec};
pub use transport::{serve, Endpoint, RemoteServers, ServerHandle, TransportError};
