//! Desk-scale deployment: policy bundles fanned out to per-robot runtime
//! processes, supervised over a length-prefixed message protocol.

pub mod controller;
pub mod host;
pub mod launcher;
pub mod link;
pub mod local;
pub mod node_cli;
pub mod plan;
pub mod runtime;
pub mod transport;
pub mod wire;

pub use controller::DeployedController;
pub use host::{Deployment, NodeDescriptor, NodeState, FAULT_LIMIT, TICK_DEADLINE};
pub use launcher::Launcher;
pub use local::LocalRuntime;
pub use plan::{DeployPlan, Step};
