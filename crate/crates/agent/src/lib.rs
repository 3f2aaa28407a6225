//! Task analysis and code generation: the chat-model gateway and the
//! pipeline that turns an instruction into a policy bundle.

pub mod action;
pub mod context;
pub mod feedback;
pub mod gateway;
pub mod graph;
pub mod model;
pub mod parse;
pub mod pipeline;
pub mod prompt;
pub mod provenance;
