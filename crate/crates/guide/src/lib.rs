//! The chapters of `book/` as modules, so every snippet in the book runs as a
//! doc-test and cannot drift from the code.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tasks.md")]
pub mod tasks {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}

#[doc = include_str!("../../../book/src/deployment.md")]
pub mod deployment {}

#[doc = include_str!("../../../book/src/benchmarks.md")]
pub mod benchmarks {}
