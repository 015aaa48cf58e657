//! Resource-management algorithms as compositions of generic `select` and
//! `organize` operations over procedure sets and resource sets, with a
//! deterministic single-processor simulator and a binding-order validator.

pub mod allocators;
pub mod binding;
pub mod combinators;
pub mod domain;
pub mod oracle;
pub mod schedulers;
pub mod sim;
pub mod workload;
