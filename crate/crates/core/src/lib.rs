//! Design-space exploration for DNN training accelerators.
//!
//! The pipeline runs bottom-up: a forward operator graph is expanded into a
//! training graph ([`graph`]), costed for a core dimensionality ([`cost`]),
//! scheduled to pick core counts ([`sched`], [`ilp`]), searched over core
//! dimensions ([`search`]) and finally composed into pipeline-parallel plans
//! ([`pipeline`]).

pub mod arch;
pub mod cost;
pub mod graph;
pub mod ilp;
pub mod metric;
pub mod par;
pub mod pipeline;
pub mod sched;
pub mod search;
