//! Dynamic operational memory of models and instances.
//!
//! The crate is organized around a mutable [`kernel::MemoryGraph`] of typed
//! elements and associations. On top of it sit executable methods
//! ([`method`]), instance/class abstraction ([`abstraction`]), consolidation
//! dynamics and event-class induction ([`consolidation`]), an episode DSL
//! with replay ([`story`]), coarse-to-fine planning ([`planner`]), and a
//! bounded working-memory focus set ([`attention`]).
//!
//! Mutating operations take `&mut MemoryGraph` (single writer); queries take
//! `&MemoryGraph` and may run concurrently on a snapshot.

pub mod abstraction;
pub mod attention;
pub mod consolidation;
pub mod kernel;
pub mod method;
pub mod planner;
pub mod snapshot;
pub mod story;

pub use kernel::{
    AssociationEdge, AttributeBinding, EdgeId, EdgeKind, Element, ElementId, ElementKind,
    GraphConfig, KernelError, MemoryGraph, Stats,
};
