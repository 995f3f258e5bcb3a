//! Allocation-only core of the flock semantic SQL engine.
//!
//! Everything in this crate is pure: it parses and binds SQL with semantic
//! extensions, executes logical plans over in-memory columnar tables, builds
//! meta-prompts, plans inference batches, fuses retriever scores and scores
//! documents with BM25. Anything that talks to a disk, a clock or a network
//! is injected through the traits in [`engine`] and [`plan`], and lives in
//! the `flock` companion crate.
#![no_std]

extern crate alloc;

pub mod batch;
pub mod catalog;
pub mod engine;
pub mod functions;
pub mod fusion;
pub mod plan;
pub mod prompt;
pub mod retrieval;
pub mod sql;
pub mod value;

pub use catalog::{Catalog, ModelResource, PromptResource, ResourceKind, ResourceRecord, Scope};
pub use engine::{Database, QueryResult, Table};
pub use plan::LogicalPlan;
pub use value::{DataType, Value};
