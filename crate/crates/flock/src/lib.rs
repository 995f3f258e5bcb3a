//! Semantic SQL engine: provider clients, the batching runtime, catalog
//! persistence and the HTTP service.

pub mod ask;
pub mod catalog_store;
pub mod csv_load;
pub mod provider;
pub mod runtime;
pub mod service;
pub mod session;
