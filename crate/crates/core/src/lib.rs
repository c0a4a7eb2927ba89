//! Learner-context toolkit: a five-dimension context graph with temporal
//! decay, salience-ranked compression, controlled disclosure, and canonical
//! content-addressed storage.

pub mod config;
pub mod fixtures;
pub mod model;
pub mod prioritize;
pub mod privacy;
pub mod store;
pub mod temporal;

pub use config::LcConfig;
