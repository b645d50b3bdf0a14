//! Survey-weighted mixture-of-unigrams topic models.
//!
//! The crate covers ingestion ([`corpus`]), the flat and hierarchical
//! models ([`model`], [`hier`]), a Hamiltonian Monte Carlo engine
//! ([`inference`]), posterior post-processing ([`posterior`]) and a
//! simulation harness for informative sampling designs ([`simstudy`]).
//! Models are looked up by name through [`registry`].

pub mod corpus;
pub mod error;
pub mod hier;
pub mod inference;
pub mod model;
pub mod posterior;
pub mod registry;
pub mod simplex;
pub mod simstudy;

pub use error::{Error, ErrorKind, Result};
