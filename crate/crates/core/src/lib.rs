//! Engine for knowledge-graph grounded medical dialogue: extracts concepts
//! and states from patient/doctor conversations, maintains a patient-centric
//! graph linked to an external medical knowledge graph, generates
//! neighborhood and path-based prompts from multiple knowledge sources, and
//! produces and evaluates medication recommendations.
//!
//! Every external call goes through a record/replay cache, so the entire
//! pipeline runs deterministically offline.

pub mod clients;
pub mod config;
pub mod dialogue;
pub mod error;
pub mod eval;
pub mod extract;
pub mod inference;
pub mod kg;
pub mod patient_graph;
pub mod pipeline;
pub mod prompts;

pub use error::{Error, Result};
