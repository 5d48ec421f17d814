//! Daily oncology digest pipeline: chart retrieval, clinical summaries,
//! trial screening and digest delivery.

pub mod agent;
pub mod clinical_rules;
pub mod digest;
pub mod domain;
pub mod fixtures;
pub mod ehr;
pub mod matcher;
pub mod orchestrator;
pub mod parser;
pub mod registry;
