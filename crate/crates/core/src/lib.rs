pub mod cache;
pub mod embed;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod remote;
pub mod semantic;
