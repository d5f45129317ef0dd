pub mod causal;
pub mod discovery;
pub mod enrichment;
pub mod eventlog;
pub mod graph;
pub mod promptsynth;
pub mod value;
pub mod xai;
