pub mod cli;
pub mod compositor;
pub mod dataset;
pub mod inference;
pub mod ingest;
pub mod letter;
pub mod pipeline;
pub mod pool;
pub mod prompt;
pub mod sampler;
pub mod scoring;
pub mod synthetic;
