//! Co-evolved meta graph neural networks on multi-attributed heterogeneous
//! graphs, with a spatiotemporal extension, trainers for ranking and
//! forecasting, and synthetic planted-task generators.

pub mod comgnn;
pub mod datagen;
pub mod error;
pub mod hetgraph;
pub mod params;
pub mod stcomgnn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "COMGNN_THREADS";

/// Worker threads for parallel evaluation: the value of `COMGNN_THREADS`,
/// or 0 (sequential) when unset or unparsable. Results do not depend on it.
pub fn parallelism() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}
