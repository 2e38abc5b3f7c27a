//! Learned P-frame compression with a per-pixel mode map.

pub mod tensor;
pub mod entropy;
pub mod metrics;
pub mod model;
pub mod pipeline;
