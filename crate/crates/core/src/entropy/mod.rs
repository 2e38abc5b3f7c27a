//! Quantization, the Laplace rate model, integer CDF tables, the range coder
//! and the `.mdn` container.

pub mod bitstream;
pub mod cdf;
pub mod oracle;
mod quantize;
pub mod range;

pub use bitstream::{Bitstream, Header};
pub use cdf::{CdfTable, LaplaceTable, B_MAX, B_MIN, PRECISION, SYMBOL_BOUND};
pub use oracle::{empirical_entropies, Entropies};
pub use quantize::{quantize_infer, quantize_train, rate_bits, scale_from_raw, QuantizedLatents};
pub use range::{RangeDecoder, RangeEncoder};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("quantized value {value} outside [-{bound}, {bound}]")]
    OutOfRange { value: i64, bound: i32 },
    #[error("invalid cdf table: {0}")]
    InvalidTable(String),
    #[error("range-coded stream is truncated or has trailing bytes")]
    Truncated,
    #[error("corrupt range-coded stream: {0}")]
    Corrupt(String),
    #[error("bitstream: {0}")]
    Bitstream(String),
    #[error("{0}")]
    Oracle(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
