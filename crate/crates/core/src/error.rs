//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Everything that can go wrong in the toolkit's core operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A matrix contains NaN or infinite entries where finite values are required.
    InvalidMatrix(String),
    /// Matrix or vector dimensions do not line up.
    Shape(String),
    /// A requested rank is outside `1..=r`.
    Rank { requested: usize, max: usize },
    /// The SVD sweep budget was exhausted before the off-diagonal mass vanished.
    Convergence { sweeps: usize },
    /// A layer index is out of range or addresses the wrong layer kind.
    Layer(String),
    /// An operation was handed an empty batch of samples.
    EmptyBatch,
    /// Training was handed an empty dataset.
    EmptyDataset,
    /// A scoring target does not address a factor of a factored layer.
    Target(String),
    /// A sparsification strategy was invoked without its required context.
    Context(String),
    /// A sparsify plan is inconsistent with the layer it is applied to.
    Plan(String),
    /// Dataset construction or sampling is infeasible with the given parameters.
    Data(String),
    /// An invalid configuration value.
    Config(String),
    /// A class label or group tag is out of range.
    Label(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidMatrix(msg) => write!(f, "invalid matrix: {msg}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Rank { requested, max } => {
                write!(f, "rank {requested} out of range 1..={max}")
            }
            Error::Convergence { sweeps } => {
                write!(f, "SVD did not converge within {sweeps} sweeps")
            }
            Error::Layer(msg) => write!(f, "layer error: {msg}"),
            Error::EmptyBatch => write!(f, "empty batch"),
            Error::EmptyDataset => write!(f, "empty dataset"),
            Error::Target(msg) => write!(f, "scoring target error: {msg}"),
            Error::Context(msg) => write!(f, "missing strategy context: {msg}"),
            Error::Plan(msg) => write!(f, "invalid sparsify plan: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Label(msg) => write!(f, "label error: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
