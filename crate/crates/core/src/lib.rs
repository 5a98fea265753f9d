//! Maximum agreement linear prediction.

pub mod avar;
pub mod error;
pub mod exec;
pub mod intervals;
pub mod io;
pub mod metrics;
pub mod moments;
pub mod predictor;
pub mod resample;
pub mod simulate;

pub use error::{MalpError, Result};
pub use exec::Execution;
pub use moments::{Dataset, MomentSummary};
pub use predictor::{fit, FittedModel, LinearPredictor, PredictorKind};
