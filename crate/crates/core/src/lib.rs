//! Non-crossing multiple quantile regression: linear-programming fits, joint
//! constrained fits, gradient-trained composite models, post-hoc monotonization
//! and growth-percentile scoring.

pub mod bench;
pub mod cjqr;
pub mod data;
pub mod error;
pub mod isotonize;
pub mod lp;
pub mod model;
pub mod mqgd;
pub mod qr;
pub mod sgp;

pub use data::{load_csv, example_table, Dataset, NumericTable, TauGrid};
pub use error::{Error, Result};
pub use isotonize::Correction;
pub use model::{Method, QuantileFunction, QuantileModel, QuantileSheet};
pub use sgp::Policy;
