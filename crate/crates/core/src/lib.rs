pub mod admm;
pub mod analysis;
pub mod bench;
pub mod conic;
pub mod error;
pub mod lifting;
pub mod linalg;
pub mod model;
mod serde_mat;

pub use error::{Error, Result, Violation};
