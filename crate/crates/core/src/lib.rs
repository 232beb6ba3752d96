pub mod autodiff;
pub mod data;
pub mod error;
pub mod init;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod trainer;
pub mod xp;

pub use error::{Error, Result};
