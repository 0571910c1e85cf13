pub mod analysis;
pub mod autodiff;
pub mod cf;
pub mod checkpoint;
pub mod corpus;
pub mod dual;
pub mod error;
pub mod eval;
pub mod features;
pub mod genmodel;
pub mod nn;
pub mod par;
pub mod params;
pub mod seed;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
