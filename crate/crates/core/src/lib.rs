pub mod budget;
pub mod dominance;
pub mod error;
pub mod lab;
pub mod lp;
pub mod optimizer;
pub mod quadrature;
pub mod replica;
pub mod regularizer;
pub mod returns;
pub mod risk;
pub mod rng;

pub use error::{Error, Result};
