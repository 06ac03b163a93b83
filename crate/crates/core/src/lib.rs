//! Latent Dirichlet allocation with parameter recovery from Gibbs transition probabilities.

pub mod corpus;
pub mod cvb0;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod model;
pub mod oracle;
pub mod priorlda;
pub mod sampler;
pub mod synthetic;

pub use error::{Error, Result};
