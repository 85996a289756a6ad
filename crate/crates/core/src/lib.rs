pub mod autodiff;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod recurrent;
pub mod seq2seq;
pub mod strategies;
pub mod tcn;
pub mod training;

pub use error::{Error, Result};
