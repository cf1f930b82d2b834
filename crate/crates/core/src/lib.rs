pub mod energy;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod levelset;
pub mod methods;
pub mod metrics;
pub mod models;
pub mod photogeom;
pub mod pose;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
