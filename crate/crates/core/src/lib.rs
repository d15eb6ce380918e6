//! Manhattan room layout recovery from equirectangular edge and corner
//! probability maps, plus the evaluation metrics used to score it.

pub mod corpus;
pub mod error;
pub mod geom2d;
pub mod lines;
pub mod maps;
pub mod metrics;
pub mod pipeline;
pub mod room;
pub mod solver;
pub mod sphere;
pub mod synth;

pub use error::{Error, Result};
