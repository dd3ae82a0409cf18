pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod geom;
pub mod infer;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod render;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
