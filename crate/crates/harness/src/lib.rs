//! Container format, end-to-end pipeline, video I/O, BD-rate and the
//! experiment runners behind the `sit` command line tool.

pub mod bdrate;
pub mod container;
pub mod error;
pub mod experiments;
pub mod io;
pub mod pipeline;

pub use error::{HarnessError, Result};
