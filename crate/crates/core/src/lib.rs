pub mod allocator;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod difficulty;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod executor;
pub mod harness;
pub mod io;
pub mod numerics;
pub mod optimizer;
pub mod router;
pub mod simulation;
mod transport;

pub use engine::{Engine, EngineShape, PreparedQuery};
pub use error::{Error, Result};
