//! Recording formats, the threaded streaming pipeline, network publishing
//! over TCP and WebSocket, simulation, benchmarks and the command line,
//! built on `connstream-core`.

pub mod bench;
pub mod config;
pub mod control;
pub mod convergence;
pub mod error;
pub mod fft;
pub mod format;
pub mod frame;
pub mod pipeline;
pub mod replay;
pub mod server;
pub mod simulate;

pub use connstream_core as core;
pub use error::{Error, Result};
