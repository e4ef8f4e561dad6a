//! File and wire formats.

pub mod filter_json;
pub mod fwdx;
pub mod network_json;
pub mod rawx;

pub use network_json::{from_json as network_from_json, to_json as network_to_json};
pub use rawx::{RawHeader, RawRecording};
