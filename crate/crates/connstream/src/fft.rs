//! rustfft-backed transforms and backend selection by name.

use std::sync::{Arc, Mutex};

use connstream_core::fft::Direction;
use connstream_core::{BuiltinFft, FftBackend, FftPlan};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Mixed-radix transforms from rustfft. Plans are cached by the planner.
pub struct RustFft {
    planner: Mutex<FftPlanner<f64>>,
}

impl RustFft {
    pub fn new() -> Self {
        Self {
            planner: Mutex::new(FftPlanner::new()),
        }
    }
}

impl Default for RustFft {
    fn default() -> Self {
        Self::new()
    }
}

struct Plan {
    fft: Arc<dyn Fft<f64>>,
}

impl FftPlan for Plan {
    fn len(&self) -> usize {
        self.fft.len()
    }

    fn process(&self, buffer: &mut [Complex64]) {
        self.fft.process(buffer);
    }
}

impl FftBackend for RustFft {
    fn name(&self) -> &str {
        "rustfft"
    }

    fn plan(&self, len: usize, direction: Direction) -> Arc<dyn FftPlan> {
        let mut planner = self.planner.lock().unwrap_or_else(|e| e.into_inner());
        let fft = match direction {
            Direction::Forward => planner.plan_fft_forward(len),
            Direction::Inverse => planner.plan_fft_inverse(len),
        };
        Arc::new(Plan { fft })
    }
}

/// Backend for a config string: `default` and `rustfft` select rustfft,
/// `builtin` the dependency-free transforms of the core crate.
pub fn backend(name: &str) -> Result<Arc<dyn FftBackend>> {
    match name.trim().to_ascii_lowercase().as_str() {
        "default" | "rustfft" => Ok(Arc::new(RustFft::new())),
        "builtin" => Ok(Arc::new(BuiltinFft)),
        other => Err(Error::Config(format!(
            "unknown FFT backend '{other}' (expected default, rustfft or builtin)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use connstream_core::fft::fft_real;

    #[test]
    fn backends_agree() {
        let x: Vec<f64> = (0..600).map(|t| ((t * t) % 17) as f64 - 8.0).collect();
        for n in [64, 600, 97] {
            let a = fft_real(RustFft::new().plan(n, Direction::Forward).as_ref(), &x).unwrap();
            let b = fft_real(BuiltinFft.plan(n, Direction::Forward).as_ref(), &x).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn names() {
        assert_eq!(backend("Default").unwrap().name(), "rustfft");
        assert_eq!(backend("builtin").unwrap().name(), "builtin");
        assert!(backend("fftw").is_err());
    }
}
