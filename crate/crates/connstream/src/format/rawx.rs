//! `.rawx` recordings: a JSON sidecar `<name>.json` plus `<name>.f32`, a
//! little-endian `f32` payload in sample-major order (sample `s`, channel
//! `c` at byte `(s * n_channels + c) * 4`).

use std::fs;
use std::path::{Path, PathBuf};

use connstream_core::preprocess::Block;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub n_channels: usize,
    pub sfreq: f64,
    pub channels: Vec<String>,
    pub trigger_channels: Vec<usize>,
    pub unit: String,
    /// Sensor positions in meters, one per channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 3]>>,
}

impl RawHeader {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::format("recording header", msg));
        if self.n_channels == 0 {
            return bad("n_channels must be positive".into());
        }
        if !(self.sfreq > 0.0 && self.sfreq.is_finite()) {
            return bad(format!("sfreq must be positive, got {}", self.sfreq));
        }
        if self.channels.len() != self.n_channels {
            return bad(format!("{} channel names for {} channels", self.channels.len(), self.n_channels));
        }
        if let Some(&c) = self.trigger_channels.iter().find(|&&c| c >= self.n_channels) {
            return bad(format!("trigger channel {c} out of range"));
        }
        if self.positions.as_ref().is_some_and(|p| p.len() != self.n_channels) {
            return bad("one position per channel required".into());
        }
        Ok(())
    }

    /// Channels that are not trigger channels, in order.
    pub fn data_channels(&self) -> Vec<usize> {
        (0..self.n_channels).filter(|c| !self.trigger_channels.contains(c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub header: RawHeader,
    /// Interleaved samples, `n_samples * n_channels` values.
    data: Vec<f32>,
    /// Bytes after the last complete sample in the payload file.
    pub trailing_bytes: usize,
}

/// Sidecar and payload paths for `path`, which may name either file, the
/// `.rawx` pseudo-file or the bare stem.
pub fn paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "f32" | "rawx") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("json"), with("f32"))
}

impl RawRecording {
    pub fn new(header: RawHeader, data: Vec<f32>) -> Result<Self> {
        header.validate()?;
        if data.len() % header.n_channels != 0 {
            return Err(Error::format(
                "recording",
                format!("{} values do not divide into {} channels", data.len(), header.n_channels),
            ));
        }
        Ok(Self {
            header,
            data,
            trailing_bytes: 0,
        })
    }

    /// Builds a recording from channel-major rows.
    pub fn from_rows(header: RawHeader, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != header.n_channels {
            return Err(Error::format("recording", "one row per channel required"));
        }
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::format("recording", "rows differ in length"));
        }
        let mut data = Vec::with_capacity(n * rows.len());
        for s in 0..n {
            data.extend(rows.iter().map(|r| r[s] as f32));
        }
        Self::new(header, data)
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.header.n_channels
    }

    pub fn sample(&self, s: usize, c: usize) -> f32 {
        self.data[s * self.header.n_channels + c]
    }

    pub fn interleaved(&self) -> &[f32] {
        &self.data
    }

    /// Samples `[start, start + len)` (clamped to the recording) as a block.
    pub fn block(&self, start: usize, len: usize) -> Block {
        let n = self.header.n_channels;
        let end = (start + len).min(self.n_samples());
        let len = end.saturating_sub(start);
        let mut out = vec![0.0; n * len];
        for k in 0..len {
            let frame = &self.data[(start + k) * n..(start + k + 1) * n];
            for (c, &v) in frame.iter().enumerate() {
                out[c * len + k] = v as f64;
            }
        }
        Block::new(out, n, start as u64).expect("block layout")
    }

    /// One channel as `f64`.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.n_samples()).map(|s| self.sample(s, c) as f64).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (json, payload) = paths(path);
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let header: RawHeader =
            serde_json::from_str(&text).map_err(|e| Error::format("recording header", e.to_string()))?;
        header.validate()?;
        let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
        let frame = header.n_channels * 4;
        let complete = bytes.len() / frame * frame;
        let data = bytes[..complete]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Self {
            header,
            data,
            trailing_bytes: bytes.len() - complete,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let (json, payload) = paths(path);
        if let Some(dir) = json.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(&self.header).map_err(|e| Error::format("recording header", e.to_string()))?;
        fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&payload, bytes).map_err(|e| Error::io(&payload, e))
    }
}
