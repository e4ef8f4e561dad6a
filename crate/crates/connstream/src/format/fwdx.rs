//! `.fwdx` matrix container for forward models and inverse operators.
//!
//! Layout: the magic `FWDX`, a little-endian `u32` header length, a UTF-8
//! JSON header, then `rows * cols` little-endian `f64` values in row-major
//! order. A forward model stores the `n_sensors × n_sources` leadfield, an
//! inverse operator its `n_sources × n_sensors` matrix.

use std::fs;
use std::path::Path;

use connstream_core::inverse::{ForwardModel, InverseOperator};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FWDX";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwdxHeader {
    pub kind: MatrixKind,
    pub rows: usize,
    pub cols: usize,
    /// Source positions in meters.
    pub positions: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<f64>,
}

pub fn encode(header: &FwdxHeader, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != header.rows * header.cols {
        return Err(Error::format("fwdx", "payload size does not match the header"));
    }
    let json = serde_json::to_vec(header).map_err(|e| Error::format("fwdx header", e.to_string()))?;
    let mut out = Vec::with_capacity(8 + json.len() + values.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(FwdxHeader, Vec<f64>)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format("fwdx", "missing FWDX magic"));
    }
    let len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let body = bytes.get(8..8 + len).ok_or_else(|| Error::format("fwdx", "header truncated"))?;
    let header: FwdxHeader =
        serde_json::from_slice(body).map_err(|e| Error::format("fwdx header", e.to_string()))?;
    let payload = &bytes[8 + len..];
    let expected = header.rows * header.cols * 8;
    if payload.len() != expected {
        return Err(Error::format(
            "fwdx",
            format!("payload has {} bytes, header implies {expected}", payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

fn read(path: &Path) -> Result<(FwdxHeader, Vec<f64>)> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn write(path: &Path, header: &FwdxHeader, values: &[f64]) -> Result<()> {
    fs::write(path, encode(header, values)?).map_err(|e| Error::io(path, e))
}

pub fn read_forward(path: &Path) -> Result<ForwardModel> {
    let (h, values) = read(path)?;
    if h.kind != MatrixKind::Forward {
        return Err(Error::format("fwdx", format!("{} holds an inverse operator", path.display())));
    }
    Ok(ForwardModel::new(values, h.rows, h.cols, h.positions, h.labels)?)
}

pub fn write_forward(path: &Path, fwd: &ForwardModel) -> Result<()> {
    let header = FwdxHeader {
        kind: MatrixKind::Forward,
        rows: fwd.n_sensors(),
        cols: fwd.n_sources(),
        positions: fwd.positions.clone(),
        labels: fwd.labels.clone(),
        lambda: None,
        snr: None,
    };
    write(path, &header, fwd.gain())
}

pub fn read_inverse(path: &Path) -> Result<InverseOperator> {
    let (h, values) = read(path)?;
    if h.kind != MatrixKind::Inverse {
        return Err(Error::format("fwdx", format!("{} holds a forward model", path.display())));
    }
    let mut op = InverseOperator::from_matrix(values, h.rows, h.cols, h.positions)?;
    op.lambda = h.lambda.unwrap_or(0.0);
    op.snr_assumed = h.snr.unwrap_or(f64::INFINITY);
    Ok(op)
}

pub fn write_inverse(path: &Path, op: &InverseOperator) -> Result<()> {
    let header = FwdxHeader {
        kind: MatrixKind::Inverse,
        rows: op.n_sources(),
        cols: op.n_sensors(),
        positions: op.positions.clone(),
        labels: None,
        lambda: Some(op.lambda),
        snr: op.snr_assumed.is_finite().then_some(op.snr_assumed),
    };
    write(path, &header, op.matrix())
}
