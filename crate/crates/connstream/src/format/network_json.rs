//! Canonical network JSON.
//!
//! ```text
//! {"metric":"COH","band":{"lo_bin":18,"hi_bin":30,"bin_hz":1.0},"n_trials":200,
//!  "normalized":true,"nodes":[{"id":0,"pos":[0.0,0.0,0.0]}],
//!  "edges":[{"i":0,"j":1,"w":0.5,"w_im":null,"lag":null}]}
//! ```
//!
//! Keys always appear in this order and optional edge fields are written as
//! `null`, so serializing the same network twice gives identical bytes.
//! Floats use the shortest representation that parses back exactly.

use connstream_core::{ConnectivityNetwork, Edge, FrequencyBand, MetricId, Node};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct BandDoc {
    lo_bin: usize,
    hi_bin: usize,
    bin_hz: f64,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: u32,
    pos: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    i: u32,
    j: u32,
    w: f64,
    #[serde(default)]
    w_im: Option<f64>,
    #[serde(default)]
    lag: Option<i64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    metric: String,
    band: BandDoc,
    n_trials: usize,
    normalized: bool,
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

fn doc(net: &ConnectivityNetwork) -> Result<NetworkDoc> {
    let finite = net
        .edges
        .iter()
        .all(|e| e.weight.is_finite() && e.weight_im.is_none_or(f64::is_finite))
        && net.nodes.iter().all(|n| n.pos.iter().all(|v| v.is_finite()))
        && net.band.bin_hz.is_finite();
    if !finite {
        return Err(Error::format("network", "non-finite value cannot be serialized"));
    }
    Ok(NetworkDoc {
        metric: net.metric.as_str().to_string(),
        band: BandDoc {
            lo_bin: net.band.lo_bin,
            hi_bin: net.band.hi_bin,
            bin_hz: net.band.bin_hz,
        },
        n_trials: net.n_trials,
        normalized: net.normalized,
        nodes: net.nodes.iter().map(|n| NodeDoc { id: n.id, pos: n.pos }).collect(),
        edges: net
            .edges
            .iter()
            .map(|e| EdgeDoc {
                i: e.i,
                j: e.j,
                w: e.weight,
                w_im: e.weight_im,
                lag: e.lag,
            })
            .collect(),
    })
}

pub fn to_json(net: &ConnectivityNetwork) -> Result<String> {
    serde_json::to_string(&doc(net)?).map_err(|e| Error::format("network", e.to_string()))
}

pub fn to_json_pretty(net: &ConnectivityNetwork) -> Result<String> {
    serde_json::to_string_pretty(&doc(net)?).map_err(|e| Error::format("network", e.to_string()))
}

/// Serialized network as JSON `Value` (for embedding in other messages).
pub fn to_value(net: &ConnectivityNetwork) -> Result<serde_json::Value> {
    serde_json::to_value(doc(net)?).map_err(|e| Error::format("network", e.to_string()))
}

pub fn from_json(text: &str) -> Result<ConnectivityNetwork> {
    let doc: NetworkDoc = serde_json::from_str(text).map_err(|e| Error::format("network", e.to_string()))?;
    from_doc(doc)
}

pub fn from_value(value: serde_json::Value) -> Result<ConnectivityNetwork> {
    let doc: NetworkDoc = serde_json::from_value(value).map_err(|e| Error::format("network", e.to_string()))?;
    from_doc(doc)
}

fn from_doc(doc: NetworkDoc) -> Result<ConnectivityNetwork> {
    let metric: MetricId = doc.metric.parse()?;
    let band = FrequencyBand::new(doc.band.lo_bin, doc.band.hi_bin, doc.band.bin_hz)?;
    for e in &doc.edges {
        if e.i >= e.j {
            return Err(Error::format("network", format!("edge ({}, {}) is not ordered", e.i, e.j)));
        }
    }
    Ok(ConnectivityNetwork {
        nodes: doc.nodes.into_iter().map(|n| Node { id: n.id, pos: n.pos }).collect(),
        edges: doc
            .edges
            .into_iter()
            .map(|e| Edge {
                i: e.i,
                j: e.j,
                weight: e.w,
                weight_im: e.w_im,
                lag: e.lag,
            })
            .collect(),
        metric,
        band,
        n_trials: doc.n_trials,
        normalized: doc.normalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_nodes() -> ConnectivityNetwork {
        let band = FrequencyBand::new(18, 30, 1.0).unwrap();
        let mut net = ConnectivityNetwork::empty(MetricId::Cohy, band, 2, 3);
        net.edges.push(Edge {
            i: 0,
            j: 1,
            weight: 0.1 + 0.2,
            weight_im: Some(-1.0 / 3.0),
            lag: None,
        });
        net
    }

    #[test]
    fn keys_in_documented_order() {
        let s = to_json(&two_nodes()).unwrap();
        let keys = ["\"metric\"", "\"band\"", "\"lo_bin\"", "\"hi_bin\"", "\"bin_hz\"", "\"n_trials\"",
            "\"normalized\"", "\"nodes\"", "\"id\"", "\"pos\"", "\"edges\"", "\"i\"", "\"j\"", "\"w\"",
            "\"w_im\"", "\"lag\""];
        let pos: Vec<usize> = keys.iter().map(|k| s.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{s}");
        assert!(s.contains("\"lag\":null"));
    }

    #[test]
    fn round_trip_is_exact() {
        let net = two_nodes();
        let s = to_json(&net).unwrap();
        assert_eq!(from_json(&s).unwrap(), net);
        assert_eq!(to_json(&from_json(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn rejects_non_finite_and_unknown_metric() {
        let mut net = two_nodes();
        net.edges[0].weight = f64::NAN;
        assert!(to_json(&net).is_err());
        let s = to_json(&two_nodes()).unwrap().replace("COHY", "GRANGER");
        assert!(from_json(&s).is_err());
    }
}
