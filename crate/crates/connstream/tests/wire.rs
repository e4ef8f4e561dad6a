use connstream::control::{handle_control, ControlMessage};
use connstream::core::{ConnectivityNetwork, Edge, FrequencyBand, MetricId, Node};
use connstream::format::network_json;
use connstream::frame::{Frame, FrameDecoder, FrameType};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_network(n_nodes: u32, n_edges: usize, seed: u64) -> ConnectivityNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    'outer: for i in 0..n_nodes {
        for j in i + 1..n_nodes {
            if edges.len() == n_edges {
                break 'outer;
            }
            edges.push(Edge {
                i,
                j,
                weight: rng.random_range(-1.0..1.0),
                weight_im: Some(rng.random_range(-1.0..1.0)),
                lag: Some(rng.random_range(-1000..1000)),
            });
        }
    }
    assert_eq!(edges.len(), n_edges);
    ConnectivityNetwork {
        nodes: (0..n_nodes)
            .map(|id| Node {
                id,
                pos: [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)],
            })
            .collect(),
        edges,
        metric: MetricId::Cohy,
        band: FrequencyBand::new(18, 30, 1.0).unwrap(),
        n_trials: 200,
        normalized: true,
    }
}

#[test]
fn empty_network_makes_a_valid_frame() {
    let net = ConnectivityNetwork::empty(MetricId::Pli, FrequencyBand::new(0, 0, 1.0).unwrap(), 0, 1);
    let json = network_json::to_json(&net).unwrap();
    let bytes = Frame::new(FrameType::Network, json.clone()).encode().unwrap();
    assert_eq!(bytes.len(), 4 + 1 + json.len());
    let frame = Frame::read_from(&mut bytes.as_slice()).unwrap().unwrap();
    assert_eq!(frame.kind, FrameType::Network);
    assert_eq!(frame.payload, json);
    assert_eq!(network_json::from_json(&frame.payload).unwrap(), net);
}

#[test]
fn dense_network_frame_stays_under_one_mebibyte() {
    // Every optional field filled, full-precision floats.
    let net = random_network(265, 3277, 1);
    let json = network_json::to_json(&net).unwrap();
    let bytes = Frame::new(FrameType::Network, json).encode().unwrap();
    assert!(bytes.len() < 1 << 20, "{} bytes", bytes.len());
    let back = Frame::read_from(&mut bytes.as_slice()).unwrap().unwrap();
    assert_eq!(network_json::from_json(&back.payload).unwrap(), net);
}

#[test]
fn serialization_is_byte_stable() {
    let net = random_network(40, 300, 2);
    let a = network_json::to_json(&net).unwrap();
    let b = network_json::to_json(&network_json::from_json(&a).unwrap()).unwrap();
    assert_eq!(a, b);
}

fn frame_type() -> impl Strategy<Value = FrameType> {
    prop_oneof![
        Just(FrameType::Network),
        Just(FrameType::Timing),
        Just(FrameType::Ack),
        Just(FrameType::Control)
    ]
}

fn metric() -> impl Strategy<Value = MetricId> {
    prop::sample::select(MetricId::ALL.to_vec())
}

fn control_message() -> impl Strategy<Value = ControlMessage> {
    prop_oneof![
        metric().prop_map(ControlMessage::SetMetric),
        (0usize..300, 0usize..300).prop_map(|(a, b)| ControlMessage::SetBand { lo: a.min(b), hi: a.max(b) }),
        (1e-6f64..=1.0).prop_map(ControlMessage::SetThreshold),
        (1usize..10_000).prop_map(ControlMessage::SetAverageCount),
        Just(ControlMessage::ResetAccumulators),
    ]
}

proptest! {
    #[test]
    fn frames_survive_any_chunking(
        frames in prop::collection::vec((frame_type(), ".{0,200}"), 1..6),
        cuts in prop::collection::vec(1usize..64, 0..40),
    ) {
        let frames: Vec<Frame> = frames.into_iter().map(|(k, p)| Frame::new(k, p)).collect();
        let mut bytes = Vec::new();
        for f in &frames {
            bytes.extend(f.encode().unwrap());
        }
        let mut decoder = FrameDecoder::new();
        let mut out = Vec::new();
        let mut rest = bytes.as_slice();
        for c in cuts.into_iter().chain(std::iter::once(usize::MAX)) {
            let (head, tail) = rest.split_at(c.min(rest.len()));
            decoder.push(head);
            rest = tail;
            while let Some(f) = decoder.next_frame().unwrap() {
                out.push(f);
            }
        }
        prop_assert_eq!(out, frames);
        prop_assert_eq!(decoder.buffered(), 0);
    }

    #[test]
    fn length_prefix_counts_type_byte_and_payload(kind in frame_type(), payload in ".{0,300}") {
        let bytes = Frame::new(kind, payload.clone()).encode().unwrap();
        let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        prop_assert_eq!(len, 1 + payload.len());
        prop_assert_eq!(bytes[4], kind as u8);
        prop_assert_eq!(&bytes[5..], payload.as_bytes());
    }

    #[test]
    fn network_json_round_trips(n_nodes in 0u32..30, fill in 0.0f64..=1.0, seed in any::<u64>()) {
        let pairs = (n_nodes as usize) * (n_nodes as usize).saturating_sub(1) / 2;
        let net = random_network(n_nodes, (pairs as f64 * fill) as usize, seed);
        let json = network_json::to_json(&net).unwrap();
        prop_assert_eq!(&network_json::from_json(&json).unwrap(), &net);
        prop_assert_eq!(network_json::to_json(&net).unwrap(), json);
    }

    #[test]
    fn control_messages_round_trip(msg in control_message(), id in prop::option::of(any::<u32>())) {
        let mut v: serde_json::Value = serde_json::from_str(&msg.to_json()).unwrap();
        if let Some(id) = id {
            v["id"] = id.into();
        }
        v["ignored_field"] = "x".into();
        let req = handle_control(&v.to_string()).unwrap();
        prop_assert_eq!(req.message, msg);
        prop_assert_eq!(req.id, id.map(Into::into));
    }

    #[test]
    fn out_of_range_thresholds_are_rejected(t in prop_oneof![-10.0f64..=0.0, 1.0f64 + 1e-9..10.0]) {
        let raw = format!("{{\"type\":\"set_threshold\",\"value\":{t}}}");
        let ack = handle_control(&raw).unwrap_err();
        prop_assert!(!ack.accepted);
        prop_assert_eq!(ack.kind, "set_threshold");
        prop_assert!(ack.reason.is_some());
    }
}
