//! Live control messages and their acknowledgements.
//!
//! ```json
//! {"type":"set_metric","value":"PLI"}
//! {"type":"set_band","lo":18,"hi":30}
//! {"type":"set_threshold","value":0.1}
//! {"type":"set_average_count","value":40}
//! {"type":"reset_accumulators"}
//! ```
//!
//! An optional `"id"` is echoed in the ack. Other fields are ignored.

use connstream_core::MetricId;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum ControlMessage {
    SetMetric(MetricId),
    /// Inclusive bin range.
    SetBand { lo: usize, hi: usize },
    /// Fraction of strongest edges kept, in (0, 1].
    SetThreshold(f64),
    /// Number of most recent trials that contribute to the network.
    SetAverageCount(usize),
    ResetAccumulators,
}

impl ControlMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ControlMessage::SetMetric(_) => "set_metric",
            ControlMessage::SetBand { .. } => "set_band",
            ControlMessage::SetThreshold(_) => "set_threshold",
            ControlMessage::SetAverageCount(_) => "set_average_count",
            ControlMessage::ResetAccumulators => "reset_accumulators",
        }
    }

    pub fn to_json(&self) -> String {
        let v = match self {
            ControlMessage::SetMetric(m) => serde_json::json!({"type": self.kind(), "value": m.as_str()}),
            ControlMessage::SetBand { lo, hi } => serde_json::json!({"type": self.kind(), "lo": lo, "hi": hi}),
            ControlMessage::SetThreshold(t) => serde_json::json!({"type": self.kind(), "value": t}),
            ControlMessage::SetAverageCount(n) => serde_json::json!({"type": self.kind(), "value": n}),
            ControlMessage::ResetAccumulators => serde_json::json!({"type": self.kind()}),
        };
        v.to_string()
    }
}

/// A message with the request id it arrived with.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRequest {
    pub id: Option<Value>,
    pub message: ControlMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ack {
    pub id: Option<Value>,
    #[serde(rename = "type")]
    pub kind: String,
    pub accepted: bool,
    pub reason: Option<String>,
}

impl Ack {
    pub fn accept(req: &ControlRequest) -> Self {
        Self {
            id: req.id.clone(),
            kind: req.message.kind().into(),
            accepted: true,
            reason: None,
        }
    }

    pub fn reject(req: &ControlRequest, reason: impl Into<String>) -> Self {
        Self {
            id: req.id.clone(),
            kind: req.message.kind().into(),
            accepted: false,
            reason: Some(reason.into()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ack serializes")
    }
}

/// Parses and validates one control message. The error is the rejection
/// ack to send back.
pub fn handle_control(raw: &str) -> Result<ControlRequest, Ack> {
    let v: Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(e) => return Err(rejection(None, "", format!("invalid JSON: {e}"))),
    };
    let id = v.get("id").cloned();
    let Some(kind) = v.get("type").and_then(Value::as_str) else {
        return Err(rejection(id, "", "missing \"type\""));
    };
    let fail = |msg: String| rejection(id.clone(), kind, msg);
    let uint = |key: &str| {
        v.get(key)
            .and_then(Value::as_u64)
            .map(|n| n as usize)
            .ok_or_else(|| fail(format!("\"{key}\" must be a non-negative integer")))
    };
    let message = match kind {
        "set_metric" => {
            let name = v.get("value").and_then(Value::as_str).ok_or_else(|| fail("\"value\" must be a metric name".into()))?;
            ControlMessage::SetMetric(name.parse().map_err(|e: connstream_core::Error| fail(e.to_string()))?)
        }
        "set_band" => {
            let (lo, hi) = (uint("lo")?, uint("hi")?);
            if lo > hi {
                return Err(fail(format!("lo {lo} above hi {hi}")));
            }
            ControlMessage::SetBand { lo, hi }
        }
        "set_threshold" => {
            let t = v.get("value").and_then(Value::as_f64).ok_or_else(|| fail("\"value\" must be a number".into()))?;
            if !(t > 0.0 && t <= 1.0) {
                return Err(fail(format!("threshold {t} outside (0, 1]")));
            }
            ControlMessage::SetThreshold(t)
        }
        "set_average_count" => {
            let n = uint("value")?;
            if n == 0 {
                return Err(fail("average count must be at least 1".into()));
            }
            ControlMessage::SetAverageCount(n)
        }
        "reset_accumulators" => ControlMessage::ResetAccumulators,
        other => return Err(fail(format!("unknown control type '{other}'"))),
    };
    Ok(ControlRequest { id, message })
}

fn rejection(id: Option<Value>, kind: &str, reason: impl Into<String>) -> Ack {
    Ack {
        id,
        kind: kind.into(),
        accepted: false,
        reason: Some(reason.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(raw: &str) -> ControlMessage {
        handle_control(raw).unwrap().message
    }

    #[test]
    fn parses_each_type() {
        assert_eq!(msg(r#"{"type":"set_metric","value":"PLI"}"#), ControlMessage::SetMetric(MetricId::Pli));
        assert_eq!(msg(r#"{"type":"set_band","lo":18,"hi":30}"#), ControlMessage::SetBand { lo: 18, hi: 30 });
        assert_eq!(msg(r#"{"type":"set_threshold","value":0.1}"#), ControlMessage::SetThreshold(0.1));
        assert_eq!(msg(r#"{"type":"set_average_count","value":40}"#), ControlMessage::SetAverageCount(40));
        assert_eq!(msg(r#"{"type":"reset_accumulators","extra":[1,2]}"#), ControlMessage::ResetAccumulators);
    }

    #[test]
    fn round_trips_through_json() {
        for m in [
            ControlMessage::SetMetric(MetricId::DsWpli),
            ControlMessage::SetBand { lo: 0, hi: 50 },
            ControlMessage::SetThreshold(0.25),
            ControlMessage::SetAverageCount(3),
            ControlMessage::ResetAccumulators,
        ] {
            assert_eq!(msg(&m.to_json()), m);
        }
    }

    #[test]
    fn rejections_carry_id_and_reason() {
        let ack = handle_control(r#"{"id":7,"type":"set_threshold","value":1.5}"#).unwrap_err();
        assert!(!ack.accepted);
        assert_eq!(ack.id, Some(Value::from(7)));
        assert_eq!(ack.kind, "set_threshold");
        for raw in [
            "not json",
            r#"{"value":1}"#,
            r#"{"type":"set_gain","value":1}"#,
            r#"{"type":"set_metric","value":"GRANGER"}"#,
            r#"{"type":"set_band","lo":30,"hi":18}"#,
            r#"{"type":"set_band","lo":-1,"hi":18}"#,
            r#"{"type":"set_threshold","value":0}"#,
            r#"{"type":"set_average_count","value":0}"#,
        ] {
            assert!(handle_control(raw).is_err(), "{raw}");
        }
    }

    #[test]
    fn ack_json_shape() {
        let req = handle_control(r#"{"id":"a","type":"set_metric","value":"coh"}"#).unwrap();
        assert_eq!(
            Ack::accept(&req).to_json(),
            r#"{"id":"a","type":"set_metric","accepted":true,"reason":null}"#
        );
    }
}
