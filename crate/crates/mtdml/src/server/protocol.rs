//! Newline-delimited JSON wire types.
//!
//! One request object per line, one response object per line, order
//! preserved per connection. Prediction responses carry either a label or
//! an error, never both, and never identify which student or pool
//! answered.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictRequest {
    /// Client-chosen correlation token, echoed back verbatim.
    pub id: String,
    /// Flat feature vector; must match the deployed model's input width.
    pub input: Vec<f64>,
    /// Ask for confidence output (honored only when the server exposes it).
    #[serde(default)]
    pub want_confidence: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictResponse {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    /// Maximum softmax probability of the answering model, when exposed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Full probability vector, when the deployment exposes soft outputs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictResponse {
    pub fn ok(id: String, label: usize) -> Self {
        Self {
            id,
            label: Some(label),
            confidence: None,
            probs: None,
            error: None,
        }
    }

    pub fn err(id: String, message: impl Into<String>) -> Self {
        Self {
            id,
            label: None,
            confidence: None,
            probs: None,
            error: Some(message.into()),
        }
    }
}

/// Admin-side request, same framing as the prediction port.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdminRequest {
    pub cmd: AdminCmd,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AdminCmd {
    Status,
    RenewalLog,
    RenewalLogCsv,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_omits_absent_fields() {
        let ok = PredictResponse::ok("q1".into(), 3);
        let json = serde_json::to_string(&ok).unwrap();
        assert!(!json.contains("error"));
        assert!(!json.contains("confidence"));
        assert!(json.contains("\"label\":3"));

        let err = PredictResponse::err("q2".into(), "bad input");
        let json = serde_json::to_string(&err).unwrap();
        assert!(!json.contains("label"));
        assert!(json.contains("bad input"));
    }

    #[test]
    fn request_defaults_want_confidence_off() {
        let req: PredictRequest =
            serde_json::from_str(r#"{"id":"a","input":[0.1,0.2]}"#).unwrap();
        assert!(!req.want_confidence);
    }
}
