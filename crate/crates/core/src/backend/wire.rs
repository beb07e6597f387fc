//! JSON bodies of the model-server protocol.
//!
//! ```text
//! POST /v1/tokenize       {"text": s}                                  -> {"tokens": [...]}
//! POST /v1/embed          {"texts": [s...], "pooling": "mean"|"cls"}   -> {"vectors": [[...]...], "dim": d}
//! POST /v1/mask_logprobs  {"tokens": [...], "mask_index": i, "target"?: t, "topk"?: k}
//!                                                                      -> {"entries": [["tok", lp]...], "complete": bool}
//! GET  /v1/info                                                        -> {"model_id", "dim", "max_len"}
//! ```
//!
//! Non-2xx responses carry `{"error": msg}`.

use serde::{Deserialize, Serialize};

use super::{ModelInfo, Pooling, SentenceEmbedding, VocabDistribution};
use crate::error::{Error, Result};

pub const TOKENIZE: &str = "/v1/tokenize";
pub const EMBED: &str = "/v1/embed";
pub const MASK_LOGPROBS: &str = "/v1/mask_logprobs";
pub const INFO: &str = "/v1/info";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
    pub dim: usize,
}

impl EmbedResponse {
    pub fn into_embeddings(self, expected: usize) -> Result<Vec<SentenceEmbedding>> {
        if self.vectors.len() != expected {
            return Err(Error::Protocol(format!(
                "expected {expected} vectors, got {}",
                self.vectors.len()
            )));
        }
        self.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                SentenceEmbedding::new(v)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRequest {
    pub tokens: Vec<String>,
    pub mask_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskResponse {
    pub entries: Vec<(String, f64)>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub approximate: bool,
}

impl MaskResponse {
    pub fn from_distribution(dist: &VocabDistribution) -> Self {
        Self {
            entries: dist.entries().to_vec(),
            complete: dist.is_complete(),
            approximate: dist.is_approximate(),
        }
    }

    pub fn into_distribution(self) -> Result<VocabDistribution> {
        Ok(VocabDistribution::new(self.entries, self.complete)?.with_approximate(self.approximate))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub type InfoResponse = ModelInfo;
