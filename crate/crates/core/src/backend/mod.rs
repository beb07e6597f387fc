//! Model access.
//!
//! Every measurement in this crate talks to a masked language model through the
//! [`Backend`] trait: tokenize a sentence, embed it, or ask for the log-probability
//! distribution at a `[MASK]` position. Three implementations exist:
//!
//! * [`ToyBackend`], a deterministic hash-based stand-in used for offline tests,
//! * [`FixtureBackend`] / [`RecordingBackend`], a record/replay store of wire responses,
//! * [`HttpBackend`], a client for the JSON wire protocol served by a model server.
//!
//! A [`BackendDescriptor`] names one of these and is what configs and the CLI carry.

mod descriptor;
mod fixture;
mod http;
mod toy;
mod vocab;
pub mod wire;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use descriptor::{BackendDescriptor, BackendKind, Pooling};
pub(crate) use fixture::write_atomic;
pub use fixture::{canonical_json, request_hash, FixtureBackend, FixtureManifest, RecordingBackend};
pub use http::HttpBackend;
pub use toy::{toy_tokenize, ToyBackend, TOY_DIM};
pub use vocab::DEFAULT_TOY_VOCAB;

pub const MASK_TOKEN: &str = "[MASK]";

/// Tokens that never carry content: excluded from pooling and PLL scoring.
pub const SPECIAL_TOKENS: &[&str] = &["[MASK]", "[CLS]", "[SEP]", "[PAD]", "<s>", "</s>", "<mask>", "<pad>"];

pub fn is_special(token: &str) -> bool {
    SPECIAL_TOKENS.contains(&token)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<String>,
    source_text: String,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, source_text: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::invalid("token sequence contains an empty token"));
        }
        Ok(Self {
            tokens,
            source_text: source_text.into(),
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Position of the first `[MASK]` token.
    pub fn mask_position(&self) -> Option<usize> {
        self.tokens.iter().position(|t| t == MASK_TOKEN)
    }

    /// Copy with position `index` replaced by `[MASK]`.
    pub fn masked_at(&self, index: usize) -> Result<TokenSequence> {
        if index >= self.tokens.len() {
            return Err(Error::invalid(format!(
                "mask index {index} out of range for {} tokens",
                self.tokens.len()
            )));
        }
        let mut tokens = self.tokens.clone();
        tokens[index] = MASK_TOKEN.to_string();
        Ok(TokenSequence {
            tokens,
            source_text: self.source_text.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedQuery {
    pub tokens: TokenSequence,
    pub mask_index: usize,
    pub target: Option<String>,
    pub topk: Option<usize>,
}

impl MaskedQuery {
    pub fn new(tokens: TokenSequence, mask_index: usize) -> Result<Self> {
        if mask_index >= tokens.len() {
            return Err(Error::invalid(format!(
                "mask index {mask_index} out of range for {} tokens",
                tokens.len()
            )));
        }
        Ok(Self {
            tokens,
            mask_index,
            target: None,
            topk: None,
        })
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Self {
        self.target = Some(target.into());
        self
    }

    pub fn with_topk(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("topk must be positive"));
        }
        self.topk = Some(k);
        Ok(self)
    }

    /// Checks the slot actually holds `[MASK]`.
    pub fn check_mask(&self) -> Result<()> {
        if self.tokens.tokens()[self.mask_index] != MASK_TOKEN {
            return Err(Error::NotAMask {
                index: self.mask_index,
            });
        }
        Ok(())
    }
}

/// Natural-log probabilities over vocabulary tokens at one masked position,
/// sorted by descending log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabDistribution {
    entries: Vec<(String, f64)>,
    complete: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    approximate: bool,
}

impl VocabDistribution {
    pub fn new(mut entries: Vec<(String, f64)>, complete: bool) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (token, lp) in &entries {
            if !lp.is_finite() || *lp > 1e-12 {
                return Err(Error::Protocol(format!(
                    "log-probability for {token:?} out of range: {lp}"
                )));
            }
            if !seen.insert(token.as_str()) {
                return Err(Error::Protocol(format!("duplicate token {token:?}")));
            }
        }
        for entry in entries.iter_mut() {
            entry.1 = entry.1.min(0.0);
        }
        sort_entries(&mut entries);
        if complete {
            let total: f64 = entries.iter().map(|(_, lp)| lp.exp()).sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::Protocol(format!(
                    "complete distribution sums to {total}"
                )));
            }
        }
        Ok(Self {
            entries,
            complete,
            approximate: false,
        })
    }

    pub(crate) fn with_approximate(mut self, approximate: bool) -> Self {
        self.approximate = approximate;
        self
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// True when the server summed several subword log-probabilities for a target.
    pub fn is_approximate(&self) -> bool {
        self.approximate
    }

    pub fn logprob(&self, token: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(t, _)| t == token)
            .map(|&(_, lp)| lp)
    }

    pub fn prob(&self, token: &str) -> f64 {
        self.logprob(token).map_or(0.0, f64::exp)
    }

    pub fn top(&self) -> Option<&(String, f64)> {
        self.entries.first()
    }

    pub fn truncated(&self, k: usize) -> VocabDistribution {
        VocabDistribution {
            entries: self.entries.iter().take(k).cloned().collect(),
            complete: false,
            approximate: self.approximate,
        }
    }
}

fn sort_entries(entries: &mut [(String, f64)]) {
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEmbedding {
    vector: Vec<f64>,
    norm: f64,
}

impl SentenceEmbedding {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::invalid("embedding has dimension 0"));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding has non-finite component"));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(Self { vector, norm })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.vector.iter().map(|v| v * c).collect())
    }

    pub fn cosine(&self, other: &SentenceEmbedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let dot: f64 = self
            .vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| a * b)
            .sum();
        Ok(dot / (self.norm * other.norm))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub dim: usize,
    pub max_len: usize,
}

/// Uniform access to a masked language model.
///
/// Implementations are immutable after construction and may be shared across
/// worker threads.
pub trait Backend: Send + Sync {
    fn tokenize(&self, text: &str) -> Result<TokenSequence>;

    fn embed(&self, text: &str) -> Result<SentenceEmbedding>;

    fn mask_logprobs(&self, query: &MaskedQuery) -> Result<VocabDistribution>;

    fn info(&self) -> Result<ModelInfo>;

    fn pooling(&self) -> Pooling;

    /// Embeds several texts; results are aligned with the input order.
    fn embed_many(&self, texts: &[String]) -> Result<Vec<SentenceEmbedding>> {
        use rayon::prelude::*;
        texts.par_iter().map(|t| self.embed(t)).collect()
    }

    /// True when `token` survives tokenization as a single unit.
    fn is_single_token(&self, token: &str) -> Result<bool> {
        let seq = self.tokenize(token)?;
        Ok(seq.len() == 1 && seq.tokens()[0] == token)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        (**self).tokenize(text)
    }
    fn embed(&self, text: &str) -> Result<SentenceEmbedding> {
        (**self).embed(text)
    }
    fn mask_logprobs(&self, query: &MaskedQuery) -> Result<VocabDistribution> {
        (**self).mask_logprobs(query)
    }
    fn info(&self) -> Result<ModelInfo> {
        (**self).info()
    }
    fn pooling(&self) -> Pooling {
        (**self).pooling()
    }
    fn embed_many(&self, texts: &[String]) -> Result<Vec<SentenceEmbedding>> {
        (**self).embed_many(texts)
    }
    fn is_single_token(&self, token: &str) -> Result<bool> {
        (**self).is_single_token(token)
    }
}

pub(crate) fn check_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}
