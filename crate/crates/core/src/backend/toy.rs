//! Deterministic hash-based stand-in for a masked language model.
//!
//! * Tokenizer: NFC-normalize, lowercase, split on whitespace; every other
//!   non-alphanumeric character is a token of its own. `[MASK]` stays atomic.
//! * Embedding: each character trigram of `#token#` maps to a 64-dim vector
//!   expanded by splitmix64 from an FNV-1a hash of `(seed, trigram)`. Mean pooling
//!   averages per-token trigram sums over non-special tokens; CLS pooling sums the
//!   trigrams of the whole `#tok tok …#` string. The result is L2-normalized.
//! * Mask distribution: softmax over a 256-token vocabulary of scores
//!   `FNV-1a(seed, candidate, sorted context tokens)` scaled to `[-4, 4]`.

use std::collections::HashMap;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use super::{
    check_text, is_special, Backend, MaskedQuery, ModelInfo, Pooling, SentenceEmbedding,
    TokenSequence, VocabDistribution, DEFAULT_TOY_VOCAB, MASK_TOKEN,
};
use crate::error::{Error, Result};

pub const TOY_DIM: usize = 64;
const TOY_VOCAB_SIZE: usize = 256;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
// Never occurs in UTF-8, so it cleanly separates hashed fields.
const FIELD_SEP: u8 = 0xff;

#[derive(Debug, Clone)]
pub struct ToyBackend {
    seed: u64,
    pooling: Pooling,
    vocab: Vec<String>,
    flat: bool,
}

impl ToyBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            pooling: Pooling::Mean,
            vocab: DEFAULT_TOY_VOCAB.iter().map(|s| s.to_string()).collect(),
            flat: false,
        }
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    /// Replaces the vocabulary. Duplicates are dropped, first occurrence wins.
    pub fn with_vocab<I, S>(mut self, vocab: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for tok in vocab {
            let tok = tok.into();
            if tok.is_empty() {
                return Err(Error::invalid("empty vocabulary token"));
            }
            if !out.contains(&tok) {
                out.push(tok);
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("empty vocabulary"));
        }
        self.vocab = out;
        Ok(self)
    }

    /// Uses the 256 most frequent toy tokens of a one-sentence-per-line corpus
    /// (ties broken lexicographically).
    pub fn with_vocab_from_corpus(self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            for tok in toy_tokenize(line)? {
                if !is_special(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(TOY_VOCAB_SIZE);
        self.with_vocab(ranked.into_iter().map(|(t, _)| t))
    }

    /// Every candidate gets the same score: the mask distribution is uniform.
    pub fn with_flat_scores(mut self) -> Self {
        self.flat = true;
        self
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn trigram_vector(&self, trigram: &str, acc: &mut [f64]) {
        let mut hasher = Fnv1a::new();
        hasher.write(&self.seed.to_le_bytes());
        hasher.write(trigram.as_bytes());
        let mut state = hasher.finish();
        for slot in acc.iter_mut() {
            let z = splitmix64(&mut state);
            // top 53 bits -> [0, 1) -> [-1, 1)
            let unit = (z >> 11) as f64 / (1u64 << 53) as f64;
            *slot += 2.0 * unit - 1.0;
        }
    }

    fn trigram_sum(&self, padded: &str, acc: &mut [f64]) {
        let chars: Vec<char> = padded.chars().collect();
        for window in chars.windows(3) {
            let tri: String = window.iter().collect();
            self.trigram_vector(&tri, acc);
        }
    }

    fn score(&self, candidate: &str, sorted_context: &[&str]) -> f64 {
        if self.flat {
            return 0.0;
        }
        let mut hasher = Fnv1a::new();
        hasher.write(&self.seed.to_le_bytes());
        hasher.write(candidate.as_bytes());
        hasher.write(&[FIELD_SEP]);
        for tok in sorted_context {
            hasher.write(tok.as_bytes());
            hasher.write(&[FIELD_SEP]);
        }
        let h = hasher.finish();
        -4.0 + 8.0 * (h as f64 / u64::MAX as f64)
    }

    /// Full log-softmax distribution for a masked slot.
    fn full_distribution(&self, query: &MaskedQuery) -> Vec<(String, f64)> {
        let mut context: Vec<&str> = query
            .tokens
            .tokens()
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != query.mask_index)
            .map(|(_, t)| t.as_str())
            .collect();
        context.sort_unstable();
        let scores: Vec<f64> = self.vocab.iter().map(|c| self.score(c, &context)).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        self.vocab
            .iter()
            .zip(scores)
            .map(|(tok, s)| (tok.clone(), (s - log_z).min(0.0)))
            .collect()
    }
}

impl Backend for ToyBackend {
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        TokenSequence::new(toy_tokenize(text)?, text)
    }

    fn embed(&self, text: &str) -> Result<SentenceEmbedding> {
        let seq = self.tokenize(text)?;
        let content: Vec<&String> = seq.tokens().iter().filter(|t| !is_special(t)).collect();
        if content.is_empty() {
            return Err(Error::invalid(format!(
                "{text:?} has no non-special tokens to embed"
            )));
        }
        let mut acc = vec![0.0; TOY_DIM];
        match self.pooling {
            Pooling::Mean => {
                for tok in &content {
                    self.trigram_sum(&format!("#{tok}#"), &mut acc);
                }
                let n = content.len() as f64;
                acc.iter_mut().for_each(|v| *v /= n);
            }
            Pooling::Cls => {
                let joined: Vec<&str> = content.iter().map(|s| s.as_str()).collect();
                self.trigram_sum(&format!("#{}#", joined.join(" ")), &mut acc);
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        SentenceEmbedding::new(acc.into_iter().map(|v| v / norm).collect())
    }

    fn mask_logprobs(&self, query: &MaskedQuery) -> Result<VocabDistribution> {
        query.check_mask()?;
        let entries = self.full_distribution(query);
        if let Some(target) = &query.target {
            let lp = entries
                .iter()
                .find(|(t, _)| t == target)
                .map(|&(_, lp)| lp)
                .ok_or_else(|| Error::TargetNotInVocab(target.clone()))?;
            return VocabDistribution::new(vec![(target.clone(), lp)], false);
        }
        let dist = VocabDistribution::new(entries, true)?;
        Ok(match query.topk {
            Some(k) => dist.truncated(k),
            None => dist,
        })
    }

    fn info(&self) -> Result<ModelInfo> {
        Ok(ModelInfo {
            model_id: format!("toy-seed{}", self.seed),
            dim: TOY_DIM,
            max_len: 512,
        })
    }

    fn pooling(&self) -> Pooling {
        self.pooling
    }
}

/// The toy tokenizer, exposed for callers that need the same segmentation offline.
pub fn toy_tokenize(text: &str) -> Result<Vec<String>> {
    check_text(text)?;
    let mut tokens = Vec::new();
    let mut segments = text.split(MASK_TOKEN).peekable();
    while let Some(segment) = segments.next() {
        split_segment(segment, &mut tokens);
        if segments.peek().is_some() {
            tokens.push(MASK_TOKEN.to_string());
        }
    }
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(tokens)
}

fn split_segment(segment: &str, out: &mut Vec<String>) {
    let normalized: String = segment.nfc().collect::<String>().to_lowercase();
    let mut word = String::new();
    for ch in normalized.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(FNV_OFFSET)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
