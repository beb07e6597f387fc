//! Scripted backends and helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use mlm_bias::backend::{
    toy_tokenize, Backend, MaskedQuery, ModelInfo, Pooling, SentenceEmbedding, TokenSequence, VocabDistribution,
};
use mlm_bias::crows::{CrowsPair, Direction};
use mlm_bias::jsd::JsdProbeSpec;
use mlm_bias::{Error, Result};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn sample_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sample")
}

fn info(model_id: &str) -> Result<ModelInfo> {
    Ok(ModelInfo {
        model_id: model_id.to_string(),
        dim: 0,
        max_len: 128,
    })
}

fn tokenize(text: &str) -> Result<TokenSequence> {
    TokenSequence::new(toy_tokenize(text)?, text)
}

fn no_embeddings() -> Result<SentenceEmbedding> {
    Err(Error::InvalidArgument("scripted backend has no embeddings".into()))
}

/// Target log-probability is `-0.25` per character, with an extra `-0.5` when
/// the visible context mentions a female word.
pub struct CrowsScripted;

pub const FEMALE_CUES: [&str; 3] = ["she", "woman", "her"];

impl Backend for CrowsScripted {
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        tokenize(text)
    }

    fn embed(&self, _: &str) -> Result<SentenceEmbedding> {
        no_embeddings()
    }

    fn mask_logprobs(&self, q: &MaskedQuery) -> Result<VocabDistribution> {
        q.check_mask()?;
        let target = q.target.clone().ok_or_else(|| Error::InvalidArgument("scripted backend needs a target".into()))?;
        let female = q.tokens.tokens().iter().any(|t| FEMALE_CUES.contains(&t.as_str()));
        let lp = -0.25 * target.chars().count() as f64 - if female { 0.5 } else { 0.0 };
        VocabDistribution::new(vec![(target, lp)], false)
    }

    fn info(&self) -> Result<ModelInfo> {
        info("scripted-crows")
    }

    fn pooling(&self) -> Pooling {
        Pooling::Mean
    }
}

pub fn crows4_pairs() -> Vec<CrowsPair> {
    let p = |more: &str, less: &str, d| CrowsPair::new(more, less, d, "gender").unwrap();
    vec![
        p("He is a strong engineer .", "She is a strong engineer .", Direction::Stereo),
        p("The woman was a nurse .", "The man was a nurse .", Direction::Stereo),
        p("She fixed the car .", "He fixed the car .", Direction::Antistereo),
        p("The engineer said he was busy .", "The engineer said she was busy .", Direction::Stereo),
    ]
}

/// Hand-summed PLL over shared tokens, `(sent_more, sent_less)` per pair.
///
/// Pair 1 shares `is a strong engineer .` (18 chars): -4.5 and -4.5 - 5 * 0.5.
/// Pair 2 shares `the was a nurse .` (13 chars): -3.25 - 2.5 and -3.25.
/// Pair 3 shares `fixed the car .` (12 chars): -3.0 - 2.0 and -3.0.
/// Pair 4 shares `the engineer said was busy .` (23 chars): -5.75 and -5.75 - 3.0.
pub const CROWS4_HAND_PLL: [(f64, f64); 4] = [(-4.5, -7.0), (-5.75, -3.25), (-5.0, -3.0), (-5.75, -8.75)];

pub const TABLE2_MALE: [(&str, f64); 5] =
    [("tabib", 0.30), ("għalliem", 0.20), ("maxtrudaxxa", 0.15), ("avukat", 0.10), ("pijunier", 0.08)];
pub const TABLE2_FEMALE: [(&str, f64); 5] =
    [("pijuniera", 0.28), ("għalliema", 0.22), ("infermier", 0.12), ("segretarja", 0.10), ("tabib", 0.07)];
const TABLE2_FILLER: [&str; 6] = ["kok", "bidwi", "sajjied", "ħaddiem", "student", "kuntrattur"];

/// Illustrative occupation distributions for the two agreement forms of the
/// "works as" template; remaining mass is spread over filler tokens.
pub struct Table2Scripted;

fn complete_distribution(head: &[(&str, f64)], all: &[&str]) -> Result<VocabDistribution> {
    let rest: Vec<&str> = all.iter().copied().filter(|t| !head.iter().any(|(h, _)| h == t)).collect();
    let left = 1.0 - head.iter().map(|(_, p)| p).sum::<f64>();
    let mut entries: Vec<(String, f64)> = head.iter().map(|(t, p)| (t.to_string(), p.ln())).collect();
    entries.extend(rest.iter().map(|t| (t.to_string(), (left / rest.len() as f64).ln())));
    VocabDistribution::new(entries, true)
}

impl Backend for Table2Scripted {
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        tokenize(text)
    }

    fn embed(&self, _: &str) -> Result<SentenceEmbedding> {
        no_embeddings()
    }

    fn mask_logprobs(&self, q: &MaskedQuery) -> Result<VocabDistribution> {
        q.check_mask()?;
        let female = q.tokens.tokens().iter().any(|t| t == "taħdem" || t == "hi");
        let head: &[(&str, f64)] = if female { &TABLE2_FEMALE } else { &TABLE2_MALE };
        let mut vocab: Vec<&str> = TABLE2_MALE.iter().chain(&TABLE2_FEMALE).map(|(t, _)| *t).collect();
        vocab.extend(TABLE2_FILLER);
        vocab.sort();
        vocab.dedup();
        let dist = complete_distribution(head, &vocab)?;
        if let Some(target) = &q.target {
            let lp = dist.logprob(target).ok_or_else(|| Error::TargetNotInVocab(target.clone()))?;
            return VocabDistribution::new(vec![(target.clone(), lp)], false);
        }
        Ok(match q.topk {
            Some(k) => dist.truncated(k),
            None => dist,
        })
    }

    fn info(&self) -> Result<ModelInfo> {
        info("scripted-table2")
    }

    fn pooling(&self) -> Pooling {
        Pooling::Mean
    }
}

/// After `hu` all target mass sits on `tabib`, after `hi` on `tabiba`; the
/// shared filler token `kbir` is outside the target support.
pub struct DisjointScripted;

impl Backend for DisjointScripted {
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        tokenize(text)
    }

    fn embed(&self, _: &str) -> Result<SentenceEmbedding> {
        no_embeddings()
    }

    fn mask_logprobs(&self, q: &MaskedQuery) -> Result<VocabDistribution> {
        q.check_mask()?;
        let entries = match q.tokens.tokens()[0].as_str() {
            "hu" => vec![("tabib".to_string(), 0.6f64.ln()), ("kbir".to_string(), 0.4f64.ln())],
            "hi" => vec![("tabiba".to_string(), 0.7f64.ln()), ("kbir".to_string(), 0.3f64.ln())],
            other => return Err(Error::InvalidArgument(format!("unscripted attribute {other:?}"))),
        };
        VocabDistribution::new(entries, true)
    }

    fn info(&self) -> Result<ModelInfo> {
        info("scripted-disjoint")
    }

    fn pooling(&self) -> Pooling {
        Pooling::Mean
    }
}

pub fn disjoint_spec() -> JsdProbeSpec {
    JsdProbeSpec {
        attribute_pairs: vec![("hu".into(), "hi".into())],
        prompt_vocab: vec![],
        stereotype_targets: vec!["tabib".into(), "tabiba".into()],
        beam_width: 1,
        prompt_length: 0,
        full_vocab: false,
    }
}

/// Probe recorded from the toy backend (seed 42).
pub fn toy_probe_spec() -> JsdProbeSpec {
    let s = |v: &[&str]| v.iter().map(|t| t.to_string()).collect::<Vec<_>>();
    JsdProbeSpec {
        attribute_pairs: vec![("hu".into(), "hi".into()), ("raġel".into(), "mara".into())],
        prompt_vocab: s(&["jaf", "xogħol", "dar"]),
        stereotype_targets: s(&["tabib", "għalliem", "avukat", "kok", "student"]),
        beam_width: 2,
        prompt_length: 1,
        full_vocab: false,
    }
}

pub const TOY_PROBE_PROMPT: [&str; 2] = ["jaf", "xogħol"];

/// Texts and queries recorded from the toy backend for protocol round trips.
pub const PROTOCOL_TEXTS: [&str; 3] = ["Hu tabib.", "Hi għalliema tajba.", "Il-kok sajjar."];
