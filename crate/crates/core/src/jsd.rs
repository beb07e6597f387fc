//! Jensen–Shannon divergence between mask distributions conditioned on paired
//! gender attributes, and beam search for prompts that maximise it.

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, MaskedQuery, TokenSequence, VocabDistribution, MASK_TOKEN};
use crate::error::{Error, Result};

/// Upper bound of JSD in nats.
pub const LN_2: f64 = std::f64::consts::LN_2;

/// `sum p ln(p/q)` with `0 ln(0/x) = 0`. Callers guarantee `q > 0` wherever `p > 0`.
fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

fn normalize(v: &mut [f64]) -> Result<()> {
    let total: f64 = v.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::invalid("distribution has no mass on the support"));
    }
    v.iter_mut().for_each(|x| *x /= total);
    Ok(())
}

/// JSD of two non-negative weight vectors after normalising each to sum 1.
///
/// ```
/// let d = mlm_bias::jsd::jsd_probs(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
/// assert!((d - std::f64::consts::LN_2).abs() < 1e-15);
/// ```
pub fn jsd_probs(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::EmptyInput);
    }
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    if p.iter().chain(q).any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let (mut p, mut q) = (p.to_vec(), q.to_vec());
    normalize(&mut p)?;
    normalize(&mut q)?;
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    let d = 0.5 * kl(&p, &m) + 0.5 * kl(&q, &m);
    // rounding can push the value a hair outside [0, ln 2]
    Ok(d.clamp(0.0, LN_2))
}

/// JSD between two mask distributions restricted to `support` and renormalised.
/// Tokens absent from a distribution count as probability 0.
pub fn jsd(p: &VocabDistribution, q: &VocabDistribution, support: &[String]) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::EmptyInput);
    }
    let pv: Vec<f64> = support.iter().map(|t| p.prob(t)).collect();
    let qv: Vec<f64> = support.iter().map(|t| q.prob(t)).collect();
    jsd_probs(&pv, &qv)
}

/// JSD over the union of tokens present in either distribution.
pub fn jsd_full(p: &VocabDistribution, q: &VocabDistribution) -> Result<f64> {
    let mut seen = HashSet::new();
    let support: Vec<String> = p
        .entries()
        .iter()
        .chain(q.entries())
        .filter(|(t, _)| seen.insert(t.clone()))
        .map(|(t, _)| t.clone())
        .collect();
    jsd(p, q, &support)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsdProbeSpec {
    pub attribute_pairs: Vec<(String, String)>,
    pub prompt_vocab: Vec<String>,
    pub stereotype_targets: Vec<String>,
    #[serde(default = "default_beam")]
    pub beam_width: usize,
    #[serde(default = "default_prompt_length")]
    pub prompt_length: usize,
    /// Compare whole distributions instead of restricting to the targets.
    #[serde(default)]
    pub full_vocab: bool,
}

fn default_beam() -> usize {
    5
}

fn default_prompt_length() -> usize {
    2
}

impl JsdProbeSpec {
    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let spec: Self = serde_json::from_str(&raw)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::invalid("beam_width must be at least 1"));
        }
        if self.attribute_pairs.is_empty() {
            return Err(Error::invalid("no attribute pairs"));
        }
        if self.stereotype_targets.is_empty() {
            return Err(Error::invalid("no stereotype targets"));
        }
        if self.prompt_length > 0 && self.prompt_vocab.is_empty() {
            return Err(Error::invalid("prompt_vocab is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.prompt_vocab.iter().find(|t| !seen.insert(*t)) {
            return Err(Error::invalid(format!("duplicate prompt token {dup:?}")));
        }
        Ok(())
    }

    /// Checks every stereotype target is a single backend token.
    pub fn check_targets(&self, backend: &dyn Backend) -> Result<()> {
        for t in &self.stereotype_targets {
            if !backend.is_single_token(t)? {
                return Err(Error::TargetNotInVocab(t.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub male: String,
    pub female: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsdResult {
    pub prompt: Vec<String>,
    /// One value per scored pair, in the order of `attribute_pairs` minus skipped ones.
    pub per_pair_jsd: Vec<f64>,
    pub mean_jsd: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedPair>,
}

fn conditioned(backend: &dyn Backend, attribute: &str, prompt: &[String]) -> Result<VocabDistribution> {
    let mut tokens = Vec::with_capacity(prompt.len() + 2);
    tokens.push(attribute.to_string());
    tokens.extend(prompt.iter().cloned());
    tokens.push(MASK_TOKEN.to_string());
    let text = tokens.join(" ");
    let mask_index = tokens.len() - 1;
    backend.mask_logprobs(&MaskedQuery::new(TokenSequence::new(tokens, text)?, mask_index)?)
}

/// Scores one prompt: JSD between `[m] prompt [MASK]` and `[f] prompt [MASK]`
/// for every attribute pair. Pairs whose attributes are not single tokens are
/// skipped and listed in the result.
pub fn probe_bias(spec: &JsdProbeSpec, prompt: &[String], backend: &dyn Backend) -> Result<JsdResult> {
    spec.validate()?;
    let outcomes: Vec<Result<std::result::Result<f64, SkippedPair>>> = spec
        .attribute_pairs
        .par_iter()
        .map(|(m, f)| {
            for a in [m, f] {
                if !backend.is_single_token(a)? {
                    return Ok(Err(SkippedPair {
                        male: m.clone(),
                        female: f.clone(),
                        reason: format!("{a:?} is not a single vocabulary token"),
                    }));
                }
            }
            let pm = conditioned(backend, m, prompt)?;
            let pf = conditioned(backend, f, prompt)?;
            let d = if spec.full_vocab {
                jsd_full(&pm, &pf)
            } else {
                jsd(&pm, &pf, &spec.stereotype_targets)
            };
            d.map(Ok).map_err(|e| match e {
                Error::InvalidArgument(msg) => {
                    Error::invalid(format!("pair ({m}, {f}) with prompt {prompt:?}: {msg}"))
                }
                other => other,
            })
        })
        .collect();
    let mut per_pair_jsd = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o? {
            Ok(d) => per_pair_jsd.push(d),
            Err(s) => skipped.push(s),
        }
    }
    if per_pair_jsd.is_empty() {
        return Err(Error::MetricUndefined);
    }
    let mean_jsd = per_pair_jsd.iter().sum::<f64>() / per_pair_jsd.len() as f64;
    Ok(JsdResult {
        prompt: prompt.to_vec(),
        per_pair_jsd,
        mean_jsd,
        skipped,
    })
}

/// Descending score, then ascending prompt.
fn rank(a: &JsdResult, b: &JsdResult) -> Ordering {
    b.mean_jsd
        .total_cmp(&a.mean_jsd)
        .then_with(|| a.prompt.cmp(&b.prompt))
}

/// Beam search over `prompt_vocab`, one token per round, keeping the
/// `beam_width` highest-scoring prompts. Returns full-length prompts ranked by
/// descending mean JSD (at most `beam_width`, fewer if the space is smaller).
pub fn search_biased_prompts(spec: &JsdProbeSpec, backend: &dyn Backend) -> Result<Vec<JsdResult>> {
    spec.validate()?;
    let mut beam = vec![probe_bias(spec, &[], backend)?];
    for _ in 0..spec.prompt_length {
        let candidates: Vec<Vec<String>> = beam
            .iter()
            .flat_map(|r| {
                spec.prompt_vocab.iter().map(move |t| {
                    let mut p = r.prompt.clone();
                    p.push(t.clone());
                    p
                })
            })
            .collect();
        let mut scored: Vec<JsdResult> = candidates
            .par_iter()
            .map(|p| probe_bias(spec, p, backend))
            .collect::<Result<_>>()?;
        scored.sort_by(rank);
        scored.truncate(spec.beam_width);
        beam = scored;
    }
    Ok(beam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ToyBackend;

    fn dist(entries: &[(&str, f64)]) -> VocabDistribution {
        VocabDistribution::new(
            entries.iter().map(|&(t, p)| (t.to_string(), p.ln())).collect(),
            false,
        )
        .unwrap()
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn oracle_values() {
        // values from a direct evaluation of the definition in double precision
        let d = jsd_probs(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((d - 0.033822075568605205).abs() < 1e-12, "{d}");
        let d = jsd_probs(&[0.2, 0.3, 0.5], &[0.5, 0.3, 0.2]).unwrap();
        assert!((d - 0.06641431438228168).abs() < 1e-12, "{d}");
        assert!((jsd_probs(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - LN_2).abs() < 1e-15);
        assert_eq!(jsd_probs(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn restriction_renormalises() {
        let p = dist(&[("a", 0.1), ("b", 0.1), ("z", 0.8)]);
        let q = dist(&[("a", 0.05), ("b", 0.15), ("y", 0.8)]);
        let d = jsd(&p, &q, &s(&["a", "b"])).unwrap();
        let expect = jsd_probs(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((d - expect).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let p = dist(&[("a", 0.5)]);
        assert!(matches!(jsd(&p, &p, &[]), Err(Error::EmptyInput)));
        assert!(jsd(&p, &p, &s(&["q"])).is_err());
    }

    #[test]
    fn flat_backend_gives_zero() {
        let b = ToyBackend::new(1).with_flat_scores();
        let spec = JsdProbeSpec {
            attribute_pairs: vec![("hu".into(), "hi".into())],
            prompt_vocab: s(&["huwa", "kien"]),
            stereotype_targets: s(&["tabib", "infermier"]),
            beam_width: 2,
            prompt_length: 1,
            full_vocab: false,
        };
        let r = probe_bias(&spec, &s(&["kien"]), &b).unwrap();
        assert_eq!(r.per_pair_jsd, vec![0.0]);
    }

    #[test]
    fn degenerate_length_returns_empty_prompt() {
        let b = ToyBackend::new(3);
        let spec = JsdProbeSpec {
            attribute_pairs: vec![("hu".into(), "hi".into())],
            prompt_vocab: vec![],
            stereotype_targets: s(&["tabib", "infermier", "għalliem"]),
            beam_width: 4,
            prompt_length: 0,
            full_vocab: false,
        };
        let r = search_biased_prompts(&spec, &b).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].prompt.is_empty());
        assert_eq!(r[0], probe_bias(&spec, &[], &b).unwrap());
    }

    #[test]
    fn multiword_attribute_is_skipped() {
        let b = ToyBackend::new(3);
        let spec = JsdProbeSpec {
            attribute_pairs: vec![("hu".into(), "hi".into()), ("is-sur".into(), "is-sinjura".into())],
            prompt_vocab: s(&["kien"]),
            stereotype_targets: s(&["tabib", "infermier"]),
            beam_width: 1,
            prompt_length: 1,
            full_vocab: false,
        };
        let r = probe_bias(&spec, &s(&["kien"]), &b).unwrap();
        assert_eq!(r.per_pair_jsd.len(), 1);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].male, "is-sur");
    }
}
