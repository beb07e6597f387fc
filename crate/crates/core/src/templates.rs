//! Template probing: fill `[X]` with a gendered subject, rank the `[MASK]`
//! predictions and compare male against female rankings.
//!
//! Some templates make a model continue the preceding verb with a pronominal
//! suffix instead of predicting a noun. When the top prediction looks like such a
//! continuation the query is retried once with a coercion prefix (a definite
//! article such as `il-`) placed in front of `[MASK]`.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, MaskedQuery, MASK_TOKEN};
use crate::error::{Error, Result};

pub const SUBJECT_SLOT: &str = "[X]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub text: String,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun_coercion_prefix: Option<String>,
    /// Variant with feminine agreement used for female subjects (e.g. `taħdem`
    /// for `jaħdem`). Falls back to `text`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub female_text: Option<String>,
}

impl TemplateSpec {
    pub fn new(text: impl Into<String>, language: impl Into<String>) -> Result<Self> {
        let spec = Self {
            text: text.into(),
            language: language.into(),
            noun_coercion_prefix: None,
            female_text: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Result<Self> {
        self.noun_coercion_prefix = Some(prefix.into());
        self.validate()?;
        Ok(self)
    }

    pub fn with_female_text(mut self, text: impl Into<String>) -> Result<Self> {
        self.female_text = Some(text.into());
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_placeholders(&self.text)?;
        if let Some(f) = &self.female_text {
            check_placeholders(f)?;
        }
        if matches!(&self.noun_coercion_prefix, Some(p) if p.is_empty()) {
            return Err(Error::invalid("noun coercion prefix is empty"));
        }
        Ok(())
    }

    fn text_for(&self, female: bool) -> &str {
        match (&self.female_text, female) {
            (Some(f), true) => f,
            _ => &self.text,
        }
    }
}

fn check_placeholders(text: &str) -> Result<()> {
    for slot in [SUBJECT_SLOT, MASK_TOKEN] {
        match text.matches(slot).count() {
            1 => {}
            0 => return Err(Error::invalid(format!("template {text:?} has no {slot}"))),
            _ => return Err(Error::invalid(format!("template {text:?} has more than one {slot}"))),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSet {
    pub label: String,
    pub male_subjects: Vec<String>,
    pub female_subjects: Vec<String>,
}

impl SubjectSet {
    pub fn validate(&self) -> Result<()> {
        if self.male_subjects.len() != self.female_subjects.len() {
            return Err(Error::invalid(format!(
                "subject set {:?}: {} male vs {} female subjects",
                self.label,
                self.male_subjects.len(),
                self.female_subjects.len()
            )));
        }
        if self.male_subjects.iter().chain(&self.female_subjects).any(|s| s.trim().is_empty()) {
            return Err(Error::invalid(format!("subject set {:?} has an empty subject", self.label)));
        }
        Ok(())
    }
}

/// Retry trigger for verb continuations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NounCoercion {
    pub continuation_marker: String,
    pub suffixes: Vec<String>,
}

impl Default for NounCoercion {
    fn default() -> Self {
        Self {
            continuation_marker: "##".into(),
            suffixes: ["ha", "hom", "u", "ni", "k"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl NounCoercion {
    /// True when `token` looks like a suffix glued onto the previous word.
    pub fn is_continuation(&self, token: &str) -> bool {
        if !self.continuation_marker.is_empty() && token.starts_with(&self.continuation_marker) {
            return true;
        }
        let bare = token.trim_start_matches('-');
        self.suffixes.iter().any(|s| s == bare)
    }
}

/// Replaces `[X]` with `subject`, capitalizing the subject when it opens the sentence.
pub fn instantiate(template: &str, subject: &str) -> Result<String> {
    check_placeholders(template)?;
    let filled = if template.starts_with(SUBJECT_SLOT) {
        let mut chars = subject.chars();
        let capitalized: String = match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
        template.replacen(SUBJECT_SLOT, &capitalized, 1)
    } else {
        template.replacen(SUBJECT_SLOT, subject, 1)
    };
    Ok(filled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedToken {
    pub rank: usize,
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRanking {
    pub subject: String,
    /// The sentence actually queried (after instantiation and any retry).
    pub template: String,
    pub entries: Vec<RankedToken>,
    pub coerced: bool,
}

impl PredictionRanking {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.token.as_str())
    }
}

fn query_topk(sentence: &str, backend: &dyn Backend, k: usize) -> Result<Vec<RankedToken>> {
    let tokens = backend.tokenize(sentence)?;
    let mask = tokens
        .mask_position()
        .ok_or_else(|| Error::invalid(format!("{sentence:?} lost its mask during tokenization")))?;
    let dist = backend.mask_logprobs(&MaskedQuery::new(tokens, mask)?.with_topk(k)?)?;
    Ok(dist
        .entries()
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (token, lp))| RankedToken {
            rank: i + 1,
            token: token.clone(),
            logprob: *lp,
        })
        .collect())
}

fn rank_text(
    text: &str,
    prefix: Option<&str>,
    subject: &str,
    backend: &dyn Backend,
    k: usize,
    coercion: Option<&NounCoercion>,
) -> Result<PredictionRanking> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let sentence = instantiate(text, subject)?;
    let entries = query_topk(&sentence, backend, k)?;
    let retry = match (coercion, prefix, entries.first()) {
        (Some(c), Some(p), Some(top)) if c.is_continuation(&top.token) => Some(p),
        _ => None,
    };
    if let Some(prefix) = retry {
        let coerced_sentence = sentence.replacen(MASK_TOKEN, &format!("{prefix}{MASK_TOKEN}"), 1);
        let entries = query_topk(&coerced_sentence, backend, k)?;
        return Ok(PredictionRanking {
            subject: subject.to_string(),
            template: coerced_sentence,
            entries,
            coerced: true,
        });
    }
    Ok(PredictionRanking {
        subject: subject.to_string(),
        template: sentence,
        entries,
        coerced: false,
    })
}

/// Top-`k` predictions for one subject. With `noun_filter`, a verb-continuation
/// top-1 triggers a single retry using the template's coercion prefix.
pub fn rank_predictions(
    template: &TemplateSpec,
    subject: &str,
    backend: &dyn Backend,
    k: usize,
    noun_filter: Option<&NounCoercion>,
) -> Result<PredictionRanking> {
    template.validate()?;
    rank_text(
        &template.text,
        template.noun_coercion_prefix.as_deref(),
        subject,
        backend,
        k,
        noun_filter,
    )
}

/// Jaccard overlap of two token sets; two empty sets overlap fully.
pub fn jaccard<'a>(a: impl IntoIterator<Item = &'a str>, b: impl IntoIterator<Item = &'a str>) -> f64 {
    let a: BTreeSet<&str> = a.into_iter().collect();
    let b: BTreeSet<&str> = b.into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub male: PredictionRanking,
    pub female: PredictionRanking,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderContrast {
    pub label: String,
    pub rows: Vec<ContrastRow>,
    pub mean_overlap: f64,
}

/// Ranks every aligned male/female subject pair and measures top-`k` overlap.
pub fn gender_contrast(
    template: &TemplateSpec,
    subjects: &SubjectSet,
    backend: &dyn Backend,
    k: usize,
    noun_filter: Option<&NounCoercion>,
) -> Result<GenderContrast> {
    template.validate()?;
    subjects.validate()?;
    let prefix = template.noun_coercion_prefix.as_deref();
    let rows = subjects
        .male_subjects
        .par_iter()
        .zip(subjects.female_subjects.par_iter())
        .map(|(m, f)| {
            let male = rank_text(template.text_for(false), prefix, m, backend, k, noun_filter)?;
            let female = rank_text(template.text_for(true), prefix, f, backend, k, noun_filter)?;
            let overlap = jaccard(male.tokens(), female.tokens());
            Ok(ContrastRow { male, female, overlap })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_overlap = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.overlap).sum::<f64>() / rows.len() as f64
    };
    Ok(GenderContrast {
        label: subjects.label.clone(),
        rows,
        mean_overlap,
    })
}

/// One JSON object per line; blank lines are skipped.
pub fn load_templates(path: impl AsRef<Path>) -> Result<Vec<TemplateSpec>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let spec: TemplateSpec = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        spec.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(spec);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

/// Accepts either a single subject set or an array of them.
pub fn load_subjects(path: impl AsRef<Path>) -> Result<Vec<SubjectSet>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(SubjectSet),
        Many(Vec<SubjectSet>),
    }
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let sets = match serde_json::from_str(&raw)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    };
    for s in &sets {
        s.validate()?;
    }
    if sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(sets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateResult {
    pub template: TemplateSpec,
    pub contrasts: Vec<GenderContrast>,
}

/// Runs every template against every subject set, in file order.
pub fn probe_all(
    templates: &[TemplateSpec],
    subjects: &[SubjectSet],
    backend: &dyn Backend,
    k: usize,
    noun_filter: Option<&NounCoercion>,
) -> Result<Vec<TemplateResult>> {
    templates
        .iter()
        .map(|t| {
            let contrasts = subjects
                .iter()
                .map(|s| gender_contrast(t, s, backend, k, noun_filter))
                .collect::<Result<Vec<_>>>()?;
            Ok(TemplateResult {
                template: t.clone(),
                contrasts,
            })
        })
        .collect()
}

fn ranking_table(title: &str, rankings: &[&PredictionRanking]) -> String {
    let mut out = format!("**Template:** {title}\n\n| Ranking |");
    for r in rankings {
        out.push_str(&format!(" [X] = {}{} |", r.subject, if r.coerced { " (coerced)" } else { "" }));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(rankings.len()));
    out.push('\n');
    let depth = rankings.iter().map(|r| r.entries.len()).max().unwrap_or(0);
    for rank in 0..depth {
        out.push_str(&format!("| {} |", rank + 1));
        for r in rankings {
            let cell = r.entries.get(rank).map_or("", |e| e.token.as_str());
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

/// Markdown in the ranking-table layout: one table of male subjects and one of
/// female subjects per template, ranks as rows.
pub fn render_markdown(results: &[TemplateResult]) -> String {
    let mut out = String::new();
    for res in results {
        let male: Vec<&PredictionRanking> = res.contrasts.iter().flat_map(|c| c.rows.iter().map(|r| &r.male)).collect();
        let female: Vec<&PredictionRanking> =
            res.contrasts.iter().flat_map(|c| c.rows.iter().map(|r| &r.female)).collect();
        out.push_str(&ranking_table(&res.template.text, &male));
        out.push('\n');
        out.push_str(&ranking_table(res.template.text_for(true), &female));
        out.push('\n');
        for c in &res.contrasts {
            out.push_str(&format!("Mean top-k overlap ({}): {:.3}\n\n", c.label, c.mean_overlap));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ModelInfo, Pooling, SentenceEmbedding, ToyBackend, TokenSequence, VocabDistribution};

    #[test]
    fn instantiates_examples() {
        assert_eq!(instantiate("[X] jaħdem bħala [MASK].", "Hu").unwrap(), "Hu jaħdem bħala [MASK].");
        assert_eq!(
            instantiate("[X] taħdem bħala [MASK].", "Ġovanna").unwrap(),
            "Ġovanna taħdem bħala [MASK]."
        );
        assert_eq!(instantiate("[X] qatt ma jħobb [MASK]", "hu").unwrap(), "Hu qatt ma jħobb [MASK]");
        assert_eq!(instantiate("Jien naf li [X] [MASK].", "hu").unwrap(), "Jien naf li hu [MASK].");
        assert!(instantiate("[X] jaħdem.", "Hu").is_err());
        assert!(instantiate("jaħdem [MASK].", "Hu").is_err());
    }

    #[test]
    fn continuation_detection() {
        let c = NounCoercion::default();
        assert!(c.is_continuation("ha"));
        assert!(c.is_continuation("-ha"));
        assert!(c.is_continuation("##ni"));
        assert!(!c.is_continuation("tabib"));
        assert!(!c.is_continuation("hawn"));
    }

    #[test]
    fn toy_ranking_is_ordered_and_deterministic() {
        let b = ToyBackend::new(42);
        let t = TemplateSpec::new("[X] jaħdem bħala [MASK].", "mt").unwrap();
        let r1 = rank_predictions(&t, "Hu", &b, 3, None).unwrap();
        let r2 = rank_predictions(&t, "Hu", &b, 3, None).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.entries.len(), 3);
        assert_eq!(r1.entries.iter().map(|e| e.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(r1.entries.windows(2).all(|w| w[0].logprob >= w[1].logprob));
        assert!(!r1.coerced);
    }

    /// Predicts the suffix "ha" unless an article precedes the mask.
    struct SuffixHappy;

    impl Backend for SuffixHappy {
        fn tokenize(&self, text: &str) -> Result<TokenSequence> {
            TokenSequence::new(crate::backend::toy_tokenize(text)?, text)
        }
        fn embed(&self, _: &str) -> Result<SentenceEmbedding> {
            unimplemented!()
        }
        fn mask_logprobs(&self, q: &MaskedQuery) -> Result<VocabDistribution> {
            let toks = q.tokens.tokens();
            let after_article = q.mask_index >= 2 && toks[q.mask_index - 1] == "-" && toks[q.mask_index - 2] == "il";
            let entries = if after_article {
                vec![("ktieb".to_string(), -0.5), ("ha".to_string(), -2.0)]
            } else {
                vec![("ha".to_string(), -0.1), ("ktieb".to_string(), -3.0)]
            };
            VocabDistribution::new(entries, false)
        }
        fn info(&self) -> Result<ModelInfo> {
            unimplemented!()
        }
        fn pooling(&self) -> Pooling {
            Pooling::Mean
        }
    }

    #[test]
    fn retry_inserts_article_once() {
        let t = TemplateSpec::new("[X] qatt ma jħobb [MASK]", "mt").unwrap().with_prefix("il-").unwrap();
        let c = NounCoercion::default();
        let r = rank_predictions(&t, "Hu", &SuffixHappy, 2, Some(&c)).unwrap();
        assert!(r.coerced);
        assert_eq!(r.template, "Hu qatt ma jħobb il-[MASK]");
        assert_eq!(r.entries[0].token, "ktieb");

        let plain = rank_predictions(&t, "Hu", &SuffixHappy, 2, None).unwrap();
        assert!(!plain.coerced);
        assert_eq!(plain.entries[0].token, "ha");
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(["a", "b"], ["b", "a"]), 1.0);
        assert_eq!(jaccard(["a", "b"], ["c", "d"]), 0.0);
        let m = ["tabib", "għalliem", "maxtrudaxxa", "avukat", "pijunier"];
        let f = ["pijuniera", "għalliema", "infermier", "segretarja", "tabib"];
        assert!((jaccard(m, f) - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(jaccard(m, f), jaccard(f, m));
    }

    #[test]
    fn contrast_uses_female_variant() {
        let b = ToyBackend::new(42);
        let t = TemplateSpec::new("[X] jaħdem bħala [MASK].", "mt")
            .unwrap()
            .with_female_text("[X] taħdem bħala [MASK].")
            .unwrap();
        let s = SubjectSet {
            label: "pronouns".into(),
            male_subjects: vec!["Hu".into()],
            female_subjects: vec!["Hi".into()],
        };
        let c = gender_contrast(&t, &s, &b, 5, None).unwrap();
        assert_eq!(c.rows[0].female.template, "Hi taħdem bħala [MASK].");
        assert!((0.0..=1.0).contains(&c.rows[0].overlap));
    }

    #[test]
    fn misaligned_subjects_rejected() {
        let s = SubjectSet {
            label: "x".into(),
            male_subjects: vec!["Hu".into(), "John".into()],
            female_subjects: vec!["Hi".into()],
        };
        assert!(s.validate().is_err());
    }
}
