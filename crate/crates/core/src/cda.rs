//! Counterfactual data augmentation.
//!
//! A [`GenderWordlist`] maps single words to their opposite-gender counterpart in
//! both directions. [`swap_sentence`] replaces every whole-word occurrence and
//! carries the casing pattern across; it does not repair grammatical agreement.
//! [`augment_corpus`] streams a one-sentence-per-line corpus into a one- or
//! two-sided augmented corpus, shuffled by a seeded permutation of line indices.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GenderWordlist {
    pairs: Vec<(String, String)>,
    language: String,
    lookup: HashMap<String, String>,
}

fn normalize_word(w: &str) -> String {
    w.nfc().collect::<String>().to_lowercase()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

impl GenderWordlist {
    pub fn new(pairs: Vec<(String, String)>, language: impl Into<String>) -> Result<Self> {
        Self::build(pairs.into_iter().map(|p| (0, p)), language.into(), None)
    }

    fn build(
        rows: impl Iterator<Item = (usize, (String, String))>,
        language: String,
        path: Option<&Path>,
    ) -> Result<Self> {
        let fail = |line: usize, message: String| match path {
            Some(p) => Error::Parse {
                path: p.to_path_buf(),
                line,
                message,
            },
            None => Error::invalid(message),
        };
        let mut pairs = Vec::new();
        let mut lookup: HashMap<String, String> = HashMap::new();
        let mut side: HashMap<String, &'static str> = HashMap::new();
        for (line, (male, female)) in rows {
            let (m, f) = (normalize_word(male.trim()), normalize_word(female.trim()));
            for w in [&m, &f] {
                if w.is_empty() {
                    return Err(fail(line, "empty word".into()));
                }
                if !w.chars().all(is_word_char) {
                    return Err(fail(line, format!("{w:?} is not a single word")));
                }
            }
            if m == f {
                return Err(fail(line, format!("male and female forms are identical: {m:?}")));
            }
            for (w, this_side) in [(&m, "male"), (&f, "female")] {
                if let Some(prev) = side.get(w) {
                    let msg = if *prev == this_side {
                        format!("duplicate {this_side}-side entry {w:?}")
                    } else {
                        format!("{w:?} appears on both sides")
                    };
                    return Err(fail(line, msg));
                }
            }
            side.insert(m.clone(), "male");
            side.insert(f.clone(), "female");
            lookup.insert(m.clone(), f.clone());
            lookup.insert(f.clone(), m.clone());
            pairs.push((m, f));
        }
        if pairs.is_empty() {
            return Err(match path {
                Some(p) => Error::Parse {
                    path: p.to_path_buf(),
                    line: 0,
                    message: "empty wordlist".into(),
                },
                None => Error::EmptyInput,
            });
        }
        Ok(Self {
            pairs,
            language,
            lookup,
        })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Counterpart of a word in either direction (case-insensitive).
    pub fn counterpart(&self, word: &str) -> Option<&str> {
        self.lookup.get(&normalize_word(word)).map(String::as_str)
    }
}

/// Reads a two-column `male<TAB>female` file. Blank lines and `#` comments are skipped.
pub fn load_wordlist(path: impl AsRef<Path>, language: &str) -> Result<GenderWordlist> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut rows = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 2 tab-separated columns, found {}", cols.len()),
            });
        }
        rows.push((line_no, (cols[0].to_string(), cols[1].to_string())));
    }
    GenderWordlist::build(rows.into_iter(), language.to_string(), Some(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CasePattern {
    Lower,
    Capitalized,
    Upper,
}

fn case_pattern(word: &str) -> CasePattern {
    let mut chars = word.chars().filter(|c| c.is_alphabetic());
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    let rest: Vec<char> = chars.collect();
    let rest_upper = rest.iter().filter(|c| c.is_uppercase()).count();
    match (first_upper, rest.is_empty(), rest_upper == rest.len()) {
        (false, _, _) => CasePattern::Lower,
        (true, true, _) => CasePattern::Capitalized,
        (true, false, true) => CasePattern::Upper,
        // mixed case keeps only the first-letter case
        (true, false, false) => CasePattern::Capitalized,
    }
}

fn apply_case(lower: &str, pattern: CasePattern) -> String {
    match pattern {
        CasePattern::Lower => lower.to_string(),
        CasePattern::Upper => lower.to_uppercase(),
        CasePattern::Capitalized => {
            let mut chars = lower.chars();
            match chars.next() {
                Some(c) => c.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        }
    }
}

/// Swaps gendered words, transferring the casing pattern of each replaced word.
pub fn swap_sentence(sentence: &str, wl: &GenderWordlist) -> (String, bool) {
    swap_sentence_with(sentence, wl, true)
}

pub fn swap_sentence_with(sentence: &str, wl: &GenderWordlist, preserve_case: bool) -> (String, bool) {
    let mut out = String::with_capacity(sentence.len());
    let mut changed = false;
    let mut rest = sentence;
    while !rest.is_empty() {
        let word_len: usize = rest
            .char_indices()
            .find(|&(_, c)| !is_word_char(c))
            .map_or(rest.len(), |(i, _)| i);
        if word_len == 0 {
            let c = rest.chars().next().expect("non-empty");
            out.push(c);
            rest = &rest[c.len_utf8()..];
            continue;
        }
        let word = &rest[..word_len];
        match wl.counterpart(word) {
            Some(other) => {
                let pattern = if preserve_case { case_pattern(word) } else { CasePattern::Lower };
                out.push_str(&apply_case(other, pattern));
                changed = true;
            }
            None => out.push_str(word),
        }
        rest = &rest[word_len..];
    }
    (out, changed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdaMode {
    OneSided,
    TwoSided,
}

impl std::str::FromStr for CdaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-sided" | "one_sided" => Ok(CdaMode::OneSided),
            "two-sided" | "two_sided" => Ok(CdaMode::TwoSided),
            other => Err(Error::invalid(format!("unknown CDA mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdaConfig {
    pub mode: CdaMode,
    /// Shuffle the output with this seed; `None` keeps corpus order.
    pub shuffle_seed: Option<u64>,
    #[serde(default = "default_true")]
    pub preserve_case: bool,
}

fn default_true() -> bool {
    true
}

impl Default for CdaConfig {
    fn default() -> Self {
        Self {
            mode: CdaMode::TwoSided,
            shuffle_seed: Some(13),
            preserve_case: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdaStats {
    pub n_input: u64,
    pub n_swapped: u64,
    pub swap_fraction: f64,
    pub n_output: u64,
}

/// Where [`augment_corpus`] writes.
#[derive(Debug, Clone)]
pub struct CdaOutputs {
    pub corpus: PathBuf,
    /// Optional file receiving only the counterfactual sentences, in corpus order;
    /// the input to [`audit_sample`].
    pub counterfactuals: Option<PathBuf>,
}

fn strip_eol(line: &mut String) {
    while line.ends_with('\n') || line.ends_with('\r') {
        line.pop();
    }
}

/// Augments a corpus with gender-swapped copies.
///
/// Two passes: the first records byte offsets of non-blank lines and which of
/// them change under swapping; the second writes lines in the (optionally
/// shuffled) output order, re-reading each by offset. Memory grows with the
/// number of lines (one offset each), not with their content.
pub fn augment_corpus(
    corpus: impl AsRef<Path>,
    wl: &GenderWordlist,
    config: &CdaConfig,
    outputs: &CdaOutputs,
) -> Result<CdaStats> {
    let corpus = corpus.as_ref();
    let file = File::open(corpus).map_err(Error::io(corpus))?;
    let mut reader = BufReader::new(file);

    let mut counterfactual_writer = match &outputs.counterfactuals {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(Error::io(p))?)),
        None => None,
    };

    let mut offsets: Vec<u64> = Vec::new();
    let mut changed: Vec<bool> = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(Error::io(corpus))?;
        if n == 0 {
            break;
        }
        let start = offset;
        offset += n as u64;
        strip_eol(&mut line);
        if line.trim().is_empty() {
            continue;
        }
        let (swapped, did_change) = swap_sentence_with(&line, wl, config.preserve_case);
        if did_change {
            if let (Some(w), Some(p)) = (counterfactual_writer.as_mut(), &outputs.counterfactuals) {
                writeln!(w, "{swapped}").map_err(Error::io(p))?;
            }
        }
        offsets.push(start);
        changed.push(did_change);
    }
    if let (Some(mut w), Some(p)) = (counterfactual_writer, &outputs.counterfactuals) {
        w.flush().map_err(Error::io(p))?;
    }

    // Output slots: (input line index, emit swapped?)
    let mut slots: Vec<(usize, bool)> = match config.mode {
        CdaMode::OneSided => (0..offsets.len()).map(|i| (i, changed[i])).collect(),
        CdaMode::TwoSided => (0..offsets.len())
            .map(|i| (i, false))
            .chain((0..offsets.len()).filter(|&i| changed[i]).map(|i| (i, true)))
            .collect(),
    };
    if let Some(seed) = config.shuffle_seed {
        slots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    let out_path = &outputs.corpus;
    let mut writer = BufWriter::new(File::create(out_path).map_err(Error::io(out_path))?);
    for &(idx, swap) in &slots {
        reader.seek(SeekFrom::Start(offsets[idx])).map_err(Error::io(corpus))?;
        line.clear();
        reader.read_line(&mut line).map_err(Error::io(corpus))?;
        strip_eol(&mut line);
        if swap {
            let (swapped, _) = swap_sentence_with(&line, wl, config.preserve_case);
            writeln!(writer, "{swapped}").map_err(Error::io(out_path))?;
        } else {
            writeln!(writer, "{line}").map_err(Error::io(out_path))?;
        }
    }
    writer.flush().map_err(Error::io(out_path))?;

    let n_input = offsets.len() as u64;
    let n_swapped = changed.iter().filter(|&&c| c).count() as u64;
    Ok(CdaStats {
        n_input,
        n_swapped,
        swap_fraction: if n_input == 0 { 0.0 } else { n_swapped as f64 / n_input as f64 },
        n_output: slots.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    /// 1-based line number in the counterfactual file.
    pub id: u64,
    pub sentence: String,
}

/// Seeded uniform sample (without replacement) of `n` counterfactual sentences,
/// written as a TSV annotation sheet `id, sentence, verdict` with an empty
/// verdict column. Reservoir sampling keeps memory at `n` lines.
pub fn audit_sample(
    counterfactuals: impl AsRef<Path>,
    n: usize,
    seed: u64,
    sheet: impl AsRef<Path>,
) -> Result<Vec<AuditRow>> {
    if n == 0 {
        return Err(Error::invalid("audit sample size must be positive"));
    }
    let path = counterfactuals.as_ref();
    let reader = BufReader::new(File::open(path).map_err(Error::io(path))?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<AuditRow> = Vec::with_capacity(n);
    let mut seen = 0u64;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = AuditRow {
            id: i as u64 + 1,
            sentence: line,
        };
        if reservoir.len() < n {
            reservoir.push(row);
        } else {
            let j = rng.gen_range(0..=seen);
            if (j as usize) < n {
                reservoir[j as usize] = row;
            }
        }
        seen += 1;
    }
    if (seen as usize) < n {
        return Err(Error::invalid(format!(
            "requested {n} sentences but only {seen} counterfactuals exist"
        )));
    }
    reservoir.sort_by_key(|r| r.id);

    let sheet = sheet.as_ref();
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(sheet)
        .map_err(|e| Error::invalid(format!("{}: {e}", sheet.display())))?;
    w.write_record(["id", "sentence", "verdict"])?;
    for r in &reservoir {
        w.write_record([r.id.to_string().as_str(), r.sentence.as_str(), ""])?;
    }
    w.flush().map_err(Error::io(sheet))?;
    Ok(reservoir)
}
