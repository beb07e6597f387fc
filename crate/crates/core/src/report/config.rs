use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::BackendDescriptor;
use crate::cda::CdaMode;
use crate::error::{Error, Result};
use crate::seat::DEFAULT_TESTS;
use crate::viz::TsneConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Seat,
    Crows,
    Templates,
    Cda,
    Jsd,
    Tsne,
}

impl Task {
    pub const ALL: [Task; 6] = [Task::Seat, Task::Crows, Task::Templates, Task::Cda, Task::Jsd, Task::Tsne];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Seat => "seat",
            Task::Crows => "crows",
            Task::Templates => "templates",
            Task::Cda => "cda",
            Task::Jsd => "jsd",
            Task::Tsne => "tsne",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task {s:?}")))
    }
}

/// Backend given either as a descriptor string (`"toy:seed=7"`) or a table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum BackendField {
    Text(String),
    Table(BackendDescriptor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeatTask {
    pub tests_dir: PathBuf,
    #[serde(default = "default_seat_tests")]
    pub tests: Vec<String>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
}

fn default_seat_tests() -> Vec<String> {
    DEFAULT_TESTS.iter().map(|s| s.to_string()).collect()
}

fn default_n_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrowsTask {
    pub pairs: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatesTask {
    pub templates: PathBuf,
    pub subjects: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_true")]
    pub noun_coercion: bool,
}

fn default_k() -> usize {
    5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdaTask {
    pub corpus: PathBuf,
    pub wordlist: PathBuf,
    #[serde(default = "default_language")]
    pub language: String,
    #[serde(default = "default_mode")]
    pub mode: CdaMode,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    #[serde(default = "default_true")]
    pub preserve_case: bool,
    /// Size of the audit sample; 0 skips the audit sheet.
    #[serde(default)]
    pub audit_n: usize,
}

fn default_language() -> String {
    "mt".into()
}

fn default_mode() -> CdaMode {
    CdaMode::TwoSided
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsdTask {
    pub spec: PathBuf,
    pub beam_width: Option<usize>,
    pub prompt_length: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneTask {
    pub words: PathBuf,
    pub perplexity: Option<f64>,
    pub iterations: Option<usize>,
    pub learning_rate: Option<f64>,
}

impl TsneTask {
    pub fn config(&self, seed: u64) -> TsneConfig {
        let mut cfg = TsneConfig::default().with_seed(seed);
        if let Some(p) = self.perplexity {
            cfg.perplexity = p;
        }
        if let Some(i) = self.iterations {
            cfg.iterations = i;
            cfg.early_exaggeration_iters = cfg.early_exaggeration_iters.min(i);
        }
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    backend: BackendField,
    tasks: Vec<Task>,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    label: Option<String>,
    #[serde(default)]
    parallel_tasks: bool,
    seat: Option<SeatTask>,
    crows: Option<CrowsTask>,
    templates: Option<TemplatesTask>,
    cda: Option<CdaTask>,
    jsd: Option<JsdTask>,
    tsne: Option<TsneTask>,
}

fn default_seed() -> u64 {
    42
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A run: which backend, which tasks in which order, and each task's inputs.
/// The global seed feeds every stochastic step (permutation sampling, CDA
/// shuffle, t-SNE initialisation).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub backend: BackendDescriptor,
    pub tasks: Vec<Task>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub label: Option<String>,
    pub parallel_tasks: bool,
    pub seat: Option<SeatTask>,
    pub crows: Option<CrowsTask>,
    pub templates: Option<TemplatesTask>,
    pub cda: Option<CdaTask>,
    pub jsd: Option<JsdTask>,
    pub tsne: Option<TsneTask>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let origin = base.to_path_buf();
        let cfg_err = |message: String| Error::Config {
            path: origin.clone(),
            message,
        };
        let raw: RawConfig = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        let backend = match raw.backend {
            BackendField::Text(s) => s.parse().map_err(|e: Error| cfg_err(e.to_string()))?,
            BackendField::Table(d) => d,
        };
        let mut cfg = RunConfig {
            backend,
            tasks: raw.tasks,
            seed: raw.seed,
            output_dir: raw.output_dir,
            label: raw.label,
            parallel_tasks: raw.parallel_tasks,
            seat: raw.seat,
            crows: raw.crows,
            templates: raw.templates,
            cda: raw.cda,
            jsd: raw.jsd,
            tsne: raw.tsne,
        };
        cfg.rebase_paths(base);
        cfg.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config { message, .. } => Error::Config {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    fn rebase_paths(&mut self, base: &Path) {
        rebase(base, &mut self.output_dir);
        if let Some(t) = &mut self.seat {
            rebase(base, &mut t.tests_dir);
        }
        if let Some(t) = &mut self.crows {
            rebase(base, &mut t.pairs);
        }
        if let Some(t) = &mut self.templates {
            rebase(base, &mut t.templates);
            rebase(base, &mut t.subjects);
        }
        if let Some(t) = &mut self.cda {
            rebase(base, &mut t.corpus);
            rebase(base, &mut t.wordlist);
        }
        if let Some(t) = &mut self.jsd {
            rebase(base, &mut t.spec);
        }
        if let Some(t) = &mut self.tsne {
            rebase(base, &mut t.words);
        }
        if let crate::backend::BackendKind::Fixture { fixture_dir } = &mut self.backend.kind {
            rebase(base, fixture_dir);
        }
        if let crate::backend::BackendKind::Toy {
            vocab_corpus: Some(p), ..
        } = &mut self.backend.kind
        {
            rebase(base, p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::invalid("at least one task is required"));
        }
        let mut seen = HashSet::new();
        for t in &self.tasks {
            if !seen.insert(*t) {
                return Err(Error::invalid(format!("task {t} listed twice")));
            }
            let present = match t {
                Task::Seat => self.seat.is_some(),
                Task::Crows => self.crows.is_some(),
                Task::Templates => self.templates.is_some(),
                Task::Cda => self.cda.is_some(),
                Task::Jsd => self.jsd.is_some(),
                Task::Tsne => self.tsne.is_some(),
            };
            if !present {
                return Err(Error::invalid(format!("task {t} has no [{t}] block")));
            }
        }
        if let Some(t) = &self.seat {
            if t.tests.is_empty() {
                return Err(Error::invalid("seat.tests is empty"));
            }
            if t.n_samples < 100 {
                return Err(Error::invalid("seat.n_samples must be at least 100"));
            }
        }
        if let Some(t) = &self.templates {
            if t.k == 0 {
                return Err(Error::invalid("templates.k must be positive"));
            }
        }
        if let Some(t) = &self.tsne {
            let cfg = t.config(self.seed);
            if cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 || cfg.perplexity <= 1.0 {
                return Err(Error::invalid("tsne.perplexity must exceed 1 and learning_rate be positive"));
            }
        }
        self.backend.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
backend = "toy:seed=3"
tasks = ["seat", "crows"]
seed = 9
output_dir = "results"

[seat]
tests_dir = "seat"
tests = ["a"]

[crows]
pairs = "/abs/pairs.csv"
"#;

    #[test]
    fn parses_and_rebases() {
        let cfg = RunConfig::from_toml_str(FULL, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.tasks, vec![Task::Seat, Task::Crows]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.output_dir, PathBuf::from("/cfg/results"));
        assert_eq!(cfg.seat.unwrap().tests_dir, PathBuf::from("/cfg/seat"));
        assert_eq!(cfg.crows.unwrap().pairs, PathBuf::from("/abs/pairs.csv"));
        assert_eq!(cfg.backend.to_string(), "toy:seed=3");
    }

    #[test]
    fn backend_as_table() {
        let text = FULL.replace(r#"backend = "toy:seed=3""#, "[backend]\nkind = \"toy\"\nseed = 5\n");
        // a table must come after top-level keys, so move it to the end
        let (head, tail) = text.split_once("[backend]").unwrap();
        let (table, rest) = tail.split_once("\n\n").unwrap();
        let reordered = format!("{head}{rest}\n[backend]{table}\n");
        let cfg = RunConfig::from_toml_str(&reordered, Path::new("/")).unwrap();
        assert_eq!(cfg.backend.to_string(), "toy:seed=5");
    }

    #[test]
    fn invalid_configs() {
        let base = Path::new("/");
        for bad in [
            FULL.replace(r#"tasks = ["seat", "crows"]"#, "tasks = []"),
            FULL.replace(r#"tasks = ["seat", "crows"]"#, r#"tasks = ["seat", "jsd"]"#),
            FULL.replace(r#"tasks = ["seat", "crows"]"#, r#"tasks = ["seat", "seat"]"#),
            FULL.replace(r#"tasks = ["seat", "crows"]"#, r#"tasks = ["bogus"]"#),
            FULL.replace("seed = 9", "seed = 9\nextra = 1"),
        ] {
            assert!(matches!(RunConfig::from_toml_str(&bad, base), Err(Error::Config { .. })), "{bad}");
        }
    }
}
