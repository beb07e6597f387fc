//! Run configuration, report assembly and comparison, and training manifests.
//!
//! [`run`] executes the configured tasks against one backend and returns a
//! [`RunReport`]. Everything that varies between identical runs (timestamps,
//! wall-clock) lives in [`RunMetadata`], so two runs with the same config,
//! seed and backend give identical [`RunReport::deterministic_json`].

mod compare;
mod config;
mod manifest;
mod markdown;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{write_atomic, Backend, ModelInfo};
use crate::cda::{self, CdaConfig, CdaOutputs, CdaStats};
use crate::crows::{self, CrowsResult};
use crate::error::{Error, Result};
use crate::jsd::{self, JsdProbeSpec, JsdResult};
use crate::seat::{self, SeatOptions, SeatReport};
use crate::templates::{self, NounCoercion, TemplateResult};
use crate::viz::{self, Projection, WordSet};

pub use compare::{compare, render_comparison, Comparison, DeltaRow};
pub use config::{CdaTask, CrowsTask, JsdTask, RunConfig, SeatTask, Task, TemplatesTask, TsneTask};
pub use manifest::{emit_manifest, parse_param, ManifestMethod, TrainingManifest};
pub use markdown::render_markdown;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSummary {
    pub descriptor: String,
    pub pooling: String,
    /// `None` when the backend could not be queried.
    pub info: Option<ModelInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplatesReport {
    pub k: usize,
    pub noun_coercion: bool,
    pub results: Vec<TemplateResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdaReport {
    pub stats: CdaStats,
    /// File names inside the output directory.
    pub augmented_corpus: String,
    pub counterfactuals: String,
    pub audit_sheet: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsdReport {
    pub beam_width: usize,
    pub prompt_length: usize,
    pub full_vocab: bool,
    /// Full-length prompts ranked by mean JSD, best first.
    pub ranked: Vec<JsdResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneReport {
    pub projection: Projection,
    pub svg: String,
    pub coords: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskResult {
    Seat(SeatReport),
    Crows(CrowsResult),
    Templates(TemplatesReport),
    Cda(CdaReport),
    Jsd(JsdReport),
    Tsne(TsneReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<TaskResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TaskReport {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Run-specific values excluded from determinism checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub started_at: String,
    pub finished_at: String,
    pub wall_clock_secs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub toolkit_version: String,
    pub label: Option<String>,
    pub seed: u64,
    pub backend: BackendSummary,
    pub tasks: Vec<TaskReport>,
    #[serde(default)]
    pub metadata: RunMetadata,
}

impl RunReport {
    pub fn task(&self, task: Task) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == task)
    }

    pub fn seat(&self) -> Option<&SeatReport> {
        match self.task(Task::Seat)?.result.as_ref()? {
            TaskResult::Seat(r) => Some(r),
            _ => None,
        }
    }

    pub fn crows(&self) -> Option<&CrowsResult> {
        match self.task(Task::Crows)?.result.as_ref()? {
            TaskResult::Crows(r) => Some(r),
            _ => None,
        }
    }

    pub fn all_ok(&self) -> bool {
        self.tasks.iter().all(TaskReport::is_ok)
    }

    /// 0 when every task succeeded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_ok() {
            0
        } else {
            1
        }
    }

    /// Name shown in tables: the label if set, else the model id.
    pub fn display_name(&self) -> String {
        self.label
            .clone()
            .or_else(|| self.backend.info.as_ref().map(|i| i.model_id.clone()))
            .unwrap_or_else(|| self.backend.descriptor.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// JSON with the metadata block cleared.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.metadata = RunMetadata::default();
        copy.to_json()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// Writes `report.json` and `report.md` atomically into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let json = dir.join(REPORT_JSON);
        let md = dir.join(REPORT_MD);
        write_atomic(&json, self.to_json()?.as_bytes())?;
        write_atomic(&md, render_markdown(self).as_bytes())?;
        Ok((json, md))
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn run_task(task: Task, cfg: &RunConfig, backend: &dyn Backend) -> Result<TaskResult> {
    let missing = || Error::invalid(format!("no [{task}] block"));
    match task {
        Task::Seat => {
            let t = cfg.seat.as_ref().ok_or_else(missing)?;
            let tests = seat::load_tests(&t.tests_dir, &t.tests)?;
            let opts = SeatOptions {
                n_samples: t.n_samples,
                seed: cfg.seed,
            };
            Ok(TaskResult::Seat(seat::run_suite(&tests, backend, opts)?))
        }
        Task::Crows => {
            let t = cfg.crows.as_ref().ok_or_else(missing)?;
            let pairs = crows::load_pairs(&t.pairs)?;
            Ok(TaskResult::Crows(crows::crows_metric(&pairs, backend)?))
        }
        Task::Templates => {
            let t = cfg.templates.as_ref().ok_or_else(missing)?;
            let specs = templates::load_templates(&t.templates)?;
            let subjects = templates::load_subjects(&t.subjects)?;
            let coercion = NounCoercion::default();
            let filter = t.noun_coercion.then_some(&coercion);
            let results = templates::probe_all(&specs, &subjects, backend, t.k, filter)?;
            Ok(TaskResult::Templates(TemplatesReport {
                k: t.k,
                noun_coercion: t.noun_coercion,
                results,
            }))
        }
        Task::Cda => {
            let t = cfg.cda.as_ref().ok_or_else(missing)?;
            let wl = cda::load_wordlist(&t.wordlist, &t.language)?;
            let config = CdaConfig {
                mode: t.mode,
                shuffle_seed: t.shuffle.then_some(cfg.seed),
                preserve_case: t.preserve_case,
            };
            let outputs = CdaOutputs {
                corpus: cfg.output_dir.join("cda_augmented.txt"),
                counterfactuals: Some(cfg.output_dir.join("cda_counterfactuals.txt")),
            };
            let stats = cda::augment_corpus(&t.corpus, &wl, &config, &outputs)?;
            let audit_sheet = if t.audit_n > 0 {
                let sheet = cfg.output_dir.join("cda_audit.tsv");
                let cf = outputs.counterfactuals.as_ref().expect("set above");
                cda::audit_sample(cf, t.audit_n, cfg.seed, &sheet)?;
                Some(file_name(&sheet))
            } else {
                None
            };
            Ok(TaskResult::Cda(CdaReport {
                stats,
                augmented_corpus: file_name(&outputs.corpus),
                counterfactuals: file_name(outputs.counterfactuals.as_ref().expect("set above")),
                audit_sheet,
            }))
        }
        Task::Jsd => {
            let t = cfg.jsd.as_ref().ok_or_else(missing)?;
            let mut spec = JsdProbeSpec::from_json_file(&t.spec)?;
            if let Some(b) = t.beam_width {
                spec.beam_width = b;
            }
            if let Some(l) = t.prompt_length {
                spec.prompt_length = l;
            }
            spec.validate()?;
            spec.check_targets(backend)?;
            let ranked = jsd::search_biased_prompts(&spec, backend)?;
            Ok(TaskResult::Jsd(JsdReport {
                beam_width: spec.beam_width,
                prompt_length: spec.prompt_length,
                full_vocab: spec.full_vocab,
                ranked,
            }))
        }
        Task::Tsne => {
            let t = cfg.tsne.as_ref().ok_or_else(missing)?;
            let words = WordSet::from_json_file(&t.words)?;
            let tcfg = t.config(cfg.seed);
            let projection = viz::project_words(&words, backend, &tcfg)?;
            let svg = cfg.output_dir.join("tsne.svg");
            let coords = cfg.output_dir.join("tsne_coords.json");
            let title = format!("t-SNE ({})", cfg.label.as_deref().unwrap_or("run"));
            write_atomic(&svg, viz::render_svg(&projection, &title).as_bytes())?;
            write_atomic(&coords, (serde_json::to_string_pretty(&projection)? + "\n").as_bytes())?;
            Ok(TaskResult::Tsne(TsneReport {
                projection,
                svg: file_name(&svg),
                coords: file_name(&coords),
            }))
        }
    }
}

/// Executes every task in declared order against a connected backend. A failing
/// task is recorded in its entry and does not stop the others. Nothing is
/// written besides task artifacts; see [`RunReport::write`].
pub fn run_with_backend(cfg: &RunConfig, backend: &dyn Backend) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(Error::io(&cfg.output_dir))?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let info = backend.info().ok();

    let one = |task: Task| {
        let t0 = Instant::now();
        let outcome = run_task(task, cfg, backend);
        let secs = t0.elapsed().as_secs_f64();
        let report = match outcome {
            Ok(r) => TaskReport {
                task,
                result: Some(r),
                error: None,
            },
            Err(e) => TaskReport {
                task,
                result: None,
                error: Some(e.to_string()),
            },
        };
        (report, secs)
    };
    let outcomes: Vec<(TaskReport, f64)> = if cfg.parallel_tasks {
        cfg.tasks.par_iter().map(|&t| one(t)).collect()
    } else {
        cfg.tasks.iter().map(|&t| one(t)).collect()
    };

    let mut wall_clock_secs = BTreeMap::new();
    let mut tasks = Vec::with_capacity(outcomes.len());
    for (r, secs) in outcomes {
        wall_clock_secs.insert(r.task.to_string(), secs);
        tasks.push(r);
    }
    Ok(RunReport {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        label: cfg.label.clone(),
        seed: cfg.seed,
        backend: BackendSummary {
            descriptor: cfg.backend.to_string(),
            pooling: cfg.backend.pooling.as_str().to_string(),
            info,
        },
        tasks,
        metadata: RunMetadata {
            started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
            wall_clock_secs,
        },
    })
}

/// Connects the configured backend, runs every task and writes the report
/// files into the output directory.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let report = match cfg.backend.connect() {
        Ok(backend) => run_with_backend(cfg, backend.as_ref())?,
        Err(e) => failed_run(cfg, &e),
    };
    report.write(&cfg.output_dir)?;
    Ok(report)
}

fn failed_run(cfg: &RunConfig, e: &Error) -> RunReport {
    let now = chrono::Utc::now().to_rfc3339();
    RunReport {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        label: cfg.label.clone(),
        seed: cfg.seed,
        backend: BackendSummary {
            descriptor: cfg.backend.to_string(),
            pooling: cfg.backend.pooling.as_str().to_string(),
            info: None,
        },
        tasks: cfg
            .tasks
            .iter()
            .map(|&task| TaskReport {
                task,
                result: None,
                error: Some(format!("backend unavailable: {e}")),
            })
            .collect(),
        metadata: RunMetadata {
            started_at: now.clone(),
            finished_at: now,
            wall_clock_secs: BTreeMap::new(),
        },
    }
}
