use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mlm_bias::backend::{Backend, BackendDescriptor, BackendKind, RecordingBackend};
use mlm_bias::cda::{self, CdaConfig, CdaMode, CdaOutputs};
use mlm_bias::jsd::{self, JsdProbeSpec};
use mlm_bias::report::{self, ManifestMethod, RunConfig, RunReport};
use mlm_bias::seat::{self, SeatOptions, DEFAULT_TESTS};
use mlm_bias::templates::{self, NounCoercion};
use mlm_bias::viz::{self, TsneConfig, WordSet};
use mlm_bias::{crows, Error};

#[derive(Parser)]
#[command(name = "mlm-bias", version, about = "Gender-bias measurement for masked language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Backend descriptor: `toy[:seed=N]`, `fixture:DIR`, or `http://host:port`.
    #[arg(long)]
    backend: Option<String>,
    /// Model server endpoint; used when --backend is absent.
    #[arg(long, env = "MLM_BIAS_ENDPOINT")]
    endpoint: Option<String>,
}

impl BackendArgs {
    fn descriptor(&self) -> Result<Option<BackendDescriptor>> {
        if let Some(b) = &self.backend {
            return Ok(Some(b.parse()?));
        }
        Ok(self.endpoint.as_ref().map(BackendDescriptor::http))
    }

    fn connect(&self) -> Result<Box<dyn Backend>> {
        let d = self.descriptor()?.unwrap_or_else(|| BackendDescriptor::toy(42));
        Ok(d.connect()?)
    }
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output file; defaults to `$MLM_BIAS_OUT/<name>` when that is set, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "MLM_BIAS_OUT", hide_env_values = true)]
    out_dir: Option<PathBuf>,
}

impl OutArgs {
    fn target(&self, default_name: &str) -> Option<PathBuf> {
        self.out
            .clone()
            .or_else(|| self.out_dir.as_ref().map(|d| d.join(default_name)))
    }

    fn emit(&self, default_name: &str, text: &str) -> Result<()> {
        match self.target(default_name) {
            Some(path) => {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
                }
                std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
                eprintln!("wrote {}", path.display());
            }
            None => print!("{text}"),
        }
        Ok(())
    }

    fn emit_json<T: Serialize>(&self, default_name: &str, value: &T) -> Result<()> {
        self.emit(default_name, &(serde_json::to_string_pretty(value)? + "\n"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// SEAT effect sizes and permutation p-values.
    Seat {
        #[arg(long)]
        tests_dir: PathBuf,
        /// Comma-separated test names (file stems).
        #[arg(long, value_delimiter = ',')]
        tests: Option<Vec<String>>,
        #[arg(long, default_value_t = 10_000)]
        n_samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// CrowS-Pairs pseudo-log-likelihood metric.
    Crows {
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Print the per-category Markdown table instead of JSON.
        #[arg(long)]
        markdown: bool,
    },
    /// Fill-mask rankings for gendered subjects.
    Templates {
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        subjects: PathBuf,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        no_noun_coercion: bool,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        markdown: bool,
    },
    /// Counterfactual data augmentation of a one-sentence-per-line corpus.
    Cda {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        wordlist: PathBuf,
        #[arg(long, default_value = "mt")]
        language: String,
        #[arg(long, default_value = "two-sided")]
        mode: String,
        /// Shuffle seed; omit to keep corpus order.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_preserve_case: bool,
        /// Augmented corpus path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the counterfactual sentences here.
        #[arg(long)]
        counterfactuals: Option<PathBuf>,
        /// Write an audit sheet of this many counterfactuals (needs --counterfactuals).
        #[arg(long)]
        audit_n: Option<usize>,
        #[arg(long)]
        audit_sheet: Option<PathBuf>,
        #[arg(long, default_value_t = 13)]
        audit_seed: u64,
    },
    /// Jensen–Shannon probe and beam search for biased prompts.
    Jsd {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        prompt_length: Option<usize>,
        #[arg(long)]
        beam: Option<usize>,
        /// Score whole distributions instead of the stereotype targets.
        #[arg(long)]
        full_vocab: bool,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// t-SNE projection of word pairs and adjectives.
    Tsne {
        #[arg(long)]
        words: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        coords: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Run every task of a TOML config and write report.json / report.md.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, env = "MLM_BIAS_OUT")]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Baseline vs debiased deltas from two report.json files.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        debiased: PathBuf,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Training manifest for an external fine-tuning run.
    EmitManifest {
        /// cda_finetune, dropout, guidebias or autodebias.
        #[arg(long)]
        method: String,
        /// Hyperparameter override `key=value` (repeatable).
        #[arg(long = "set")]
        set: Vec<String>,
        /// Data path `name=path` (repeatable).
        #[arg(long = "data")]
        data: Vec<String>,
        #[arg(long)]
        base_model: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run a config against a live backend while recording every response.
    RecordFixtures {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fixture_dir: PathBuf,
        #[arg(long)]
        note: Option<String>,
        #[command(flatten)]
        backend: BackendArgs,
    },
}

fn load_config(path: &Path, backend: &BackendArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(d) = backend.descriptor()? {
        cfg.backend = d;
    }
    Ok(cfg)
}

fn print_task_errors(r: &RunReport) {
    for t in r.tasks.iter().filter(|t| !t.is_ok()) {
        eprintln!("task {} failed: {}", t.task, t.error.as_deref().unwrap_or(""));
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Seat {
            tests_dir,
            tests,
            n_samples,
            seed,
            backend,
            out,
        } => {
            let names = tests.unwrap_or_else(|| DEFAULT_TESTS.iter().map(|s| s.to_string()).collect());
            let loaded = seat::load_tests(&tests_dir, &names)?;
            let b = backend.connect()?;
            let report = seat::run_suite(&loaded, b.as_ref(), SeatOptions { n_samples, seed })?;
            out.emit_json("seat.json", &report)?;
            if !report.failures.is_empty() {
                for (name, err) in &report.failures {
                    eprintln!("{name}: {err}");
                }
                return Ok(ExitCode::from(1));
            }
        }
        Command::Crows {
            pairs,
            backend,
            out,
            markdown,
        } => {
            let pairs = crows::load_pairs(&pairs)?;
            let b = backend.connect()?;
            let result = crows::crows_metric(&pairs, b.as_ref())?;
            if markdown {
                out.emit("crows.md", &crows::category_table(&result))?;
            } else {
                out.emit_json("crows.json", &result)?;
            }
        }
        Command::Templates {
            templates: tpath,
            subjects,
            k,
            no_noun_coercion,
            backend,
            out,
            markdown,
        } => {
            let specs = templates::load_templates(&tpath)?;
            let subjects = templates::load_subjects(&subjects)?;
            let b = backend.connect()?;
            let coercion = NounCoercion::default();
            let filter = (!no_noun_coercion).then_some(&coercion);
            let results = templates::probe_all(&specs, &subjects, b.as_ref(), k, filter)?;
            if markdown {
                out.emit("templates.md", &templates::render_markdown(&results))?;
            } else {
                out.emit_json("templates.json", &results)?;
            }
        }
        Command::Cda {
            corpus,
            wordlist,
            language,
            mode,
            seed,
            no_preserve_case,
            out,
            counterfactuals,
            audit_n,
            audit_sheet,
            audit_seed,
        } => {
            let wl = cda::load_wordlist(&wordlist, &language)?;
            let config = CdaConfig {
                mode: mode.parse::<CdaMode>()?,
                shuffle_seed: seed,
                preserve_case: !no_preserve_case,
            };
            let outputs = CdaOutputs {
                corpus: out,
                counterfactuals: counterfactuals.clone(),
            };
            let stats = cda::augment_corpus(&corpus, &wl, &config, &outputs)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
            if let Some(n) = audit_n {
                let Some(cf) = counterfactuals else {
                    bail!("--audit-n needs --counterfactuals");
                };
                let sheet = audit_sheet.unwrap_or_else(|| cf.with_extension("audit.tsv"));
                cda::audit_sample(&cf, n, audit_seed, &sheet)?;
                eprintln!("wrote {}", sheet.display());
            }
        }
        Command::Jsd {
            spec,
            prompt_length,
            beam,
            full_vocab,
            backend,
            out,
        } => {
            let mut spec = JsdProbeSpec::from_json_file(&spec)?;
            if let Some(l) = prompt_length {
                spec.prompt_length = l;
            }
            if let Some(w) = beam {
                spec.beam_width = w;
            }
            spec.full_vocab |= full_vocab;
            spec.validate()?;
            let b = backend.connect()?;
            spec.check_targets(b.as_ref())?;
            let ranked = jsd::search_biased_prompts(&spec, b.as_ref())?;
            out.emit_json("jsd.json", &ranked)?;
        }
        Command::Tsne {
            words,
            seed,
            perplexity,
            iterations,
            svg,
            coords,
            backend,
        } => {
            let words = WordSet::from_json_file(&words)?;
            let mut cfg = TsneConfig::default().with_seed(seed);
            if let Some(p) = perplexity {
                cfg.perplexity = p;
            }
            if let Some(i) = iterations {
                cfg.iterations = i;
                cfg.early_exaggeration_iters = cfg.early_exaggeration_iters.min(i);
            }
            let b = backend.connect()?;
            let projection = viz::project_words(&words, b.as_ref(), &cfg)?;
            let coords_json = serde_json::to_string_pretty(&projection)? + "\n";
            match &coords {
                Some(p) => std::fs::write(p, &coords_json).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{coords_json}"),
            }
            if let Some(p) = svg {
                std::fs::write(&p, viz::render_svg(&projection, "t-SNE"))
                    .with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Run {
            config,
            seed,
            label,
            output_dir,
            parallel,
            backend,
        } => {
            let mut cfg = match load_config(&config, &backend) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return Ok(ExitCode::from(2));
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(l) = label {
                cfg.label = Some(l);
            }
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            cfg.parallel_tasks |= parallel;
            let report = report::run(&cfg)?;
            print_task_errors(&report);
            eprintln!("wrote {}", cfg.output_dir.join(report::REPORT_JSON).display());
            return Ok(ExitCode::from(report.exit_code() as u8));
        }
        Command::Compare {
            baseline,
            debiased,
            json,
            out,
        } => {
            let b = RunReport::from_json_file(&baseline)?;
            let d = RunReport::from_json_file(&debiased)?;
            let c = report::compare(&b, &d)?;
            if json {
                out.emit_json("compare.json", &c)?;
            } else {
                out.emit("compare.md", &report::render_comparison(&c))?;
            }
        }
        Command::EmitManifest {
            method,
            set,
            data,
            base_model,
            out,
        } => {
            let method: ManifestMethod = method.parse()?;
            let params = set
                .iter()
                .map(|s| report::parse_param(s))
                .collect::<mlm_bias::Result<BTreeMap<_, _>>>()?;
            let mut paths = BTreeMap::new();
            for d in &data {
                let Some((k, v)) = d.split_once('=') else {
                    bail!("expected name=path, got {d:?}");
                };
                paths.insert(k.to_string(), PathBuf::from(v));
            }
            let manifest = report::emit_manifest(method, params, paths, base_model)?;
            out.emit_json(&format!("{}_manifest.json", method.as_str()), &manifest)?;
        }
        Command::RecordFixtures {
            config,
            fixture_dir,
            note,
            backend,
        } => {
            let cfg = match load_config(&config, &backend) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return Ok(ExitCode::from(2));
                }
            };
            if matches!(cfg.backend.kind, BackendKind::Fixture { .. }) {
                bail!("recording from a fixture backend would only copy it");
            }
            let inner = cfg.backend.connect()?;
            let recorder = RecordingBackend::create(inner, &fixture_dir, note)?;
            let report = report::run_with_backend(&cfg, &recorder)?;
            report.write(&cfg.output_dir)?;
            print_task_errors(&report);
            eprintln!("recorded fixtures into {}", fixture_dir.display());
            return Ok(ExitCode::from(report.exit_code() as u8));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = matches!(e.downcast_ref::<Error>(), Some(Error::Config { .. }));
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
