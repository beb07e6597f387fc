use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Backend, FixtureBackend, HttpBackend, ToyBackend};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Cls,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Cls => "cls",
        }
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "cls" => Ok(Pooling::Cls),
            other => Err(Error::invalid(format!("unknown pooling {other:?}"))),
        }
    }
}

fn default_seed() -> u64 {
    42
}

fn default_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendKind {
    Toy {
        #[serde(default = "default_seed")]
        seed: u64,
        /// Corpus whose 256 most frequent tokens replace the built-in vocabulary.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vocab_corpus: Option<PathBuf>,
    },
    Fixture {
        fixture_dir: PathBuf,
    },
    Http {
        endpoint: String,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

/// Names a backend and how to reach it.
///
/// String form, as accepted on the command line:
///
/// * `toy`, `toy:seed=7`, `toy:seed=7,pooling=cls`
/// * `fixture:path/to/dir`
/// * `http://host:port` (or `https://…`), optionally `http://host:port,pooling=cls`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default)]
    pub pooling: Pooling,
}

impl BackendDescriptor {
    pub fn toy(seed: u64) -> Self {
        Self {
            kind: BackendKind::Toy {
                seed,
                vocab_corpus: None,
            },
            pooling: Pooling::Mean,
        }
    }

    pub fn fixture(dir: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Fixture {
                fixture_dir: dir.into(),
            },
            pooling: Pooling::Mean,
        }
    }

    pub fn http(endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http {
                endpoint: endpoint.into(),
                max_in_flight: default_in_flight(),
            },
            pooling: Pooling::Mean,
        }
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            BackendKind::Http {
                endpoint,
                max_in_flight,
            } => {
                if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
                    return Err(Error::invalid(format!("endpoint {endpoint:?} is not an http(s) URL")));
                }
                if *max_in_flight == 0 {
                    return Err(Error::invalid("max_in_flight must be positive"));
                }
            }
            BackendKind::Fixture { fixture_dir } => {
                if fixture_dir.as_os_str().is_empty() {
                    return Err(Error::invalid("fixture_dir is empty"));
                }
            }
            BackendKind::Toy { .. } => {}
        }
        Ok(())
    }

    /// Builds the backend this descriptor names.
    pub fn connect(&self) -> Result<Box<dyn Backend>> {
        self.validate()?;
        Ok(match &self.kind {
            BackendKind::Toy { seed, vocab_corpus } => {
                let mut toy = ToyBackend::new(*seed).with_pooling(self.pooling);
                if let Some(path) = vocab_corpus {
                    toy = toy.with_vocab_from_corpus(path)?;
                }
                Box::new(toy)
            }
            BackendKind::Fixture { fixture_dir } => {
                Box::new(FixtureBackend::open(fixture_dir, self.pooling)?)
            }
            BackendKind::Http {
                endpoint,
                max_in_flight,
            } => Box::new(HttpBackend::new(endpoint, self.pooling, *max_in_flight)?),
        })
    }
}

impl FromStr for BackendDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with("http://") || s.starts_with("https://") {
            let mut parts = s.split(',');
            let mut desc = BackendDescriptor::http(parts.next().unwrap_or_default());
            for opt in parts {
                apply_option(&mut desc, opt)?;
            }
            desc.validate()?;
            return Ok(desc);
        }
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        let desc = match head {
            "toy" => {
                let mut desc = BackendDescriptor::toy(default_seed());
                for opt in rest.split(',').filter(|o| !o.is_empty()) {
                    apply_option(&mut desc, opt)?;
                }
                desc
            }
            "fixture" => {
                let (dir, opts) = rest.split_once(',').unwrap_or((rest, ""));
                let mut desc = BackendDescriptor::fixture(dir);
                for opt in opts.split(',').filter(|o| !o.is_empty()) {
                    apply_option(&mut desc, opt)?;
                }
                desc
            }
            other => return Err(Error::invalid(format!("unknown backend kind {other:?}"))),
        };
        desc.validate()?;
        Ok(desc)
    }
}

fn apply_option(desc: &mut BackendDescriptor, opt: &str) -> Result<()> {
    let (key, value) = opt
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("backend option {opt:?} is not key=value")))?;
    match (key, &mut desc.kind) {
        ("pooling", _) => desc.pooling = value.parse()?,
        ("seed", BackendKind::Toy { seed, .. }) => {
            *seed = value
                .parse()
                .map_err(|_| Error::invalid(format!("bad seed {value:?}")))?
        }
        ("vocab", BackendKind::Toy { vocab_corpus, .. }) => *vocab_corpus = Some(value.into()),
        ("max_in_flight", BackendKind::Http { max_in_flight, .. }) => {
            *max_in_flight = value
                .parse()
                .map_err(|_| Error::invalid(format!("bad max_in_flight {value:?}")))?
        }
        _ => return Err(Error::invalid(format!("backend option {key:?} not valid here"))),
    }
    Ok(())
}

impl fmt::Display for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            BackendKind::Toy { seed, vocab_corpus } => {
                write!(f, "toy:seed={seed}")?;
                if let Some(p) = vocab_corpus {
                    write!(f, ",vocab={}", p.display())?;
                }
            }
            BackendKind::Fixture { fixture_dir } => write!(f, "fixture:{}", fixture_dir.display())?,
            BackendKind::Http {
                endpoint,
                max_in_flight,
            } => {
                write!(f, "{endpoint}")?;
                if *max_in_flight != default_in_flight() {
                    write!(f, ",max_in_flight={max_in_flight}")?;
                }
            }
        }
        if self.pooling != Pooling::Mean {
            write!(f, ",pooling={}", self.pooling.as_str())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_short_forms() {
        assert_eq!("toy".parse::<BackendDescriptor>().unwrap(), BackendDescriptor::toy(42));
        assert_eq!(
            "toy:seed=7,pooling=cls".parse::<BackendDescriptor>().unwrap(),
            BackendDescriptor::toy(7).with_pooling(Pooling::Cls)
        );
        assert_eq!(
            "fixture:fx/bertu".parse::<BackendDescriptor>().unwrap(),
            BackendDescriptor::fixture("fx/bertu")
        );
        assert_eq!(
            "http://localhost:8811".parse::<BackendDescriptor>().unwrap(),
            BackendDescriptor::http("http://localhost:8811")
        );
    }

    #[test]
    fn rejects_fields_of_other_kinds() {
        assert!("fixture:dir,seed=3".parse::<BackendDescriptor>().is_err());
        assert!("http://x,seed=3".parse::<BackendDescriptor>().is_err());
        assert!("grpc:foo".parse::<BackendDescriptor>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for s in ["toy:seed=9", "fixture:a/b,pooling=cls", "http://h:1,max_in_flight=2"] {
            let d: BackendDescriptor = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
    }

    #[test]
    fn serde_defaults() {
        let d: BackendDescriptor = serde_json::from_str(r#"{"kind":"toy"}"#).unwrap();
        assert_eq!(d, BackendDescriptor::toy(42));
        let bad = serde_json::from_str::<BackendDescriptor>(r#"{"kind":"toy","endpoint":"http://x"}"#);
        assert!(bad.is_err());
    }
}
