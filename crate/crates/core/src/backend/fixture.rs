//! Record/replay store of wire-level responses.
//!
//! A fixture directory holds `manifest.json` plus one file per request, named by
//! the hex SHA-256 of the canonical request JSON (object keys sorted, no
//! whitespace). Each file stores `{"request": …, "outcome": …}` where the outcome
//! is either the wire response body or a recorded model-level error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::wire::{self, EmbedRequest, EmbedResponse, MaskRequest, MaskResponse, TokenizeRequest, TokenizeResponse};
use super::{Backend, MaskedQuery, ModelInfo, Pooling, SentenceEmbedding, TokenSequence, VocabDistribution};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub model_id: String,
    pub created: String,
    pub dim: usize,
    pub max_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum Outcome {
    Ok { response: Value },
    TargetNotInVocab { token: String },
    NotAMask { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FixtureRecord {
    request: Value,
    outcome: Outcome,
}

/// Serializes JSON with object keys sorted at every level and no whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// Hex SHA-256 of the canonical form of `{"endpoint": …, "body": …}`.
pub fn request_hash(request: &Value) -> String {
    hex::encode(Sha256::digest(canonical_json(request).as_bytes()))
}

fn envelope(endpoint: &str, body: Value) -> Value {
    serde_json::json!({ "endpoint": endpoint, "body": body })
}

fn tokenize_request(text: &str) -> Value {
    envelope(
        wire::TOKENIZE,
        serde_json::to_value(TokenizeRequest { text: text.into() }).expect("serializable"),
    )
}

fn embed_request(text: &str, pooling: Pooling) -> Value {
    envelope(
        wire::EMBED,
        serde_json::to_value(EmbedRequest {
            texts: vec![text.into()],
            pooling,
        })
        .expect("serializable"),
    )
}

fn mask_request(query: &MaskedQuery) -> Value {
    envelope(
        wire::MASK_LOGPROBS,
        serde_json::to_value(MaskRequest {
            tokens: query.tokens.tokens().to_vec(),
            mask_index: query.mask_index,
            target: query.target.clone(),
            topk: query.topk,
        })
        .expect("serializable"),
    )
}

fn record_path(dir: &Path, request: &Value) -> (PathBuf, String) {
    let hash = request_hash(request);
    (dir.join(format!("{hash}.json")), hash)
}

/// Replays previously recorded responses; any unseen request is a fixture miss.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    dir: PathBuf,
    pooling: Pooling,
    manifest: FixtureManifest,
}

impl FixtureBackend {
    pub fn open(dir: impl Into<PathBuf>, pooling: Pooling) -> Result<Self> {
        let dir = dir.into();
        let manifest_path = dir.join(MANIFEST_FILE);
        let raw = fs::read_to_string(&manifest_path).map_err(Error::io(&manifest_path))?;
        let manifest = serde_json::from_str(&raw)?;
        Ok(Self {
            dir,
            pooling,
            manifest,
        })
    }

    pub fn manifest(&self) -> &FixtureManifest {
        &self.manifest
    }

    fn replay(&self, request: &Value) -> Result<Value> {
        let (path, hash) = record_path(&self.dir, request);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::FixtureMiss {
                    hash,
                    dir: self.dir.clone(),
                })
            }
            Err(e) => return Err(Error::io(&path)(e)),
        };
        let record: FixtureRecord = serde_json::from_str(&raw)?;
        if record.request != *request {
            return Err(Error::Protocol(format!(
                "fixture {} holds a different request",
                path.display()
            )));
        }
        match record.outcome {
            Outcome::Ok { response } => Ok(response),
            Outcome::TargetNotInVocab { token } => Err(Error::TargetNotInVocab(token)),
            Outcome::NotAMask { index } => Err(Error::NotAMask { index }),
        }
    }
}

impl Backend for FixtureBackend {
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        super::check_text(text)?;
        let resp: TokenizeResponse = serde_json::from_value(self.replay(&tokenize_request(text))?)?;
        TokenSequence::new(resp.tokens, text)
    }

    fn embed(&self, text: &str) -> Result<SentenceEmbedding> {
        super::check_text(text)?;
        let resp: EmbedResponse =
            serde_json::from_value(self.replay(&embed_request(text, self.pooling))?)?;
        let mut vectors = resp.into_embeddings(1)?;
        Ok(vectors.remove(0))
    }

    fn mask_logprobs(&self, query: &MaskedQuery) -> Result<VocabDistribution> {
        let resp: MaskResponse = serde_json::from_value(self.replay(&mask_request(query))?)?;
        resp.into_distribution()
    }

    fn info(&self) -> Result<ModelInfo> {
        Ok(ModelInfo {
            model_id: self.manifest.model_id.clone(),
            dim: self.manifest.dim,
            max_len: self.manifest.max_len,
        })
    }

    fn pooling(&self) -> Pooling {
        self.pooling
    }
}

/// Forwards to an inner backend and writes every exchange into a fixture directory.
pub struct RecordingBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: Backend> RecordingBackend<B> {
    /// Creates (or extends) a fixture directory. The manifest is written from the
    /// inner backend's info unless one already exists.
    pub fn create(inner: B, dir: impl Into<PathBuf>, note: Option<String>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            let info = inner.info()?;
            let manifest = FixtureManifest {
                model_id: info.model_id,
                created: chrono::Utc::now().format("%Y-%m-%d").to_string(),
                dim: info.dim,
                max_len: info.max_len,
                note,
            };
            write_atomic(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
        }
        Ok(Self { inner, dir })
    }

    pub fn into_inner(self) -> B {
        self.inner
    }

    fn store(&self, request: Value, outcome: Outcome) -> Result<()> {
        let (path, _) = record_path(&self.dir, &request);
        let record = FixtureRecord { request, outcome };
        let mut bytes = serde_json::to_vec_pretty(&record)?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)
    }

    fn record<T>(
        &self,
        request: Value,
        result: Result<T>,
        to_wire: impl FnOnce(&T) -> Result<Value>,
    ) -> Result<T> {
        match result {
            Ok(value) => {
                self.store(request, Outcome::Ok { response: to_wire(&value)? })?;
                Ok(value)
            }
            Err(Error::TargetNotInVocab(token)) => {
                self.store(request, Outcome::TargetNotInVocab { token: token.clone() })?;
                Err(Error::TargetNotInVocab(token))
            }
            Err(Error::NotAMask { index }) => {
                self.store(request, Outcome::NotAMask { index })?;
                Err(Error::NotAMask { index })
            }
            Err(other) => Err(other),
        }
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        super::check_text(text)?;
        self.record(tokenize_request(text), self.inner.tokenize(text), |seq| {
            Ok(serde_json::to_value(TokenizeResponse {
                tokens: seq.tokens().to_vec(),
            })?)
        })
    }

    fn embed(&self, text: &str) -> Result<SentenceEmbedding> {
        super::check_text(text)?;
        self.record(
            embed_request(text, self.inner.pooling()),
            self.inner.embed(text),
            |e| {
                Ok(serde_json::to_value(EmbedResponse {
                    vectors: vec![e.vector().to_vec()],
                    dim: e.dim(),
                })?)
            },
        )
    }

    fn mask_logprobs(&self, query: &MaskedQuery) -> Result<VocabDistribution> {
        self.record(mask_request(query), self.inner.mask_logprobs(query), |d| {
            Ok(serde_json::to_value(MaskResponse::from_distribution(d))?)
        })
    }

    fn info(&self) -> Result<ModelInfo> {
        self.inner.info()
    }

    fn pooling(&self) -> Pooling {
        self.inner.pooling()
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(Error::io(parent))?;
    tmp.write_all(bytes).map_err(Error::io(path))?;
    tmp.persist(path).map_err(|e| Error::io(path)(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ToyBackend;

    #[test]
    fn key_order_does_not_change_hash() {
        let a: Value = serde_json::from_str(r#"{"endpoint":"/v1/x","body":{"b":1,"a":[1,{"z":0,"y":2}]}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"body":{"a":[1,{"y":2,"z":0}],"b":1},"endpoint":"/v1/x"}"#).unwrap();
        assert_eq!(request_hash(&a), request_hash(&b));
        assert_eq!(canonical_json(&a), r#"{"body":{"a":[1,{"y":2,"z":0}],"b":1},"endpoint":"/v1/x"}"#);
    }

    #[test]
    fn hash_is_sha256_hex() {
        // sha256("{}")
        assert_eq!(
            request_hash(&serde_json::json!({})),
            "44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a"
        );
    }

    #[test]
    fn record_then_replay_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RecordingBackend::create(ToyBackend::new(42), dir.path(), None).unwrap();
        let seq = rec.tokenize("Hu jaħdem bħala [MASK].").unwrap();
        let emb = rec.embed("Hu tabib.").unwrap();
        let q = MaskedQuery::new(seq.clone(), 3).unwrap();
        let dist = rec.mask_logprobs(&q).unwrap();
        let missing = MaskedQuery::new(seq.clone(), 3).unwrap().with_target("qqq");
        assert!(rec.mask_logprobs(&missing).is_err());

        let replay = FixtureBackend::open(dir.path(), Pooling::Mean).unwrap();
        assert_eq!(replay.tokenize("Hu jaħdem bħala [MASK].").unwrap(), seq);
        let emb2 = replay.embed("Hu tabib.").unwrap();
        for (a, b) in emb.vector().iter().zip(emb2.vector()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let dist2 = replay.mask_logprobs(&q).unwrap();
        for (a, b) in dist.entries().iter().zip(dist2.entries()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.to_bits(), b.1.to_bits());
        }
        assert!(matches!(replay.mask_logprobs(&missing), Err(Error::TargetNotInVocab(_))));
        assert_eq!(replay.info().unwrap().model_id, "toy-seed42");
    }

    #[test]
    fn unseen_request_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        RecordingBackend::create(ToyBackend::new(42), dir.path(), None).unwrap();
        let replay = FixtureBackend::open(dir.path(), Pooling::Mean).unwrap();
        assert!(matches!(replay.tokenize("never seen"), Err(Error::FixtureMiss { .. })));
    }

    #[test]
    fn pooling_is_part_of_the_request() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RecordingBackend::create(ToyBackend::new(42), dir.path(), None).unwrap();
        rec.embed("tabib").unwrap();
        let cls = FixtureBackend::open(dir.path(), Pooling::Cls).unwrap();
        assert!(matches!(cls.embed("tabib"), Err(Error::FixtureMiss { .. })));
    }
}
