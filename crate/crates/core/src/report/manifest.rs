use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Fine-tuning methods whose configuration this toolkit records but does not run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestMethod {
    CdaFinetune,
    Dropout,
    Guidebias,
    Autodebias,
}

impl ManifestMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ManifestMethod::CdaFinetune => "cda_finetune",
            ManifestMethod::Dropout => "dropout",
            ManifestMethod::Guidebias => "guidebias",
            ManifestMethod::Autodebias => "autodebias",
        }
    }

    /// Required keys with their defaults; `None` means the caller must supply it.
    pub fn schema(self) -> Vec<(&'static str, Option<Value>)> {
        match self {
            ManifestMethod::CdaFinetune => vec![
                ("epochs", Some(json!(5))),
                ("batch_size", Some(json!(16))),
                ("gradient_accumulation_steps", Some(json!(16))),
                ("learning_rate", Some(json!(2e-5))),
                ("cda_mode", Some(json!("two_sided"))),
                ("shuffle", Some(json!(true))),
            ],
            ManifestMethod::Dropout => vec![
                ("hidden_dropout", Some(json!(0.2))),
                ("attention_dropout", Some(json!(0.15))),
            ],
            ManifestMethod::Guidebias => vec![
                ("batch_size", Some(json!(1024))),
                ("learning_rate", Some(json!(2e-5))),
                ("epochs", Some(json!(1))),
            ],
            // No published settings to fall back on.
            ManifestMethod::Autodebias => vec![
                ("learning_rate", None),
                ("epochs", None),
                ("batch_size", None),
                ("prompt_length", None),
                ("beam_width", None),
            ],
        }
    }
}

impl fmt::Display for ManifestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ManifestMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ManifestMethod::CdaFinetune,
            ManifestMethod::Dropout,
            ManifestMethod::Guidebias,
            ManifestMethod::Autodebias,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub method: ManifestMethod,
    pub base_model: Option<String>,
    pub hyperparameters: BTreeMap<String, Value>,
    pub data: BTreeMap<String, PathBuf>,
    pub toolkit_version: String,
}

/// Fills defaults for `method`, overlays `params`, and rejects unknown or
/// missing keys.
pub fn emit_manifest(
    method: ManifestMethod,
    params: BTreeMap<String, Value>,
    data: BTreeMap<String, PathBuf>,
    base_model: Option<String>,
) -> Result<TrainingManifest> {
    let schema = method.schema();
    if let Some(unknown) = params.keys().find(|k| !schema.iter().any(|(s, _)| s == k)) {
        return Err(Error::invalid(format!(
            "{unknown:?} is not a {method} hyperparameter (expected one of {:?})",
            schema.iter().map(|(k, _)| *k).collect::<Vec<_>>()
        )));
    }
    let mut hyperparameters = BTreeMap::new();
    for (key, default) in schema {
        let value = params.get(key).cloned().or(default).ok_or_else(|| Error::MissingHyperparameter {
            method: method.to_string(),
            key: key.to_string(),
        })?;
        hyperparameters.insert(key.to_string(), value);
    }
    Ok(TrainingManifest {
        method,
        base_model,
        hyperparameters,
        data,
        toolkit_version: super::TOOLKIT_VERSION.to_string(),
    })
}

/// Parses `key=value`; the value is read as JSON when possible, else as a string.
pub fn parse_param(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("expected key=value, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}
