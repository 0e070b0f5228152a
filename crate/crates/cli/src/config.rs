//! Run configuration: a TOML file layered over built-in defaults, then
//! `--set section.key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use secnn::gradcheck::GradcheckOptions;
use secnn::model::ModelConfig;
use secnn::training::{EmbeddingInit, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Labelled `label,text` CSV used for training (split into train/dev).
    pub dataset: Option<PathBuf>,
    /// Optional held-out CSV scored after training.
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `num_classes` is replaced by the dataset's label count when training.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub embeddings: EmbeddingInit,
    pub paths: Paths,
    pub gradcheck: GradcheckOptions,
}

impl RunConfig {
    pub fn with_model(model: ModelConfig) -> Self {
        RunConfig {
            model,
            train: TrainConfig::default(),
            embeddings: EmbeddingInit::default(),
            paths: Paths::default(),
            gradcheck: GradcheckOptions::default(),
        }
    }

    /// Defaults, then the file (if any), then overrides. Relative paths in
    /// the file resolve against the file's directory.
    pub fn load(base: RunConfig, file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match Value::try_from(&base) {
            Ok(Value::Table(t)) => t,
            _ => unreachable!("RunConfig serializes to a table"),
        };
        if let Some(path) = file {
            let raw = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let mut parsed: Table = raw
                .parse()
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let dir = path.parent().unwrap_or(Path::new(""));
            rebase_paths(&mut parsed, dir);
            merge(&mut table, parsed);
        }
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        Value::Table(table)
            .try_into::<RunConfig>()
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

const PATH_KEYS: [(&str, &str); 5] = [
    ("paths", "dataset"),
    ("paths", "test"),
    ("paths", "out"),
    ("paths", "checkpoint"),
    ("embeddings", "vectors"),
];

fn rebase_paths(table: &mut Table, dir: &Path) {
    for (section, key) in PATH_KEYS {
        if let Some(Value::String(p)) = table.get_mut(section).and_then(|s| s.get_mut(key)) {
            if Path::new(p.as_str()).is_relative() {
                *p = dir.join(&*p).to_string_lossy().into_owned();
            }
        }
    }
}

fn merge(into: &mut Table, from: Table) {
    for (key, value) in from {
        match (into.get_mut(&key), value) {
            (Some(Value::Table(dst)), Value::Table(src)) => merge(dst, src),
            (_, value) => {
                into.insert(key, value);
            }
        }
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a
/// bare string (so `paths.out=runs/x` works without quotes).
fn apply_override(table: &mut Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let (last, sections) = parts.split_last().expect("non-empty key");
    let mut cursor = table;
    for section in sections {
        let entry = cursor
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("`{section}` in `{key}` is not a section"))),
        };
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}
