//! Run configuration files: training hyperparameters plus artifact paths.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sumsr_core::dataset::AggregationMode;
use sumsr_core::training::TrainingConfig;
use sumsr_core::Error;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SUMSR_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub training: TrainingConfig,
    pub manifest: PathBuf,
    pub splits: PathBuf,
    /// Splits to train; all splits of the file when absent.
    pub split_ids: Option<Vec<usize>>,
    pub output_dir: Option<PathBuf>,
    /// Overrides each video's own aggregation mode at evaluation time.
    pub aggregation_mode: Option<AggregationMode>,
}

/// 1-based line of the first occurrence of `needle`, for error messages.
fn line_of(text: &str, needle: &str) -> Option<usize> {
    text.find(needle).map(|pos| text[..pos].matches('\n').count() + 1)
}

fn config_err(path: &Path, text: &str, key: Option<&str>, msg: impl std::fmt::Display) -> Error {
    let line = key.and_then(|k| line_of(text, &format!("\"{k}\"")));
    match line {
        Some(l) => Error::Config(format!("{}:{l}: {msg}", path.display())),
        None => Error::Config(format!("{}: {msg}", path.display())),
    }
}

fn take<T: for<'de> Deserialize<'de>>(
    obj: &mut Map<String, Value>,
    key: &str,
    path: &Path,
    text: &str,
) -> Result<Option<T>, Error> {
    match obj.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| config_err(path, text, Some(key), format!("field `{key}`: {e}"))),
    }
}

/// Relative paths in a config file are taken relative to the file itself.
fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, Error> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), e.line())))?;
        let Value::Object(mut obj) = value else {
            return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
        };
        let manifest: Option<PathBuf> = take(&mut obj, "manifest", path, text)?;
        let splits: Option<PathBuf> = take(&mut obj, "splits", path, text)?;
        let split_ids = take(&mut obj, "split_ids", path, text)?;
        let output_dir = take(&mut obj, "output_dir", path, text)?;
        let aggregation_mode = match take::<String>(&mut obj, "aggregation_mode", path, text)? {
            Some(s) => Some(
                s.parse()
                    .map_err(|e| config_err(path, text, Some("aggregation_mode"), e))?,
            ),
            None => None,
        };
        let training: TrainingConfig = serde_json::from_value(Value::Object(obj)).map_err(|e| {
            let msg = e.to_string();
            // serde names the offending field in backticks
            let key = msg.split('`').nth(1).map(str::to_string);
            config_err(path, text, key.as_deref(), msg)
        })?;
        training.validate().map_err(|e| config_err(path, text, None, e))?;
        let missing = |k: &str| config_err(path, text, None, format!("missing required key `{k}`"));
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self {
            training,
            manifest: resolve(base, manifest.ok_or_else(|| missing("manifest"))?),
            splits: resolve(base, splits.ok_or_else(|| missing("splits"))?),
            split_ids,
            output_dir: output_dir.map(|p| resolve(base, p)),
            aggregation_mode,
        })
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path)
    }

    /// Flag value, then config value, then `$SUMSR_OUT`, then `runs`.
    pub fn output_root(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(default_output_root)
    }
}

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Directory of one (variant, split, seed) run below the output root.
pub fn run_dir(root: &Path, training: &TrainingConfig, split_id: usize) -> PathBuf {
    root.join(training.variant.as_str())
        .join(format!("split{split_id}"))
        .join(format!("seed{}", training.seed))
}

/// The resolved configuration of a single run, stored as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub training: TrainingConfig,
    pub manifest: PathBuf,
    pub splits: PathBuf,
    pub split_id: usize,
    pub aggregation_mode: Option<AggregationMode>,
}
