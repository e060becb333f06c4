//! Unlabeled pool loading, indexing and seeded resampling.
//!
//! A [`Pool`] is immutable once built. Gold labels ride along with each
//! [`Instance`] so the simulated oracle can answer queries, but query
//! strategies only ever see indices and text.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_PAIR_SEPARATOR: &str = " ||| ";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("{0} contains no records")]
    EmptyPool(PathBuf),
    #[error("row {row}: text is empty")]
    EmptyText { row: usize },
    #[error("row {row}: label `{label}` is not in the label space")]
    LabelDomain { row: usize, label: String },
    #[error("cannot take {requested} instances from a pool of {available}")]
    Size { requested: usize, available: usize },
    #[error("invalid pool: {0}")]
    Invalid(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_pair: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<String>,
    /// Record position in the source file, stable across shuffles. Embedding
    /// files are keyed by this value.
    pub source_row: usize,
}

impl Instance {
    /// Single-line rendering used in prompts and exports.
    pub fn display_text(&self, pair_separator: &str) -> String {
        let mut out = flatten_line(&self.text);
        if let Some(pair) = &self.text_pair {
            out.push_str(pair_separator);
            out.push_str(&flatten_line(pair));
        }
        out
    }
}

fn flatten_line(text: &str) -> String {
    text.split(['\n', '\r']).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    task_name: String,
    label_space: Vec<String>,
    guidelines: Option<String>,
    pair_separator: String,
    instances: Vec<Instance>,
}

impl Pool {
    /// Builds a pool, re-assigning `index` to ordinal position and checking
    /// label membership.
    pub fn new(
        task_name: impl Into<String>,
        label_space: Vec<String>,
        guidelines: Option<String>,
        mut instances: Vec<Instance>,
    ) -> Result<Self, CorpusError> {
        if instances.is_empty() {
            return Err(CorpusError::Invalid("pool must contain at least one instance".into()));
        }
        let mut seen = BTreeSet::new();
        for label in &label_space {
            if !seen.insert(label.as_str()) {
                return Err(CorpusError::Invalid(format!("duplicate label `{label}` in label space")));
            }
        }
        for (position, instance) in instances.iter_mut().enumerate() {
            instance.index = position;
            if instance.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { row: instance.source_row + 1 });
            }
            if let Some(label) = &instance.gold_label {
                if !seen.contains(label.as_str()) {
                    return Err(CorpusError::LabelDomain { row: instance.source_row + 1, label: label.clone() });
                }
            }
        }
        Ok(Self {
            task_name: task_name.into(),
            label_space,
            guidelines,
            pair_separator: DEFAULT_PAIR_SEPARATOR.to_string(),
            instances,
        })
    }

    pub fn with_pair_separator(mut self, separator: impl Into<String>) -> Self {
        self.pair_separator = separator.into();
        self
    }

    pub fn with_guidelines(mut self, guidelines: Option<String>) -> Self {
        self.guidelines = guidelines;
        self
    }

    pub fn task_name(&self) -> &str {
        &self.task_name
    }

    pub fn label_space(&self) -> &[String] {
        &self.label_space
    }

    pub fn guidelines(&self) -> Option<&str> {
        self.guidelines.as_deref()
    }

    pub fn pair_separator(&self) -> &str {
        &self.pair_separator
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Instance> {
        self.instances.get(index)
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.label_space.iter().any(|l| l == label)
    }

    /// Deterministic seeded permutation, re-indexed in the shuffled order.
    pub fn shuffled(&self, seed: u64) -> Pool {
        let mut instances = self.instances.clone();
        instances.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.rebuild(instances)
    }

    fn rebuild(&self, mut instances: Vec<Instance>) -> Pool {
        for (position, instance) in instances.iter_mut().enumerate() {
            instance.index = position;
        }
        Pool { instances, ..self.clone_header() }
    }

    fn clone_header(&self) -> Pool {
        Pool {
            task_name: self.task_name.clone(),
            label_space: self.label_space.clone(),
            guidelines: self.guidelines.clone(),
            pair_separator: self.pair_separator.clone(),
            instances: Vec::new(),
        }
    }
}

/// Seeded sample of `n` instances. The sample keeps the pool's relative
/// order and is re-indexed from zero.
pub fn subsample(pool: &Pool, n: usize, seed: u64) -> Result<Pool, CorpusError> {
    if n == 0 || n > pool.len() {
        return Err(CorpusError::Size { requested: n, available: pool.len() });
    }
    let mut positions: Vec<usize> = (0..pool.len()).collect();
    positions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    positions.truncate(n);
    positions.sort_unstable();
    let instances = positions.into_iter().map(|p| pool.instances[p].clone()).collect();
    Ok(pool.rebuild(instances))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Header row followed by delimited records.
    #[default]
    #[serde(alias = "csv", alias = "tsv")]
    DelimitedTable,
    /// One JSON object per line.
    #[serde(alias = "jsonl")]
    LineRecords,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub format: DataFormat,
    pub delimiter: char,
    pub text_column: String,
    pub text_pair_column: Option<String>,
    pub label_column: Option<String>,
    /// When absent the label space is the sorted set of observed labels.
    pub label_space: Option<Vec<String>>,
    pub shuffle_seed: Option<u64>,
    /// Truncate texts to this many characters. Off by default.
    pub max_chars: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            format: DataFormat::DelimitedTable,
            delimiter: ',',
            text_column: "text".into(),
            text_pair_column: None,
            label_column: Some("label".into()),
            label_space: None,
            shuffle_seed: None,
            max_chars: None,
        }
    }
}

struct RawRecord {
    text: String,
    text_pair: Option<String>,
    label: Option<String>,
}

pub fn load_pool(path: &Path, task_name: &str, options: &LoadOptions) -> Result<Pool, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    let records = match options.format {
        DataFormat::DelimitedTable => read_delimited(path, &raw, options)?,
        DataFormat::LineRecords => read_line_records(path, &raw, options)?,
    };
    if records.is_empty() {
        return Err(CorpusError::EmptyPool(path.to_owned()));
    }

    let mut instances = Vec::with_capacity(records.len());
    for (row, record) in records.into_iter().enumerate() {
        let text = truncate_chars(record.text.trim(), options.max_chars);
        if text.is_empty() {
            return Err(CorpusError::EmptyText { row: row + 1 });
        }
        let text_pair = record.text_pair.map(|p| truncate_chars(p.trim(), options.max_chars)).filter(|p| !p.is_empty());
        let gold_label = record.label.map(|l| l.trim().to_string()).filter(|l| !l.is_empty());
        instances.push(Instance { index: row, text, text_pair, gold_label, source_row: row });
    }

    let label_space = match &options.label_space {
        Some(space) => space.clone(),
        None => instances.iter().filter_map(|i| i.gold_label.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let pool = Pool::new(task_name, label_space, None, instances)?;
    Ok(match options.shuffle_seed {
        Some(seed) => pool.shuffled(seed),
        None => pool,
    })
}

fn truncate_chars(text: &str, max_chars: Option<usize>) -> String {
    match max_chars {
        Some(limit) => text.chars().take(limit).collect::<String>().trim_end().to_string(),
        None => text.to_string(),
    }
}

fn read_delimited(path: &Path, raw: &str, options: &LoadOptions) -> Result<Vec<RawRecord>, CorpusError> {
    let delimiter = u8::try_from(options.delimiter).map_err(|_| CorpusError::Parse {
        path: path.to_owned(),
        message: format!("delimiter {:?} is not a single byte", options.delimiter),
    })?;
    let mut reader =
        csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).flexible(false).from_reader(raw.as_bytes());
    let parse_err = |e: csv::Error| CorpusError::Parse { path: path.to_owned(), message: e.to_string() };

    let headers = reader.headers().map_err(parse_err)?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let text_col = column(&options.text_column)?;
    let pair_col = options.text_pair_column.as_deref().map(column).transpose()?;
    let label_col = options.label_column.as_deref().map(column).transpose()?;

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(parse_err)?;
        let cell = |i: usize| row.get(i).unwrap_or_default().to_string();
        records.push(RawRecord { text: cell(text_col), text_pair: pair_col.map(cell), label: label_col.map(cell) });
    }
    Ok(records)
}

fn read_line_records(path: &Path, raw: &str, options: &LoadOptions) -> Result<Vec<RawRecord>, CorpusError> {
    let mut records = Vec::new();
    for (line_no, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| CorpusError::Parse { path: path.to_owned(), message: format!("line {}: {e}", line_no + 1) })?;
        let object = value.as_object().ok_or_else(|| CorpusError::Parse {
            path: path.to_owned(),
            message: format!("line {}: expected an object", line_no + 1),
        })?;
        let field = |name: &str| -> Option<String> {
            match object.get(name)? {
                serde_json::Value::Null => None,
                serde_json::Value::String(s) => Some(s.clone()),
                other => Some(other.to_string()),
            }
        };
        let text =
            field(&options.text_column).ok_or_else(|| CorpusError::MissingColumn(options.text_column.clone()))?;
        let text_pair = match &options.text_pair_column {
            Some(name) if !object.contains_key(name) => return Err(CorpusError::MissingColumn(name.clone())),
            Some(name) => field(name),
            None => None,
        };
        let label = match &options.label_column {
            Some(name) if !object.contains_key(name) => return Err(CorpusError::MissingColumn(name.clone())),
            Some(name) => field(name),
            None => None,
        };
        records.push(RawRecord { text, text_pair, label });
    }
    Ok(records)
}

/// Dataset manifest. Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task_name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub format: DataFormat,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_text_column")]
    pub text_column: String,
    #[serde(default)]
    pub text_pair_column: Option<String>,
    #[serde(default = "default_label_column")]
    pub label_column: Option<String>,
    pub label_space: Vec<String>,
    #[serde(default)]
    pub guidelines: Option<PathBuf>,
    #[serde(default)]
    pub shuffle_seed: Option<u64>,
    #[serde(default)]
    pub max_chars: Option<usize>,
    #[serde(default = "default_pair_separator")]
    pub pair_separator: String,
    /// Embedding file for the training pool, keyed by record position.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Held-out evaluation split.
    #[serde(default)]
    pub test: Option<SplitManifest>,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub path: PathBuf,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
}

fn default_delimiter() -> char {
    ','
}
fn default_text_column() -> String {
    "text".into()
}
fn default_label_column() -> Option<String> {
    Some("label".into())
}
fn default_pair_separator() -> String {
    DEFAULT_PAIR_SEPARATOR.into()
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
        let mut manifest: Manifest = toml::from_str(&raw).map_err(|e| CorpusError::Manifest(e.to_string()))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if manifest.label_space.is_empty() {
            return Err(CorpusError::Manifest("label_space must not be empty".into()));
        }
        Ok(manifest)
    }

    /// Directory relative paths resolve against; set by [`Manifest::load`].
    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            format: self.format,
            delimiter: self.delimiter,
            text_column: self.text_column.clone(),
            text_pair_column: self.text_pair_column.clone(),
            label_column: self.label_column.clone(),
            label_space: Some(self.label_space.clone()),
            shuffle_seed: self.shuffle_seed,
            max_chars: self.max_chars,
        }
    }

    fn read_guidelines(&self) -> Result<Option<String>, CorpusError> {
        self.guidelines
            .as_ref()
            .map(|p| {
                let path = self.resolve(p);
                fs::read_to_string(&path)
                    .map(|s| s.trim().to_string())
                    .map_err(|source| CorpusError::Io { path, source })
            })
            .transpose()
    }

    pub fn load_pool(&self) -> Result<Pool, CorpusError> {
        let pool = load_pool(&self.resolve(&self.path), &self.task_name, &self.load_options())?;
        Ok(pool.with_guidelines(self.read_guidelines()?).with_pair_separator(self.pair_separator.clone()))
    }

    /// Loads the evaluation split. Never shuffled.
    pub fn load_test(&self) -> Result<Option<Pool>, CorpusError> {
        let Some(test) = &self.test else { return Ok(None) };
        let options = LoadOptions { shuffle_seed: None, ..self.load_options() };
        let pool = load_pool(&self.resolve(&test.path), &self.task_name, &options)?;
        Ok(Some(pool.with_pair_separator(self.pair_separator.clone())))
    }
}
