//! Benchmark ingestion and deterministic train/val/test splitting.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::reward::RewardKind;
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{benchmark} line {line}: {message}")]
    Record { benchmark: String, line: usize, message: String },
    #[error("{benchmark}: duplicate task id {id}")]
    DuplicateId { benchmark: String, id: String },
    #[error("{benchmark}: declared size {declared} but loaded {loaded}")]
    SizeMismatch { benchmark: String, declared: usize, loaded: usize },
    #[error("split: {0}")]
    Split(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One benchmark item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub benchmark: String,
    /// Self-contained task text: question, context and instruction.
    pub query: String,
    pub gold: String,
    pub reward_kind: RewardKind,
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aux: BTreeMap<String, String>,
}

impl TaskInstance {
    /// Exact-match task with no split; mostly for tests and examples.
    pub fn new(id: &str, benchmark: &str, query: &str, gold: &str) -> Self {
        Self {
            id: id.to_string(),
            benchmark: benchmark.to_string(),
            query: query.to_string(),
            gold: gold.to_string(),
            reward_kind: RewardKind::ExactMatch,
            split: None,
            aux: BTreeMap::new(),
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }
}

/// Which record fields feed the task. Several query fields are joined with a
/// blank line in the listed order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMap {
    #[serde(default)]
    pub id: Option<String>,
    pub query: Vec<String>,
    pub gold: String,
    #[serde(default)]
    pub aux: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub name: String,
    pub path: PathBuf,
    pub reward_kind: RewardKind,
    pub fields: FieldMap,
    #[serde(default)]
    pub size: Option<usize>,
}

/// A manifest file listing benchmarks (`[[benchmark]]` tables).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    #[serde(default, rename = "benchmark")]
    pub benchmarks: Vec<BenchmarkManifest>,
}

impl ManifestFile {
    /// Relative benchmark paths resolve against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.to_path_buf(), source })?;
        let mut file: ManifestFile = toml::from_str(&text).map_err(|e| LoadError::Manifest(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for b in &mut file.benchmarks {
            if b.path.is_relative() {
                b.path = base.join(&b.path);
            }
        }
        Ok(file)
    }
}

fn field_text(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

/// Load one line-delimited benchmark file in file order.
pub fn load_benchmark(manifest: &BenchmarkManifest) -> Result<Vec<TaskInstance>, LoadError> {
    let file =
        fs::File::open(&manifest.path).map_err(|source| LoadError::Io { path: manifest.path.clone(), source })?;
    let record_err =
        |line: usize, message: String| LoadError::Record { benchmark: manifest.name.clone(), line, message };

    let mut tasks = Vec::new();
    let mut ids = HashSet::new();
    let mut index = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| LoadError::Io { path: manifest.path.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| record_err(lineno, format!("not a JSON object: {e}")))?;
        let get = |field: &str| -> Result<String, LoadError> {
            record
                .get(field)
                .and_then(field_text)
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| record_err(lineno, format!("missing or empty field {field:?}")))
        };

        let query_parts = manifest.fields.query.iter().map(|f| get(f)).collect::<Result<Vec<_>, _>>()?;
        let gold = get(&manifest.fields.gold)?;
        let id = match &manifest.fields.id {
            Some(f) => format!("{}#{}", manifest.name, get(f)?),
            None => format!("{}#{}", manifest.name, index),
        };
        if !ids.insert(id.clone()) {
            return Err(LoadError::DuplicateId { benchmark: manifest.name.clone(), id });
        }
        let aux = manifest
            .fields
            .aux
            .iter()
            .filter_map(|f| record.get(f).and_then(field_text).map(|v| (f.clone(), v)))
            .collect();
        tasks.push(TaskInstance {
            id,
            benchmark: manifest.name.clone(),
            query: query_parts.join("\n\n"),
            gold,
            reward_kind: manifest.reward_kind.clone(),
            split: None,
            aux,
        });
        index += 1;
    }
    if let Some(declared) = manifest.size {
        if declared != tasks.len() {
            return Err(LoadError::SizeMismatch { benchmark: manifest.name.clone(), declared, loaded: tasks.len() });
        }
    }
    Ok(tasks)
}

/// Train/val/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl SplitRatios {
    /// (train, val, test) sizes: floors for train and val, remainder to test.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // epsilon absorbs products like 0.6 * 5 = 2.9999999999999996
        let train = ((self.train * n as f64) + 1e-9).floor() as usize;
        let val = ((self.val * n as f64) + 1e-9).floor() as usize;
        let val = val.min(n - train);
        (train, val, n - train - val)
    }
}

/// Shuffle by seed and assign contiguous blocks to train, val and test.
pub fn split_dataset(
    mut tasks: Vec<TaskInstance>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Vec<TaskInstance>, LoadError> {
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || ratios.train < 0.0 || ratios.val < 0.0 || ratios.test < 0.0 {
        return Err(LoadError::Split(format!("ratios must be non-negative and sum to 1, got {sum}")));
    }
    if tasks.len() < 3 {
        return Err(LoadError::Split(format!("need at least 3 tasks, got {}", tasks.len())));
    }
    let (train, val, _) = ratios.sizes(tasks.len());
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let bench = tasks[0].benchmark.clone();
    order.shuffle(&mut seed::rng(seed, &["split", &bench]));
    for (rank, &i) in order.iter().enumerate() {
        tasks[i].split = Some(if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(tasks)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub id: String,
    pub split: Split,
}

/// One `{"id", "split"}` line per task, in task order.
pub fn render_split_manifest(tasks: &[TaskInstance]) -> String {
    let mut out = String::new();
    for t in tasks {
        if let Some(split) = t.split {
            let entry = SplitEntry { id: t.id.clone(), split };
            out.push_str(&serde_json::to_string(&entry).expect("split entry serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn read_split_manifest(path: &Path) -> Result<BTreeMap<String, Split>, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.to_path_buf(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<SplitEntry>(l).map(|e| (e.id, e.split)).map_err(|e| LoadError::Record {
                benchmark: "splits".into(),
                line: i,
                message: e.to_string(),
            })
        })
        .collect()
}
