//! Score tables with average relative gain, supplement-type distributions,
//! and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::journal::{write_atomic, Journal};
use crate::pipeline::{checkpoint_tag, RunState};
use crate::reward::ScoredSample;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalyticsError {
    #[error("rows cover different cells: {0}")]
    KeyMismatch(String),
    #[error("no cell has a non-zero baseline")]
    NoValidCells,
}

/// Mean over cells of (score − baseline) / baseline. Cells with a zero
/// baseline are skipped with a warning.
pub fn avg_gain<K: Ord + std::fmt::Debug>(
    row: &BTreeMap<K, f64>,
    baseline: &BTreeMap<K, f64>,
) -> Result<f64, AnalyticsError> {
    if !row.keys().eq(baseline.keys()) {
        let only_row: Vec<&K> = row.keys().filter(|k| !baseline.contains_key(k)).collect();
        let only_base: Vec<&K> = baseline.keys().filter(|k| !row.contains_key(k)).collect();
        return Err(AnalyticsError::KeyMismatch(format!("only in row {only_row:?}, only in baseline {only_base:?}")));
    }
    let mut gains = Vec::with_capacity(row.len());
    for (k, &b) in baseline {
        if b == 0.0 {
            log::warn!("cell {k:?}: baseline score is 0, relative gain undefined; skipped");
            continue;
        }
        gains.push((row[k] - b) / b);
    }
    if gains.is_empty() {
        return Err(AnalyticsError::NoValidCells);
    }
    Ok(gains.iter().sum::<f64>() / gains.len() as f64)
}

/// [`avg_gain`] over two equally long score lists, cell by position.
pub fn avg_gain_of(row: &[f64], baseline: &[f64]) -> Result<f64, AnalyticsError> {
    if row.len() != baseline.len() {
        return Err(AnalyticsError::KeyMismatch(format!("{} cells vs {} baseline cells", row.len(), baseline.len())));
    }
    let index = |xs: &[f64]| xs.iter().copied().enumerate().collect::<BTreeMap<usize, f64>>();
    avg_gain(&index(row), &index(baseline))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub method: String,
    pub actor: String,
    pub benchmark: String,
    pub score: f64,
}

/// Cells in a method × (actor, benchmark) layout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    /// Row order.
    pub methods: Vec<String>,
    pub cells: Vec<ScoreCell>,
}

impl ScoreTable {
    /// Rows from run metrics, in stage order.
    pub fn from_state(state: &RunState, actor: &str) -> Self {
        let mut methods: Vec<String> = ["baseline", "its", "prompt"].iter().map(|s| s.to_string()).collect();
        let mut t = 0;
        while state.metrics.contains_key(&checkpoint_tag(t)) {
            methods.push(checkpoint_tag(t));
            t += 1;
        }
        methods.retain(|m| state.metrics.contains_key(m));
        let mut cells = Vec::new();
        for m in &methods {
            for (bench, &score) in &state.metrics[m] {
                cells.push(ScoreCell { method: m.clone(), actor: actor.to_string(), benchmark: bench.clone(), score });
            }
        }
        Self { methods, cells }
    }

    pub fn row(&self, method: &str) -> BTreeMap<(String, String), f64> {
        self.cells
            .iter()
            .filter(|c| c.method == method)
            .map(|c| ((c.actor.clone(), c.benchmark.clone()), c.score))
            .collect()
    }

    pub fn columns(&self) -> Vec<(String, String)> {
        let mut cols: Vec<(String, String)> =
            self.cells.iter().map(|c| (c.actor.clone(), c.benchmark.clone())).collect();
        cols.sort();
        cols.dedup();
        cols
    }

    /// Average gain of each method over `baseline`, where defined.
    pub fn gains(&self, baseline: &str) -> BTreeMap<String, Option<f64>> {
        let base = self.row(baseline);
        self.methods.iter().map(|m| (m.clone(), avg_gain(&self.row(m), &base).ok())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeDistribution {
    pub stage: String,
    /// `None` pools every benchmark.
    pub benchmark: Option<String>,
    pub samples: usize,
    /// Empty when no sample matched.
    pub fractions: BTreeMap<String, f64>,
}

impl TypeDistribution {
    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    pub fn fraction(&self, key: &str) -> f64 {
        self.fractions.get(key).copied().unwrap_or(0.0)
    }
}

/// Fractions of parsed supplement types among `samples` of one stage
/// (composite types under their own `a+b` key).
pub fn type_distribution(samples: &[ScoredSample], stage: &str, benchmark: Option<&str>) -> TypeDistribution {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.stage == stage && benchmark.is_none_or(|b| s.benchmark == b)) {
        if let Some(k) = s.type_key() {
            *counts.entry(k).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    TypeDistribution {
        stage: stage.to_string(),
        benchmark: benchmark.map(str::to_string),
        samples: total,
        fractions: counts.into_iter().map(|(k, n)| (k, n as f64 / total as f64)).collect(),
    }
}

/// Journal stages that carry supplement types, in run order.
pub fn distribution_stages(journal: &Journal) -> io::Result<Vec<String>> {
    let present = journal.stages()?;
    let mut order = vec!["sft".to_string(), "types_base".to_string(), "types_sft".to_string()];
    let mut t = 1;
    while present.iter().any(|s| *s == format!("dpo_iter_{t}") || *s == format!("types_dpo_{t}")) {
        order.push(format!("dpo_iter_{t}"));
        order.push(format!("types_dpo_{t}"));
        t += 1;
    }
    order.extend(["eval_prompt".to_string(), "eval_sft".to_string()]);
    order.extend((1..t).map(|t| format!("eval_dpo_{t}")));
    let mut stages: Vec<String> = order.into_iter().filter(|s| present.contains(s)).collect();
    // anything else (ad hoc evaluations), by name
    let rest: Vec<String> = present.iter().filter(|s| !stages.contains(s)).cloned().collect();
    stages.extend(rest);
    // stages without a single supplement (actor-only evaluations) have no distribution
    let mut out = Vec::with_capacity(stages.len());
    for s in stages {
        if journal.read_stage(&s)?.iter().any(|x| x.supplement.is_some()) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Pooled and per-benchmark distributions for every stage in `stages`.
pub fn distribution_series(journal: &Journal, stages: &[String]) -> io::Result<Vec<TypeDistribution>> {
    let mut out = Vec::new();
    for stage in stages {
        let samples = journal.read_stage(stage)?;
        out.push(type_distribution(&samples, stage, None));
        let mut benches: Vec<&str> = samples.iter().map(|s| s.benchmark.as_str()).collect();
        benches.sort();
        benches.dedup();
        for b in benches {
            out.push(type_distribution(&samples, stage, Some(b)));
        }
    }
    Ok(out)
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

fn pct(x: Option<f64>) -> String {
    x.map(|g| format!("{:+.1}%", 100.0 * g)).unwrap_or_else(|| "n/a".into())
}

#[derive(Serialize)]
struct ScoresFile<'a> {
    methods: &'a [String],
    columns: Vec<(String, String)>,
    cells: &'a [ScoreCell],
    avg_gain: BTreeMap<String, Option<f64>>,
}

/// Files written by [`report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Write `report/` under `root`: scores (JSON, CSV, Markdown with average
/// gain over the baseline row), type-distribution series (JSON) and a
/// summary. Output depends only on the state and the journal.
pub fn report(root: &Path, state: &RunState, journal: &Journal, actor: &str) -> io::Result<ReportFiles> {
    let dir = root.join("report");
    std::fs::create_dir_all(&dir)?;
    let table = ScoreTable::from_state(state, actor);
    let gains = table.gains("baseline");
    let columns = table.columns();

    let mut files = Vec::new();
    let mut put = |name: &str, text: String| -> io::Result<()> {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        files.push(path);
        Ok(())
    };

    let scores =
        ScoresFile { methods: &table.methods, columns: columns.clone(), cells: &table.cells, avg_gain: gains.clone() };
    put("scores.json", serde_json::to_string_pretty(&scores).expect("scores serialize") + "\n")?;

    let mut csv = String::from("method,actor,benchmark,score\n");
    for c in &table.cells {
        writeln!(csv, "{},{},{},{}", c.method, c.actor, c.benchmark, fmt3(c.score)).expect("string write");
    }
    put("scores.csv", csv)?;

    let mut md = String::from("| Method |");
    for (a, b) in &columns {
        write!(md, " {b} ({a}) |").expect("string write");
    }
    md.push_str(" Avg. Gain |\n|---|");
    md.push_str(&"---|".repeat(columns.len() + 1));
    md.push('\n');
    for m in &table.methods {
        let row = table.row(m);
        write!(md, "| {m} |").expect("string write");
        for col in &columns {
            write!(md, " {} |", row.get(col).map(|&s| fmt3(s)).unwrap_or_else(|| "-".into())).expect("string write");
        }
        writeln!(md, " {} |", if m == "baseline" { "-".into() } else { pct(gains[m]) }).expect("string write");
    }
    put("scores.md", md.clone())?;

    let stages = distribution_stages(journal)?;
    let series = distribution_series(journal, &stages)?;
    put("distributions.json", serde_json::to_string_pretty(&series).expect("series serialize") + "\n")?;

    let mut summary = format!(
        "# Run summary\n\nLast completed stage: `{}`\n\n## Scores\n\n{md}\n## Supplement types\n\n",
        state.completed
    );
    for d in series.iter().filter(|d| d.benchmark.is_none()) {
        let mut top: Vec<(&String, &f64)> = d.fractions.iter().collect();
        top.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let shown: Vec<String> = top.iter().take(4).map(|(k, f)| format!("{k} {:.1}%", 100.0 * **f)).collect();
        writeln!(summary, "- `{}` ({} samples): {}", d.stage, d.samples, shown.join(", ")).expect("string write");
    }
    if !state.sampling.is_empty() {
        summary.push_str("\n## Sampling\n\n");
        for (stage, s) in &state.sampling {
            writeln!(
                summary,
                "- `{stage}`: {} samples, {} parse failures, {} aborted tasks",
                s.samples,
                s.parse_failures,
                s.aborted_tasks.len()
            )
            .expect("string write");
        }
    }
    put("summary.md", summary)?;
    Ok(ReportFiles { dir, files })
}
