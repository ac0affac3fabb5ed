//! Test-split evaluation modes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::backend::{fan_out, BackendError};
use crate::bench::{Split, TaskInstance};
use crate::reward::{ScoredSample, Source};
use crate::sampling::{merge, Origin, Sampler, SamplingSummary, TaskSamples};
use crate::supplement::{output_prefix, SupplementType};

/// Appended to the query in `its` mode.
pub const ITS_INSTRUCTION: &str = "Let's think step by step.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvalMode {
    /// Actor alone.
    Baseline,
    /// Actor with the chain-of-thought instruction appended.
    Its,
    /// Untrained generator, free-style prompt forced to the free-style key.
    Prompt,
    /// Checkpoint generator, free-style prompt, unforced.
    Supplement,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [EvalMode::Baseline, EvalMode::Its, EvalMode::Prompt, EvalMode::Supplement];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Baseline => "baseline",
            EvalMode::Its => "its",
            EvalMode::Prompt => "prompt",
            EvalMode::Supplement => "supplement",
        }
    }

    pub fn uses_generator(self) -> bool {
        matches!(self, EvalMode::Prompt | EvalMode::Supplement)
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown eval mode {s:?} (baseline, its, prompt, supplement)"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no test-split tasks to evaluate")]
    EmptyTestSplit,
    #[error("{task}: {source}")]
    Backend { task: String, source: BackendError },
}

/// Mean reward per benchmark.
pub fn scores(samples: &[ScoredSample]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for s in samples {
        let e = sums.entry(s.benchmark.clone()).or_default();
        e.0 += s.reward.value() as f64;
        e.1 += 1;
    }
    sums.into_iter().map(|(b, (sum, n))| (b, sum / n as f64)).collect()
}

fn eval_one(
    task: &TaskInstance,
    mode: EvalMode,
    sampler: &Sampler<'_>,
    stage: &str,
) -> Result<ScoredSample, BackendError> {
    let seed = sampler.sample_seed(task, stage, mode.as_str(), 0);
    let origin = |prompt: Option<String>| Origin {
        stage,
        prompt,
        seed,
        sample_index: 0,
        source: Source::Eval,
        temperature: sampler.temperature,
    };
    match mode {
        EvalMode::Baseline => sampler.score_input(task, sampler.format.format(&task.query, None), None, origin(None)),
        EvalMode::Its => {
            let query = format!("{}\n\n{ITS_INSTRUCTION}", task.query);
            sampler.score_input(task, sampler.format.format(&query, None), None, origin(None))
        }
        EvalMode::Prompt | EvalMode::Supplement => {
            let prompt = sampler.templates.free_style_prompt(task);
            let prefix = (mode == EvalMode::Prompt).then(|| output_prefix(&SupplementType::FreeStyle));
            match sampler.generate(&prompt, prefix.as_deref(), seed)? {
                Ok(sup) => sampler.score(task, Some(sup), origin(Some(prompt))),
                Err(failure) => {
                    // the actor still answers, without a supplement
                    let mut s = sampler.score(task, None, origin(Some(prompt)))?;
                    s.flagged = Some(format!("unparseable supplement: {}", failure.reason));
                    Ok(s)
                }
            }
        }
    }
}

/// Score every test task once under `mode`. The sampler's generator is the
/// one evaluated (ignored by `baseline` and `its`); its temperature should
/// be the evaluation temperature.
pub fn evaluate(
    mode: EvalMode,
    tasks: &[TaskInstance],
    sampler: &Sampler<'_>,
    stage: &str,
) -> Result<(Vec<ScoredSample>, BTreeMap<String, f64>), EvalError> {
    assert!(tasks.iter().all(|t| t.split == Some(Split::Test)), "evaluation only takes test-split tasks");
    if tasks.is_empty() {
        return Err(EvalError::EmptyTestSplit);
    }
    let results = fan_out(tasks, sampler.parallelism, |task| eval_one(task, mode, sampler, stage));
    let mut samples = Vec::with_capacity(tasks.len());
    for (task, r) in tasks.iter().zip(results) {
        samples.push(r.map_err(|source| EvalError::Backend { task: task.id.clone(), source })?);
    }
    let s = scores(&samples);
    Ok((samples, s))
}

/// `n` unforced free-style samples per task, scored, to observe which
/// types a checkpoint produces.
pub fn sample_types(
    tasks: &[TaskInstance],
    sampler: &Sampler<'_>,
    n: u32,
    stage: &str,
) -> (Vec<ScoredSample>, SamplingSummary) {
    let per_task = fan_out(tasks, sampler.parallelism, |task| {
        let mut out = TaskSamples::default();
        let prompt = sampler.templates.free_style_prompt(task);
        let seed = sampler.sample_seed(task, stage, "types", 0);
        let parsed = match sampler.generate_many(&prompt, n, seed) {
            Ok(p) => p,
            Err(e) => {
                out.aborted(task, &e);
                return out;
            }
        };
        for (i, p) in parsed.into_iter().enumerate() {
            let sup = match p {
                Ok(s) => s,
                Err(f) => {
                    out.parse_failed(task, &f);
                    continue;
                }
            };
            let origin = Origin {
                stage,
                prompt: Some(prompt.clone()),
                seed,
                sample_index: i as u32,
                source: Source::Free,
                temperature: sampler.temperature,
            };
            match sampler.score(task, Some(sup), origin) {
                Ok(s) => out.samples.push(s),
                Err(e) => {
                    out.aborted(task, &e);
                    break;
                }
            }
        }
        out
    });
    merge(tasks, per_task)
}
