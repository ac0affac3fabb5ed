//! Generate → parse → actor → reward, shared by the dataset builders and
//! evaluation.

use crate::backend::{BackendError, Client, GenRequest};
use crate::bench::TaskInstance;
use crate::reward::{EvaluatorSet, SampleMeta, ScoredSample, Source};
use crate::seed;
use crate::supplement::{parse_supplement, ActorFormat, ParseFailure, Supplement, TemplateSet};

/// Everything needed to turn a generator prompt into a scored sample.
#[derive(Clone)]
pub struct Sampler<'a> {
    pub generator: &'a Client,
    pub actor: &'a Client,
    pub templates: &'a TemplateSet,
    pub format: &'a ActorFormat,
    pub evaluators: &'a EvaluatorSet,
    pub run_seed: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub parallelism: usize,
}

/// Where one supplement came from.
#[derive(Clone, Debug)]
pub struct Origin<'s> {
    pub stage: &'s str,
    pub prompt: Option<String>,
    pub seed: u64,
    pub sample_index: u32,
    pub source: Source,
    pub temperature: f64,
}

impl<'a> Sampler<'a> {
    /// Seed for one sample, keyed by everything that identifies it.
    pub fn sample_seed(&self, task: &TaskInstance, stage: &str, label: &str, index: u32) -> u64 {
        seed::derive(self.run_seed, &[&task.id, stage, label, &index.to_string()])
    }

    /// One generation; outer error is transport/protocol, inner is parse.
    pub fn generate(
        &self,
        prompt: &str,
        prefix: Option<&str>,
        seed: u64,
    ) -> Result<Result<Supplement, ParseFailure>, BackendError> {
        let mut req = GenRequest::user(self.generator.id(), prompt)
            .temperature(self.temperature)
            .seed(seed)
            .max_tokens(self.max_tokens);
        req.output_prefix = prefix.map(str::to_string);
        let text = self.generator.complete(&req)?;
        Ok(parse_supplement(&text))
    }

    /// `n` unforced samples from one request.
    pub fn generate_many(
        &self,
        prompt: &str,
        n: u32,
        seed: u64,
    ) -> Result<Vec<Result<Supplement, ParseFailure>>, BackendError> {
        let req = GenRequest::user(self.generator.id(), prompt)
            .n(n)
            .temperature(self.temperature)
            .seed(seed)
            .max_tokens(self.max_tokens);
        Ok(self.generator.generate(&req)?.iter().map(|c| parse_supplement(&c.text)).collect())
    }

    /// Run the actor on `actor_input` (already formatted) and score it.
    pub fn score_input(
        &self,
        task: &TaskInstance,
        actor_input: String,
        supplement: Option<Supplement>,
        origin: Origin<'_>,
    ) -> Result<ScoredSample, BackendError> {
        let req = GenRequest::user(self.actor.id(), actor_input)
            .seed(seed::derive(origin.seed, &["actor"]))
            .max_tokens(self.max_tokens);
        let output = self.actor.complete(&req)?;
        let outcome = self.evaluators.evaluate(&output, task);
        Ok(ScoredSample {
            task_id: task.id.clone(),
            benchmark: task.benchmark.clone(),
            split: task.split.expect("sampled tasks carry a split"),
            stage: origin.stage.to_string(),
            prompt: origin.prompt,
            supplement,
            actor_output: output,
            reward: outcome.reward,
            flagged: outcome.flag,
            meta: SampleMeta {
                temperature: origin.temperature,
                seed: origin.seed,
                sample_index: origin.sample_index,
                source: origin.source,
            },
        })
    }

    /// Score `task` with `supplement` appended in the actor format.
    pub fn score(
        &self,
        task: &TaskInstance,
        supplement: Option<Supplement>,
        origin: Origin<'_>,
    ) -> Result<ScoredSample, BackendError> {
        let input = self.format.format(&task.query, supplement.as_ref());
        self.score_input(task, input, supplement, origin)
    }
}

/// Per-task sampling result: what was scored, and what went wrong.
#[derive(Debug, Default)]
pub struct TaskSamples {
    pub samples: Vec<ScoredSample>,
    pub parse_failures: usize,
    pub transport_error: Option<String>,
}

impl TaskSamples {
    pub fn parse_failed(&mut self, task: &TaskInstance, f: &ParseFailure) {
        log::info!("{}: dropping unparseable supplement ({}): {:?}", task.id, f.reason, truncate(&f.raw));
        self.parse_failures += 1;
    }

    pub fn aborted(&mut self, task: &TaskInstance, e: &BackendError) {
        log::warn!("{}: {e}; skipping the rest of this task", task.id);
        self.transport_error = Some(e.to_string());
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(120).collect()
}

/// Totals over tasks.
#[derive(Debug, Default, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SamplingSummary {
    pub samples: usize,
    pub parse_failures: usize,
    pub aborted_tasks: Vec<String>,
}

pub fn merge(tasks: &[TaskInstance], per_task: Vec<TaskSamples>) -> (Vec<ScoredSample>, SamplingSummary) {
    let mut all = Vec::new();
    let mut summary = SamplingSummary::default();
    for (task, ts) in tasks.iter().zip(per_task) {
        summary.parse_failures += ts.parse_failures;
        if ts.transport_error.is_some() {
            summary.aborted_tasks.push(task.id.clone());
        }
        all.extend(ts.samples);
    }
    summary.samples = all.len();
    (all, summary)
}
