//! The stage machine: split → SFT data → SFT training → evaluation, then for
//! each iteration DPO data → DPO training → evaluation. State is persisted
//! after every stage and a re-run resumes at the first incomplete one.

pub mod config;
pub mod eval;
pub mod state;
pub mod trainer;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

pub use config::{ConfigError, EndpointConfig, RunConfig, SamplingConfig, TrainerConfig};
pub use eval::{EvalMode, ITS_INSTRUCTION};
pub use state::{checkpoint_tag, CheckpointRef, RunState, Stage};
pub use trainer::{reference_update, CommandTrainer, ReferenceTypeTrainer, Trainer, TrainerError};

use crate::backend::{
    Backend, Client, HttpBackend, HttpConfig, MockActor, MockGenerator, ResponseCache, RetryPolicy, Scenario,
};
use crate::bench::{
    load_benchmark, read_split_manifest, render_split_manifest, split_dataset, ManifestFile, Split, TaskInstance,
};
use crate::dpo::{self, IterationPlan};
use crate::journal::{self, Journal};
use crate::reward::{EvaluatorSet, ScoredSample};
use crate::sampling::{Sampler, SamplingSummary};
use crate::sft;
use crate::supplement::{ActorFormat, TemplateSet};

pub const SPLITS_FILE: &str = "splits.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String },
    /// Datasets up to this point are on disk; training must happen elsewhere.
    #[error("{stage}: {source}")]
    Trainer { stage: Stage, source: TrainerError },
}

impl PipelineError {
    /// Process exit code: 2 for configuration problems, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 3,
        }
    }
}

fn stage_err(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

/// Journal stage names for evaluation records.
pub fn eval_stage(tag: &str) -> String {
    format!("eval_{tag}")
}

pub fn types_stage(tag: &str) -> String {
    format!("types_{tag}")
}

/// Method tags evaluated at stage `eval(t)`, with their mode and checkpoint.
pub fn eval_plan(t: u32) -> Vec<(String, EvalMode, String)> {
    if t == 0 {
        vec![
            ("baseline".into(), EvalMode::Baseline, "base".into()),
            ("its".into(), EvalMode::Its, "base".into()),
            ("prompt".into(), EvalMode::Prompt, "base".into()),
            ("sft".into(), EvalMode::Supplement, "sft".into()),
        ]
    } else {
        vec![(checkpoint_tag(t), EvalMode::Supplement, checkpoint_tag(t))]
    }
}

pub struct Pipeline {
    config: RunConfig,
    root: PathBuf,
    journal: Journal,
    templates: TemplateSet,
    format: ActorFormat,
    evaluators: EvaluatorSet,
    actor: Client,
    trainer: Box<dyn Trainer>,
    tasks: Vec<TaskInstance>,
    state: RunState,
    generators: Mutex<BTreeMap<String, Client>>,
}

impl Pipeline {
    /// Validate the config, load benchmarks and any existing state under
    /// the output root.
    pub fn open(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let root = config.output_root.clone();
        std::fs::create_dir_all(&root)
            .map_err(|e| ConfigError::Invalid(format!("output root {}: {e}", root.display())))?;
        let fingerprint = config.fingerprint();
        let state = match RunState::load(&root).map_err(|e| ConfigError::Invalid(format!("state file: {e}")))? {
            Some(s) if s.config_fingerprint != fingerprint => {
                return Err(ConfigError::Invalid(format!(
                    "{} was written by a different configuration; use a fresh output root",
                    root.display()
                ))
                .into())
            }
            Some(s) => s,
            None => RunState::new(fingerprint),
        };

        let manifest = ManifestFile::load(&config.benchmarks).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut tasks = Vec::new();
        for b in &manifest.benchmarks {
            tasks.extend(load_benchmark(b).map_err(|e| ConfigError::Invalid(e.to_string()))?);
        }
        let splits_path = root.join(SPLITS_FILE);
        if state.completed >= Stage::Split {
            let splits = read_split_manifest(&splits_path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            for t in &mut tasks {
                t.split = Some(*splits.get(&t.id).ok_or_else(|| {
                    ConfigError::Invalid(format!("{} is missing from {}", t.id, splits_path.display()))
                })?);
            }
        }

        let actor_backend: Arc<dyn Backend> = match &config.actor {
            EndpointConfig::Mock { scenario, .. } => {
                let s = Scenario::load(scenario).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Arc::new(MockActor::new(&s.actor, &tasks))
            }
            EndpointConfig::Http { http, .. } => {
                Arc::new(HttpBackend::new(http.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
        };
        let trainer: Box<dyn Trainer> = match &config.trainer {
            TrainerConfig::Reference { eta } => Box::new(ReferenceTypeTrainer { eta: *eta, root: root.clone() }),
            TrainerConfig::Command { program, args, serve_base_url, beta, alpha, .. } => Box::new(CommandTrainer {
                program: program.clone(),
                args: args.clone(),
                serve_base_url: serve_base_url.clone(),
                beta: *beta,
                alpha: *alpha,
                seed: config.seed,
                root: root.clone(),
            }),
        };
        let mut p = Pipeline {
            journal: Journal::new(root.join("journal")),
            templates: config.template_set()?,
            format: ActorFormat::new(config.delimiter.clone()),
            evaluators: config.evaluators()?,
            actor: Client::new(actor_backend.clone()),
            trainer,
            tasks,
            state,
            generators: Mutex::new(BTreeMap::new()),
            root,
            config,
        };
        p.actor = p.client(actor_backend, p.config.actor.max_in_flight())?;
        Ok(p)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    pub fn actor(&self) -> &Client {
        &self.actor
    }

    /// Short actor name for score tables.
    pub fn actor_label(&self) -> String {
        match &self.config.actor {
            EndpointConfig::Mock { .. } => "mock".into(),
            EndpointConfig::Http { http, .. } => http.model.clone(),
        }
    }

    /// Write the report files for the current state.
    pub fn report(&self) -> std::io::Result<crate::analytics::ReportFiles> {
        crate::analytics::report(&self.root, &self.state, &self.journal, &self.actor_label())
    }

    /// Tasks of one split (empty before the split stage).
    pub fn tasks(&self, split: Split) -> Vec<TaskInstance> {
        self.tasks.iter().filter(|t| t.split == Some(split)).cloned().collect()
    }

    fn client(&self, backend: Arc<dyn Backend>, max_in_flight: usize) -> Result<Client, ConfigError> {
        let cache = if self.config.cache {
            let name = crate::seed::content_hash(backend.id())[..16].to_string();
            let path = self.root.join("cache").join(format!("{name}.jsonl"));
            Some(
                ResponseCache::open(&path)
                    .map_err(|e| ConfigError::Invalid(format!("cache {}: {e}", path.display())))?,
            )
        } else {
            None
        };
        Ok(Client::with_options(backend, RetryPolicy::default(), max_in_flight, cache))
    }

    /// The untrained generator.
    pub fn base_checkpoint(&self) -> CheckpointRef {
        match &self.config.generator {
            EndpointConfig::Mock { scenario, .. } => CheckpointRef::Mock { scenario: scenario.clone() },
            EndpointConfig::Http { http, .. } => {
                CheckpointRef::Endpoint { base_url: http.base_url.clone(), model: http.model.clone() }
            }
        }
    }

    /// A checkpoint by tag ("base", "sft", "dpo_t"), or `mock:<scenario>`,
    /// or a model id served where trained checkpoints are served.
    pub fn resolve_checkpoint(&self, name: &str) -> CheckpointRef {
        if name == "base" {
            return self.base_checkpoint();
        }
        if let Some(c) = self.state.checkpoints.get(name) {
            return c.clone();
        }
        if let Some(path) = name.strip_prefix("mock:") {
            return CheckpointRef::Mock { scenario: path.into() };
        }
        let base_url = match (&self.config.trainer, &self.config.generator) {
            (TrainerConfig::Command { serve_base_url, .. }, _) => serve_base_url.clone(),
            (_, EndpointConfig::Http { http, .. }) => http.base_url.clone(),
            _ => String::new(),
        };
        CheckpointRef::Endpoint { base_url, model: name.to_string() }
    }

    /// Client for a generator checkpoint (cached per checkpoint).
    pub fn generator(&self, checkpoint: &CheckpointRef) -> Result<Client, ConfigError> {
        let key = checkpoint.to_string();
        if let Some(c) = self.generators.lock().expect("generator registry").get(&key) {
            return Ok(c.clone());
        }
        let backend: Arc<dyn Backend> = match checkpoint {
            CheckpointRef::Mock { scenario } => {
                let s = Scenario::load(&self.root.join(scenario)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Arc::new(MockGenerator::new(&s))
            }
            CheckpointRef::Endpoint { base_url, model } => {
                let mut http = match &self.config.generator {
                    EndpointConfig::Http { http, .. } => http.clone(),
                    EndpointConfig::Mock { .. } => HttpConfig::new(base_url.clone(), model.clone()),
                };
                if let TrainerConfig::Command { serve_base_url, prefix_mode, logprobs, .. } = &self.config.trainer {
                    if serve_base_url == base_url {
                        http.prefix_mode = *prefix_mode;
                        http.logprobs = *logprobs;
                    }
                }
                http.base_url = base_url.clone();
                http.model = model.clone();
                if base_url.is_empty() {
                    return Err(ConfigError::Invalid(format!("no endpoint known for checkpoint {model:?}")));
                }
                Arc::new(HttpBackend::new(http).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
        };
        let client = self.client(backend, self.config.generator.max_in_flight())?;
        self.generators.lock().expect("generator registry").insert(key, client.clone());
        Ok(client)
    }

    fn sampler<'a>(&'a self, generator: &'a Client, temperature: f64) -> Sampler<'a> {
        let s = &self.config.sampling;
        Sampler {
            generator,
            actor: &self.actor,
            templates: &self.templates,
            format: &self.format,
            evaluators: &self.evaluators,
            run_seed: self.config.seed,
            temperature,
            max_tokens: s.max_tokens,
            parallelism: s.parallelism,
        }
    }

    fn checkpoint(&self, tag: &str, stage: Stage) -> Result<CheckpointRef, PipelineError> {
        if tag == "base" {
            return Ok(self.base_checkpoint());
        }
        self.state
            .checkpoints
            .get(tag)
            .cloned()
            .ok_or_else(|| stage_err(stage)(format!("no {tag} checkpoint recorded")))
    }

    fn write_journal(&self, stage: Stage, name: &str, samples: &[ScoredSample]) -> Result<(), PipelineError> {
        self.journal
            .write_stage(name, samples)
            .map(|_| ())
            .map_err(|e| stage_err(stage)(format!("journal {name}: {e}")))
    }

    /// Run every stage up to and including `target`.
    pub fn run_until(&mut self, target: Stage) -> Result<&RunState, PipelineError> {
        let last = Stage::last(self.config.iterations);
        if target > last {
            return Err(ConfigError::Invalid(format!("stage {target} is beyond the configured {last}")).into());
        }
        while self.state.completed < target {
            let next = self.state.completed.next(self.config.iterations).expect("target not reached yet");
            log::info!("stage {next}");
            self.execute(next)?;
            self.state.advance(next);
            self.state.save(&self.root).map_err(|e| stage_err(next)(format!("state file: {e}")))?;
        }
        Ok(&self.state)
    }

    /// Run to the end.
    pub fn run(&mut self) -> Result<&RunState, PipelineError> {
        self.run_until(Stage::last(self.config.iterations))
    }

    fn execute(&mut self, stage: Stage) -> Result<(), PipelineError> {
        match stage {
            Stage::Init => Ok(()),
            Stage::Split => self.split_stage(),
            Stage::SftData => self.sft_data_stage(),
            Stage::SftTrained => {
                let data = self.dataset_path("sft", stage)?;
                let base = self.base_checkpoint();
                let ckpt = self
                    .trainer
                    .train_sft(&data, &base, Path::new("checkpoints/sft"))
                    .map_err(|source| PipelineError::Trainer { stage, source })?;
                self.state.checkpoints.insert("sft".into(), ckpt);
                Ok(())
            }
            Stage::Eval(t) => self.eval_stage(t),
            Stage::DpoData(t) => self.dpo_data_stage(t),
            Stage::DpoTrained(t) => {
                let data = self.dataset_path(&dpo::stage_name(t), stage)?;
                let base = self.checkpoint(&checkpoint_tag(t - 1), stage)?;
                let tag = checkpoint_tag(t);
                let out = PathBuf::from("checkpoints").join(&tag);
                let ckpt = self
                    .trainer
                    .train_dpo(&data, &base, &base, &out)
                    .map_err(|source| PipelineError::Trainer { stage, source })?;
                self.state.checkpoints.insert(tag, ckpt);
                Ok(())
            }
        }
    }

    fn dataset_path(&self, key: &str, stage: Stage) -> Result<PathBuf, PipelineError> {
        self.state
            .datasets
            .get(key)
            .map(|p| self.root.join(p))
            .ok_or_else(|| stage_err(stage)(format!("no {key} dataset recorded")))
    }

    fn split_stage(&mut self) -> Result<(), PipelineError> {
        let err = stage_err(Stage::Split);
        let mut by_bench: BTreeMap<String, Vec<TaskInstance>> = BTreeMap::new();
        let order: Vec<String> = self.tasks.iter().map(|t| t.id.clone()).collect();
        for t in self.tasks.drain(..) {
            by_bench.entry(t.benchmark.clone()).or_default().push(t);
        }
        let mut split: BTreeMap<String, TaskInstance> = BTreeMap::new();
        for (name, tasks) in by_bench {
            for t in
                split_dataset(tasks, self.config.splits, self.config.seed).map_err(|e| err(format!("{name}: {e}")))?
            {
                split.insert(t.id.clone(), t);
            }
        }
        self.tasks = order.iter().map(|id| split.remove(id).expect("every task was split")).collect();
        journal::write_atomic(&self.root.join(SPLITS_FILE), render_split_manifest(&self.tasks).as_bytes())
            .map_err(|e| err(e.to_string()))
    }

    fn sft_data_stage(&mut self) -> Result<(), PipelineError> {
        let stage = Stage::SftData;
        let train = self.tasks(Split::Train);
        if train.is_empty() {
            return Err(stage_err(stage)("train split is empty".into()));
        }
        let generator = self.generator(&self.base_checkpoint())?;
        let s = &self.config.sampling;
        let sampler = self.sampler(&generator, s.temperature);
        let (mut samples, mut summary) = sft::sample_sft_candidates(&train, &sampler, s.k_sft);
        let (gold, gold_summary) = sft::score_gold_supplements(&train, &samples, &sampler);
        samples.extend(gold);
        merge_summary(&mut summary, gold_summary);
        self.write_journal(stage, sft::STAGE, &samples)?;

        let (records, stats) = sft::build_sft_dataset(&samples, train.len(), s.sft_target, self.config.seed);
        if records.is_empty() {
            log::warn!("SFT dataset is empty: no positive samples");
        }
        let rel = PathBuf::from("datasets").join("sft.jsonl");
        sft::emit_sft_dataset(&self.root.join(&rel), &records, &stats).map_err(|e| stage_err(stage)(e.to_string()))?;
        self.state.datasets.insert("sft".into(), rel);
        self.state.sampling.insert(sft::STAGE.into(), summary);
        Ok(())
    }

    fn dpo_data_stage(&mut self, t: u32) -> Result<(), PipelineError> {
        let stage = Stage::DpoData(t);
        let val = self.tasks(Split::Val);
        if val.is_empty() {
            return Err(stage_err(stage)("val split is empty".into()));
        }
        let s = self.config.sampling.clone();
        let plan = IterationPlan {
            t,
            repeats: s.repeats,
            ood_types: s.ood_types,
            concat_pairs: s.concat_pairs,
            n_free: s.n_free,
            cap: s.cap,
        };
        let concat = if t == 1 {
            let history =
                self.journal.read_stage(sft::STAGE).map_err(|e| stage_err(stage)(format!("sft journal: {e}")))?;
            dpo::select_concat_pairs(&dpo::positive_rates(&history), s.concat_pairs)
        } else {
            Vec::new()
        };
        let generator = self.generator(&self.checkpoint(&checkpoint_tag(t - 1), stage)?)?;
        let sampler = self.sampler(&generator, s.temperature);
        let sampled = dpo::sample_iteration(&plan, &val, &sampler, &concat);
        let name = dpo::stage_name(t);
        self.write_journal(stage, &name, &sampled.samples)?;

        let (pairs, stats) =
            dpo::build_dataset(t, &val, &sampled.samples, s.cap, self.config.seed, sampled.probe_distribution);
        let rel = PathBuf::from("datasets").join(format!("{name}.jsonl"));
        dpo::emit_dpo_dataset(&self.root.join(&rel), &pairs, &stats).map_err(|e| stage_err(stage)(e.to_string()))?;
        self.state.datasets.insert(name.clone(), rel);
        self.state.sampling.insert(name, sampled.summary);
        Ok(())
    }

    fn eval_stage(&mut self, t: u32) -> Result<(), PipelineError> {
        let stage = Stage::Eval(t);
        let test = self.tasks(Split::Test);
        for (tag, mode, ckpt_tag) in eval_plan(t) {
            let ckpt = self.checkpoint(&ckpt_tag, stage)?;
            let scores = self.evaluate_into_journal(mode, &ckpt, &test, &eval_stage(&tag), stage)?;
            self.state.metrics.insert(tag, scores);
        }
        let n = self.config.sampling.type_samples;
        if n > 0 {
            let tracked: Vec<&str> = if t == 0 { vec!["base", "sft"] } else { vec![] };
            let ckpt_tag = checkpoint_tag(t);
            for tag in tracked.into_iter().map(str::to_string).chain((t > 0).then(|| ckpt_tag.clone())) {
                let generator = self.generator(&self.checkpoint(&tag, stage)?)?;
                let sampler = self.sampler(&generator, self.config.sampling.temperature);
                let name = types_stage(&tag);
                let (samples, summary) = eval::sample_types(&test, &sampler, n, &name);
                self.write_journal(stage, &name, &samples)?;
                self.state.sampling.insert(name, summary);
            }
        }
        Ok(())
    }

    fn evaluate_into_journal(
        &self,
        mode: EvalMode,
        checkpoint: &CheckpointRef,
        test: &[TaskInstance],
        journal_stage: &str,
        stage: Stage,
    ) -> Result<BTreeMap<String, f64>, PipelineError> {
        let generator = if mode.uses_generator() { self.generator(checkpoint)? } else { self.generator_placeholder() };
        let sampler = self.sampler(&generator, self.config.sampling.eval_temperature);
        let (samples, scores) =
            eval::evaluate(mode, test, &sampler, journal_stage).map_err(|e| stage_err(stage)(e.to_string()))?;
        self.write_journal(stage, journal_stage, &samples)?;
        Ok(scores)
    }

    /// Stand-in generator for modes that never call one; any call fails.
    fn generator_placeholder(&self) -> Client {
        struct NoGenerator;
        impl Backend for NoGenerator {
            fn id(&self) -> &str {
                "none"
            }
            fn generate(
                &self,
                _: &crate::backend::GenRequest,
            ) -> Result<Vec<crate::backend::Completion>, crate::backend::BackendError> {
                Err(crate::backend::BackendError::Usage("this evaluation mode has no generator".into()))
            }
            fn supports_logprobs(&self) -> bool {
                false
            }
        }
        Client::new(Arc::new(NoGenerator))
    }

    /// Evaluate one checkpoint outside the stage sequence (splits must
    /// exist). Records go to the `adhoc_<mode>_<checkpoint>` journal.
    pub fn evaluate_checkpoint(
        &mut self,
        mode: EvalMode,
        checkpoint: &str,
    ) -> Result<BTreeMap<String, f64>, PipelineError> {
        self.run_until(Stage::Split)?;
        let ckpt = self.resolve_checkpoint(checkpoint);
        let label: String = checkpoint.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
        let test = self.tasks(Split::Test);
        self.evaluate_into_journal(mode, &ckpt, &test, &format!("adhoc_{mode}_{label}"), Stage::Eval(0))
    }
}

fn merge_summary(into: &mut SamplingSummary, other: SamplingSummary) {
    into.samples += other.samples;
    into.parse_failures += other.parse_failures;
    for id in other.aborted_tasks {
        if !into.aborted_tasks.contains(&id) {
            into.aborted_tasks.push(id);
        }
    }
}
