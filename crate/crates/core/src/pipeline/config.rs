//! Run configuration (TOML). Relative paths resolve against the config
//! file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{HttpConfig, PrefixMode};
use crate::bench::{ManifestFile, SplitRatios};
use crate::reward::{CommandSpec, Evaluator, EvaluatorSet, Executor, ExecutorHandle, LiteralEvalRunner};
use crate::supplement::{TemplateSet, DEFAULT_DELIMITER};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn default_iterations() -> u32 {
    5
}

fn default_delimiter() -> String {
    DEFAULT_DELIMITER.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_root: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Number of DPO iterations T.
    #[serde(default = "default_iterations")]
    pub iterations: u32,
    /// Benchmark manifest (`[[benchmark]]` tables).
    pub benchmarks: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    /// Prompt template overrides.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    pub generator: EndpointConfig,
    pub actor: EndpointConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub splits: SplitRatios,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default, rename = "reward")]
    pub rewards: Vec<RewardOverride>,
    /// Keep an append-only response cache per endpoint under the output root.
    #[serde(default)]
    pub cache: bool,
}

fn default_in_flight() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndpointConfig {
    /// Mock backends driven by a scenario file. The actor uses the
    /// scenario's `[actor]` table.
    Mock {
        scenario: PathBuf,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
    Http {
        #[serde(flatten)]
        http: HttpConfig,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

impl EndpointConfig {
    pub fn max_in_flight(&self) -> usize {
        match self {
            EndpointConfig::Mock { max_in_flight, .. } | EndpointConfig::Http { max_in_flight, .. } => *max_in_flight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub k_sft: u32,
    pub repeats: u32,
    pub ood_types: usize,
    pub concat_pairs: usize,
    pub n_free: u32,
    pub cap: usize,
    pub temperature: f64,
    pub eval_temperature: f64,
    pub max_tokens: u32,
    pub parallelism: usize,
    /// SFT dataset size; default min(positives, 2 × train tasks).
    pub sft_target: Option<usize>,
    /// Free samples per test task drawn at each evaluation to track the
    /// type distribution of a checkpoint. 0 disables.
    pub type_samples: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            k_sft: 5,
            repeats: 5,
            ood_types: 3,
            concat_pairs: 3,
            n_free: 20,
            cap: 20,
            temperature: 1.0,
            eval_temperature: 0.0,
            max_tokens: 512,
            parallelism: 8,
            sft_target: None,
            type_samples: 20,
        }
    }
}

fn default_eta() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    0.1
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainerConfig {
    /// Multiplicative-weights update of a mock generator's type distribution.
    Reference {
        #[serde(default = "default_eta")]
        eta: f64,
    },
    /// External trainer process; checkpoints are then served at
    /// `serve_base_url` under the id the trainer prints.
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        serve_base_url: String,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        prefix_mode: PrefixMode,
        #[serde(default = "default_true")]
        logprobs: bool,
    },
}

fn default_true() -> bool {
    true
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig::Reference { eta: default_eta() }
    }
}

/// Per-benchmark evaluator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardOverride {
    pub benchmark: String,
    #[serde(default)]
    pub answer_pattern: Option<String>,
    #[serde(default)]
    pub choice_pattern: Option<String>,
    /// External equivalence executor (`{candidate}`/`{gold}` file paths).
    #[serde(default)]
    pub executor: Option<CommandSpec>,
    /// External scorer for `external_command` benchmarks (JSON on stdin).
    #[serde(default)]
    pub command: Option<CommandSpec>,
    #[serde(default)]
    pub reentrant: bool,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        config.resolve_paths(base_dir);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::File { path: path.display().to_string(), message: e.to_string() })?;
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let dir = std::path::absolute(dir)
            .map_err(|e| ConfigError::File { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml_str(&text, &dir)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_root);
        fix(&mut self.benchmarks);
        if let Some(t) = &mut self.templates {
            fix(t);
        }
        for e in [&mut self.generator, &mut self.actor] {
            if let EndpointConfig::Mock { scenario, .. } = e {
                fix(scenario);
            }
        }
    }

    /// Check everything that can be checked without calling an endpoint.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.sampling;
        if s.k_sft == 0 || s.repeats == 0 || s.n_free == 0 || s.cap == 0 || s.parallelism == 0 || s.max_tokens == 0 {
            return Err(invalid("sampling counts, cap, parallelism and max_tokens must be positive"));
        }
        for (name, t) in [("temperature", s.temperature), ("eval_temperature", s.eval_temperature)] {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid(format!("sampling.{name} must be a finite value >= 0")));
            }
        }
        if self.delimiter.trim().is_empty() {
            return Err(invalid("delimiter must not be empty"));
        }
        let r = self.splits;
        if r.train <= 0.0 || r.val <= 0.0 || r.test <= 0.0 || (r.train + r.val + r.test - 1.0).abs() > 1e-9 {
            return Err(invalid("split ratios must be positive and sum to 1"));
        }
        let manifest = ManifestFile::load(&self.benchmarks).map_err(|e| invalid(format!("benchmarks: {e}")))?;
        if manifest.benchmarks.is_empty() {
            return Err(invalid("benchmark manifest lists no benchmarks"));
        }
        for b in &manifest.benchmarks {
            if !b.path.exists() {
                return Err(invalid(format!("benchmark {}: {} does not exist", b.name, b.path.display())));
            }
        }
        for o in &self.rewards {
            if !manifest.benchmarks.iter().any(|b| b.name == o.benchmark) {
                return Err(invalid(format!("reward override for unknown benchmark {:?}", o.benchmark)));
            }
        }
        self.template_set()?;
        self.evaluators()?;
        for e in [&self.generator, &self.actor] {
            match e {
                EndpointConfig::Mock { scenario, max_in_flight } => {
                    crate::backend::Scenario::load(scenario).map_err(|e| invalid(e.to_string()))?;
                    if *max_in_flight == 0 {
                        return Err(invalid("max_in_flight must be positive"));
                    }
                }
                EndpointConfig::Http { http, max_in_flight } => {
                    crate::backend::HttpBackend::new(http.clone()).map_err(|e| invalid(e.to_string()))?;
                    if *max_in_flight == 0 {
                        return Err(invalid("max_in_flight must be positive"));
                    }
                }
            }
        }
        match &self.trainer {
            TrainerConfig::Reference { eta } => {
                if !matches!(self.generator, EndpointConfig::Mock { .. }) {
                    return Err(invalid("the reference trainer needs a mock generator"));
                }
                if !(eta.is_finite() && *eta > 0.0) {
                    return Err(invalid("trainer.eta must be positive"));
                }
            }
            TrainerConfig::Command { program, beta, .. } => {
                if program.trim().is_empty() || beta.is_nan() || *beta <= 0.0 {
                    return Err(invalid("trainer.program must be set and trainer.beta positive"));
                }
            }
        }
        Ok(())
    }

    pub fn template_set(&self) -> Result<TemplateSet, ConfigError> {
        match &self.templates {
            Some(p) => TemplateSet::load(p).map_err(|e| invalid(format!("templates: {e}"))),
            None => Ok(TemplateSet::default()),
        }
    }

    pub fn evaluators(&self) -> Result<EvaluatorSet, ConfigError> {
        let mut set = EvaluatorSet::default();
        let manifest = ManifestFile::load(&self.benchmarks).map_err(|e| invalid(format!("benchmarks: {e}")))?;
        for b in &manifest.benchmarks {
            let mut ev = Evaluator::default()
                .with_executor(Arc::new(ExecutorHandle::new(Executor::Runner(Arc::new(LiteralEvalRunner)), true)));
            if let Some(o) = self.rewards.iter().find(|o| o.benchmark == b.name) {
                if let Some(p) = &o.answer_pattern {
                    ev = ev.with_answer_pattern(p).map_err(|e| invalid(format!("{}: answer_pattern: {e}", b.name)))?;
                }
                if let Some(p) = &o.choice_pattern {
                    ev = ev.with_choice_pattern(p).map_err(|e| invalid(format!("{}: choice_pattern: {e}", b.name)))?;
                }
                if let Some(spec) = &o.executor {
                    let scratch = self.output_root.join("scratch");
                    let exec = Executor::Command { spec: spec.clone(), scratch };
                    ev = ev.with_executor(Arc::new(ExecutorHandle::new(exec, o.reentrant)));
                }
                if let Some(spec) = &o.command {
                    ev = ev.with_command(spec.clone(), o.reentrant);
                }
            }
            set.insert(b.name.clone(), ev);
        }
        Ok(set)
    }

    /// Hash of everything that determines emitted data, except the number
    /// of iterations (extending T resumes an existing run).
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.iterations = 0;
        let mut text = toml::to_string(&c).expect("config serializes");
        let mut extra: BTreeMap<String, String> = BTreeMap::new();
        for (name, e) in [("generator", &self.generator), ("actor", &self.actor)] {
            if let EndpointConfig::Mock { scenario, .. } = e {
                extra.insert(name.into(), std::fs::read_to_string(scenario).unwrap_or_default());
            }
        }
        if let Ok(m) = ManifestFile::load(&self.benchmarks) {
            for b in m.benchmarks {
                extra.insert(format!("bench:{}", b.name), std::fs::read_to_string(&b.path).unwrap_or_default());
            }
        }
        text.push_str(&serde_json::to_string(&extra).expect("map serializes"));
        crate::seed::content_hash(text)[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_root = "out"
benchmarks = "benchmarks.toml"
[generator]
kind = "mock"
scenario = "scenario.toml"
[actor]
kind = "http"
base_url = "http://127.0.0.1:9/v1"
model = "actor"
"#;

    #[test]
    fn defaults_and_path_resolution() {
        let c = RunConfig::from_toml_str(MINIMAL, Path::new("/cfg")).unwrap();
        assert_eq!(c.output_root, Path::new("/cfg/out"));
        assert_eq!(c.iterations, 5);
        assert_eq!((c.sampling.k_sft, c.sampling.repeats, c.sampling.n_free, c.sampling.cap), (5, 5, 20, 20));
        assert_eq!((c.sampling.temperature, c.sampling.eval_temperature), (1.0, 0.0));
        assert_eq!(c.trainer, TrainerConfig::Reference { eta: 1.0 });
        match &c.generator {
            EndpointConfig::Mock { scenario, max_in_flight } => {
                assert_eq!(scenario, Path::new("/cfg/scenario.toml"));
                assert_eq!(*max_in_flight, 8);
            }
            other => panic!("{other:?}"),
        }
        match &c.actor {
            EndpointConfig::Http { http, .. } => assert_eq!(http.model, "actor"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{MINIMAL}\n[sampling]\nk_sfr = 3\n");
        assert!(RunConfig::from_toml_str(&text, Path::new("/")).is_err());
    }

    #[test]
    fn fingerprint_ignores_iterations_only() {
        let a = RunConfig::from_toml_str(MINIMAL, Path::new("/cfg")).unwrap();
        let mut b = a.clone();
        b.iterations = 9;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn trainer_tables() {
        let text = format!(
            "{MINIMAL}\n[trainer]\nkind = \"command\"\nprogram = \"sgt-train\"\nserve_base_url = \"http://h/v1\"\n"
        );
        let c = RunConfig::from_toml_str(&text, Path::new("/")).unwrap();
        match c.trainer {
            TrainerConfig::Command { beta, alpha, .. } => assert_eq!((beta, alpha), (0.1, 1.0)),
            other => panic!("{other:?}"),
        }
    }
}
