//! Small synthetic benchmarks and a ready-to-run mock workspace, for demos,
//! examples and end-to-end tests.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::backend::{ActorScenario, GeneratorScenario, Scenario, Trigger};
use crate::journal::write_atomic;
use crate::seed;
use crate::supplement::DEFAULT_DELIMITER;

/// `{"question", "answer"}` records: two-operand integer arithmetic.
pub fn arithmetic_records(name: &str, n: usize, seed: u64) -> Vec<serde_json::Value> {
    let mut rng = seed::rng(seed, &["synthetic", name]);
    (0..n)
        .map(|i| {
            let a: i64 = rng.random_range(2..100);
            let b: i64 = rng.random_range(2..100);
            let (op, value) = match rng.random_range(0..3) {
                0 => ("+", a + b),
                1 => ("-", a - b),
                _ => ("*", a * b),
            };
            serde_json::json!({
                "id": format!("q{i:04}"),
                "question": format!("What is {a} {op} {b}?"),
                "answer": value.to_string(),
            })
        })
        .collect()
}

pub fn write_arithmetic_benchmark(path: &Path, name: &str, n: usize, seed: u64) -> io::Result<()> {
    let mut text = String::new();
    for r in arithmetic_records(name, n, seed) {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Type weights of the demo generator: every predefined type, free style and
/// three types outside the predefined set. Weights are distinct so greedy
/// decoding has a unique choice.
pub fn demo_distribution() -> BTreeMap<String, f64> {
    [
        ("answer", 0.06),
        ("background", 0.08),
        ("cot", 0.10),
        ("rephrase", 0.05),
        ("summary", 0.07),
        ("pairs", 0.04),
        ("mistakes", 0.03),
        ("one_shot", 0.02),
        ("free_style", 0.15),
        ("hint", 0.16),
        ("plan", 0.13),
        ("outline", 0.11),
    ]
    .iter()
    .map(|(k, w)| (k.to_string(), *w))
    .collect()
}

#[derive(Clone, Debug)]
pub struct DemoOptions {
    pub benchmarks: Vec<String>,
    pub tasks_per_benchmark: usize,
    pub iterations: u32,
    pub seed: u64,
    pub trigger: Trigger,
    pub distribution: BTreeMap<String, f64>,
    /// Mock actor accuracy without a triggering supplement.
    pub base_accuracy: f64,
    /// Extra TOML appended to the run config.
    pub extra_config: String,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            benchmarks: vec!["arith".into()],
            tasks_per_benchmark: 30,
            iterations: 3,
            seed: 7,
            trigger: Trigger::Types { keys: vec!["summary".into(), "cot".into(), "hint".into()] },
            distribution: demo_distribution(),
            base_accuracy: 0.0,
            extra_config: String::new(),
        }
    }
}

/// Write benchmarks, a manifest, a mock scenario and a run config (output
/// root `out/`) into `dir`; returns the config path.
pub fn write_demo_workspace(dir: &Path, opts: &DemoOptions) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir.join("bench"))?;
    let mut manifest = String::new();
    for name in &opts.benchmarks {
        write_arithmetic_benchmark(
            &dir.join("bench").join(format!("{name}.jsonl")),
            name,
            opts.tasks_per_benchmark,
            opts.seed,
        )?;
        manifest.push_str(&format!(
            "[[benchmark]]\nname = \"{name}\"\npath = \"bench/{name}.jsonl\"\nreward_kind = \"exact_match\"\nsize = {}\n\n[benchmark.fields]\nid = \"id\"\nquery = [\"question\"]\ngold = \"answer\"\n\n",
            opts.tasks_per_benchmark
        ));
    }
    write_atomic(&dir.join("benchmarks.toml"), manifest.as_bytes())?;

    let mut scenario = Scenario {
        seed: opts.seed,
        generator: GeneratorScenario { distribution: opts.distribution.clone(), logprobs: true },
        actor: ActorScenario {
            trigger: opts.trigger.clone(),
            delimiter: DEFAULT_DELIMITER.into(),
            base_accuracy: opts.base_accuracy,
        },
    };
    scenario.canonicalize().map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    scenario.save(&dir.join("scenario.toml")).map_err(|e| io::Error::other(e.to_string()))?;

    let config = format!(
        "output_root = \"out\"\nseed = {}\niterations = {}\nbenchmarks = \"benchmarks.toml\"\n\n[generator]\nkind = \"mock\"\nscenario = \"scenario.toml\"\n\n[actor]\nkind = \"mock\"\nscenario = \"scenario.toml\"\n\n[trainer]\nkind = \"reference\"\neta = 1.0\n{}",
        opts.seed, opts.iterations, opts.extra_config
    );
    let path = dir.join("sgt.toml");
    write_atomic(&path, config.as_bytes())?;
    Ok(path)
}
