use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgt::pipeline::{EvalMode, Pipeline, PipelineError, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "sgt", version, about = "Supplement generation training orchestrator")]
struct Cli {
    /// Run configuration file.
    #[arg(short, long, global = true, default_value = "sgt.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the configuration without calling any endpoint.
    ValidateConfig,
    /// Split every benchmark into train/val/test.
    Split,
    /// Sample, score and emit the warm-start SFT dataset.
    SftData,
    /// Run up to and including the DPO dataset of iteration `iter`.
    DpoData {
        #[arg(long)]
        iter: u32,
    },
    /// Score one checkpoint on the test split.
    Eval {
        #[arg(long, value_parser = |s: &str| s.parse::<EvalMode>())]
        mode: EvalMode,
        /// "base", "sft", "dpo_<t>", "mock:<scenario>" or a served model id.
        #[arg(long, default_value = "base")]
        checkpoint: String,
    },
    /// Run (or resume) the whole pipeline.
    Run {
        /// Stop after this stage, e.g. "sft_trained" or "dpo_data(2)".
        #[arg(long, value_parser = |s: &str| s.parse::<Stage>())]
        until: Option<Stage>,
    },
    /// Write score and type-distribution reports.
    Report,
    /// Write a synthetic mock workspace (benchmarks, scenario, config).
    Demo {
        dir: PathBuf,
        #[arg(long, default_value_t = 30)]
        tasks: usize,
        #[arg(long, default_value_t = 3)]
        iterations: u32,
        /// Mock actor accuracy without a helpful supplement.
        #[arg(long, default_value_t = 0.3)]
        base_accuracy: f64,
    },
}

fn open(config: &std::path::Path) -> Result<Pipeline, PipelineError> {
    Pipeline::open(RunConfig::load(config)?)
}

fn io_failure(stage: Stage) -> impl Fn(std::io::Error) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Cmd::ValidateConfig => {
            let config = RunConfig::load(&cli.config)?;
            config.validate()?;
            println!("ok: {} (fingerprint {})", cli.config.display(), config.fingerprint());
        }
        Cmd::Split => {
            let mut p = open(&cli.config)?;
            p.run_until(Stage::Split)?;
            println!("{}", p.root().join(sgt::pipeline::SPLITS_FILE).display());
        }
        Cmd::SftData => {
            let mut p = open(&cli.config)?;
            p.run_until(Stage::SftData)?;
            println!("{}", p.root().join(&p.state().datasets["sft"]).display());
        }
        Cmd::DpoData { iter } => {
            let mut p = open(&cli.config)?;
            if iter == 0 {
                return Err(sgt::pipeline::ConfigError::Invalid("--iter starts at 1".into()).into());
            }
            p.run_until(Stage::DpoData(iter))?;
            println!("{}", p.root().join(&p.state().datasets[&sgt::dpo::stage_name(iter)]).display());
        }
        Cmd::Eval { mode, checkpoint } => {
            let mut p = open(&cli.config)?;
            let scores = p.evaluate_checkpoint(mode, &checkpoint)?;
            println!("{}", serde_json::to_string_pretty(&scores).expect("scores serialize"));
        }
        Cmd::Run { until } => {
            let mut p = open(&cli.config)?;
            let state = match until {
                Some(stage) => p.run_until(stage)?,
                None => p.run()?,
            };
            println!("completed {}", state.completed);
            let files = p.report().map_err(io_failure(p.state().completed))?;
            println!("report: {}", files.dir.display());
        }
        Cmd::Report => {
            let p = open(&cli.config)?;
            let files = p.report().map_err(io_failure(p.state().completed))?;
            for f in files.files {
                println!("{}", f.display());
            }
        }
        Cmd::Demo { dir, tasks, iterations, base_accuracy } => {
            let opts = sgt::synthetic::DemoOptions {
                tasks_per_benchmark: tasks,
                iterations,
                base_accuracy,
                ..Default::default()
            };
            let path = sgt::synthetic::write_demo_workspace(&dir, &opts).map_err(io_failure(Stage::Init))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sgt: {e}");
            if let PipelineError::Trainer { .. } = e {
                eprintln!("sgt: datasets written so far are kept; train externally or fix the trainer and re-run");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
