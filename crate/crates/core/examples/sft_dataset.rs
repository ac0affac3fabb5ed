//! Build the warm-start SFT dataset from mock samples on train tasks.

use std::sync::Arc;

use sgt::backend::{ActorScenario, Client, GeneratorScenario, MockActor, MockGenerator, Scenario, Trigger};
use sgt::bench::{Split, TaskInstance};
use sgt::reward::EvaluatorSet;
use sgt::sampling::Sampler;
use sgt::sft::{build_sft_dataset, emit_sft_dataset, read_sft_dataset, sample_sft_candidates, score_gold_supplements};
use sgt::supplement::{ActorFormat, TemplateSet};
use sgt::synthetic::{arithmetic_records, demo_distribution};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tasks: Vec<TaskInstance> = arithmetic_records("arith", 12, 5)
        .iter()
        .map(|r| {
            let id = format!("arith#{}", r["id"].as_str().unwrap());
            TaskInstance::new(&id, "arith", r["question"].as_str().unwrap(), r["answer"].as_str().unwrap())
                .with_split(Split::Train)
        })
        .collect();

    let mut scenario = Scenario {
        seed: 2,
        generator: GeneratorScenario { distribution: demo_distribution(), logprobs: true },
        actor: ActorScenario {
            trigger: Trigger::Types { keys: vec!["summary".into(), "cot".into()] },
            ..Default::default()
        },
    };
    scenario.canonicalize()?;
    let generator = Client::new(Arc::new(MockGenerator::new(&scenario)));
    let actor = Client::new(Arc::new(MockActor::new(&scenario.actor, &tasks)));
    let (templates, format, evaluators) = (TemplateSet::default(), ActorFormat::default(), EvaluatorSet::default());
    let sampler = Sampler {
        generator: &generator,
        actor: &actor,
        templates: &templates,
        format: &format,
        evaluators: &evaluators,
        run_seed: 2,
        temperature: 1.0,
        max_tokens: 256,
        parallelism: 4,
    };

    let (mut samples, summary) = sample_sft_candidates(&tasks, &sampler, 3);
    let (gold, _) = score_gold_supplements(&tasks, &samples, &sampler);
    println!(
        "{} generated samples ({} parse failures), {} gold-built",
        summary.samples,
        summary.parse_failures,
        gold.len()
    );
    samples.extend(gold);

    let (records, stats) = build_sft_dataset(&samples, tasks.len(), None, 2);
    println!("{}", serde_json::to_string_pretty(&stats)?);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("sft.jsonl");
    emit_sft_dataset(&path, &records, &stats)?;
    let back = read_sft_dataset(&path)?;
    println!("first record: {}", serde_json::to_string(&back[0])?);
    Ok(())
}
