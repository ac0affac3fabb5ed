//! First DPO iteration on val tasks: forced predefined, out-of-distribution
//! and concatenated candidates, then capped and stratified preference pairs.

use std::sync::Arc;

use sgt::backend::{ActorScenario, Client, GeneratorScenario, MockActor, MockGenerator, Scenario, Trigger};
use sgt::bench::{Split, TaskInstance};
use sgt::dpo::{self, IterationPlan};
use sgt::reward::EvaluatorSet;
use sgt::sampling::Sampler;
use sgt::supplement::{ActorFormat, TemplateSet};
use sgt::synthetic::{arithmetic_records, demo_distribution};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tasks: Vec<TaskInstance> = arithmetic_records("arith", 4, 9)
        .iter()
        .map(|r| {
            let id = format!("arith#{}", r["id"].as_str().unwrap());
            TaskInstance::new(&id, "arith", r["question"].as_str().unwrap(), r["answer"].as_str().unwrap())
                .with_split(Split::Val)
        })
        .collect();

    let mut scenario = Scenario {
        seed: 4,
        generator: GeneratorScenario { distribution: demo_distribution(), logprobs: true },
        actor: ActorScenario {
            trigger: Trigger::Types { keys: vec!["summary".into(), "hint".into()] },
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
        run_seed: 4,
        temperature: 1.0,
        max_tokens: 256,
        parallelism: 4,
    };

    // in a run these come from the SFT journal's per-type success rates
    let concat = vec![("summary".to_string(), "cot".to_string()), ("summary".to_string(), "answer".to_string())];
    let plan = IterationPlan::new(1);
    let sampled = dpo::sample_iteration(&plan, &tasks, &sampler, &concat);
    println!("{} candidates for {} tasks", sampled.samples.len(), tasks.len());

    let (pairs, stats) = dpo::build_dataset(1, &tasks, &sampled.samples, plan.cap, 4, sampled.probe_distribution);
    println!("{}", serde_json::to_string_pretty(&stats)?);
    if let Some(p) = pairs.first() {
        println!("example pair ({}): chosen {} / rejected {}", p.category.as_str(), p.chosen, p.rejected);
    }
    Ok(())
}
