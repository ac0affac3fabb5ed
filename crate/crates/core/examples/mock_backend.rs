//! Sample supplements from the mock generator and judge them with the mock actor.

use std::sync::Arc;

use sgt::backend::{type_distribution, Client, GenRequest, MockActor, MockGenerator, Scenario};
use sgt::bench::TaskInstance;
use sgt::supplement::{format_actor_input, parse_supplement, TemplateSet};

const SCENARIO: &str = r#"
seed = 3

[generator.distribution]
summary = 0.4
cot = 0.3
hint = 0.2
free_style = 0.1

[actor.trigger]
kind = "types"
keys = ["cot"]
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::from_toml_str(SCENARIO)?;
    let task = TaskInstance::new("arith#q0000", "arith", "What is 12 + 30?", "42");
    let generator = Client::new(Arc::new(MockGenerator::new(&scenario)));
    let actor = Client::new(Arc::new(MockActor::new(&scenario.actor, std::slice::from_ref(&task))));

    let prompt = TemplateSet::default().free_style_prompt(&task);
    println!("type distribution at the indicator position:");
    for (k, p) in type_distribution(&generator, &prompt, 1)? {
        println!("  {k:<10} {p:.3}");
    }

    let req = GenRequest::user(generator.id(), prompt).n(8).temperature(1.0).seed(11);
    for c in generator.generate(&req)? {
        let sup = parse_supplement(&c.text)?;
        let answer = actor.complete(&GenRequest::user(actor.id(), format_actor_input(&task, Some(&sup))))?;
        let verdict = if answer == task.gold { "correct" } else { "wrong" };
        println!("{:<10} {verdict:<8} {}", sup.type_key(), sup.raw());
    }
    println!("generator calls: {}, actor calls: {}", generator.call_count(), actor.call_count());
    Ok(())
}
