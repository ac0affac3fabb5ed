//! Proxy rewards: exact match, multiple choice and execution equivalence.

use std::sync::Arc;

use sgt::bench::TaskInstance;
use sgt::reward::{Evaluator, Executor, ExecutorHandle, LiteralEvalRunner, RewardKind};

fn task(kind: RewardKind, gold: &str) -> TaskInstance {
    let mut t = TaskInstance::new("demo#0", "demo", "question", gold);
    t.reward_kind = kind;
    t
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let exact = task(RewardKind::ExactMatch, "Paris");
    let plain = Evaluator::default();
    for y in ["paris", "  Paris. ", "The answer is Paris", "Lyon"] {
        println!("exact     {y:<22} -> {}", plain.evaluate(y, &exact).reward.value());
    }
    let extracting = Evaluator::default().with_answer_pattern(r"answer is (\w+)")?;
    println!(
        "extracted {:<22} -> {}",
        "The answer is Paris",
        extracting.evaluate("The answer is Paris", &exact).reward.value()
    );

    let mc = task(RewardKind::MultipleChoice, "C");
    for y in ["(C) 12", "so the answer is: C", "B"] {
        println!("choice    {y:<22} -> {}", plain.evaluate(y, &mc).reward.value());
    }

    let exec = task(RewardKind::ExecutionEquivalence, "SELECT 6 * 7");
    let runner = Evaluator::default()
        .with_executor(Arc::new(ExecutorHandle::new(Executor::Runner(Arc::new(LiteralEvalRunner)), true)));
    for y in ["SELECT 40 + 2", "SELECT 41", "DROP TABLE x"] {
        let o = runner.evaluate(y, &exec);
        println!("execution {y:<22} -> {} {}", o.reward.value(), o.flag.unwrap_or_default());
    }
    Ok(())
}
