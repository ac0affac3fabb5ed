//! Render generator prompts, parse what comes back, and build actor input.

use sgt::bench::TaskInstance;
use sgt::supplement::{format_actor_input, make_concat, parse_supplement, SupplementType, TemplateSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = TaskInstance::new("arith#q0001", "arith", "What is 17 * 23?", "391");
    let templates = TemplateSet::default();

    for stype in SupplementType::sft_types() {
        let t = templates.template(&stype)?;
        println!("{:<12} prefix {:<40} {}", stype.key(), t.output_prefix, t.instruction);
    }

    let summary = parse_supplement(r#"{"summary": "Multiply 17 by 23; 17*20 + 17*3."}"#)?;
    let cot = parse_supplement(r#"{"step_by_step_reasoning": "17*20 = 340, 17*3 = 51, 340 + 51 = 391"}"#)?;
    println!("\nparsed types: {} and {}", summary.type_key(), cot.type_key());

    // a key outside the predefined set becomes its own named type
    let hint = parse_supplement(r#"{"hint": "split 23 into 20 + 3"}"#)?;
    println!("named type: {}", hint.type_key());

    let both = make_concat(&summary, &cot)?;
    println!("concatenated: {} -> {}", both.type_key(), both.raw());

    match parse_supplement("not json at all") {
        Ok(_) => unreachable!(),
        Err(f) => println!("unparseable output is reported: {f}"),
    }

    println!("\nactor input:\n{}", format_actor_input(&task, Some(&both)));
    Ok(())
}
