//! End-to-end mock run: split, SFT data, reference training, evaluation and
//! three DPO iterations, then the report.

use sgt::pipeline::{Pipeline, RunConfig};
use sgt::synthetic::{write_demo_workspace, DemoOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = write_demo_workspace(dir.path(), &DemoOptions { base_accuracy: 0.3, ..Default::default() })?;
    let mut pipeline = Pipeline::open(RunConfig::load(&config)?)?;
    let state = pipeline.run()?;
    println!("completed {}", state.completed);
    let report = pipeline.report()?;
    print!("{}", std::fs::read_to_string(report.dir.join("summary.md"))?);
    Ok(())
}
