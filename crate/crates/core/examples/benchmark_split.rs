//! Load a benchmark through a manifest and split it deterministically.

use sgt::bench::{load_benchmark, render_split_manifest, split_dataset, ManifestFile, Split, SplitRatios};
use sgt::synthetic::write_arithmetic_benchmark;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    write_arithmetic_benchmark(&dir.path().join("arith.jsonl"), "arith", 25, 1)?;
    std::fs::write(
        dir.path().join("benchmarks.toml"),
        r#"
[[benchmark]]
name = "arith"
path = "arith.jsonl"
reward_kind = "exact_match"

[benchmark.fields]
id = "id"
query = ["question"]
gold = "answer"
"#,
    )?;

    let manifest = ManifestFile::load(&dir.path().join("benchmarks.toml"))?;
    let tasks = load_benchmark(&manifest.benchmarks[0])?;
    let split = split_dataset(tasks, SplitRatios::default(), 42)?;
    for s in [Split::Train, Split::Val, Split::Test] {
        let ids: Vec<&str> = split.iter().filter(|t| t.split == Some(s)).map(|t| t.id.as_str()).collect();
        println!("{:<5} {:>2} {}", s.as_str(), ids.len(), ids.join(" "));
    }
    // same seed, same split: this manifest is what a run persists
    let again = split_dataset(load_benchmark(&manifest.benchmarks[0])?, SplitRatios::default(), 42)?;
    assert_eq!(render_split_manifest(&split), render_split_manifest(&again));
    print!("{}", render_split_manifest(&split).lines().take(3).map(|l| format!("{l}\n")).collect::<String>());
    Ok(())
}
