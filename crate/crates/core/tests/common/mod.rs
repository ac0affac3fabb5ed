#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sgt::pipeline::{Pipeline, RunConfig};
use sgt::synthetic::{write_demo_workspace, DemoOptions};

pub fn workspace(dir: &Path, opts: &DemoOptions) -> PathBuf {
    write_demo_workspace(dir, opts).expect("demo workspace")
}

pub fn open(config: &Path) -> Pipeline {
    Pipeline::open(RunConfig::load(config).expect("config")).expect("pipeline")
}

/// Replace the `[trainer]` table of a demo config.
pub fn set_trainer(config: &Path, table: &str) {
    let text = std::fs::read_to_string(config).unwrap();
    let head = text.split("[trainer]").next().unwrap();
    std::fs::write(config, format!("{head}[trainer]\n{table}\n")).unwrap();
}

/// Every file below `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Share of samples of one type in a journal stage.
pub fn type_fraction(p: &Pipeline, stage: &str, key: &str) -> f64 {
    let samples = p.journal().read_stage(stage).unwrap();
    let typed: Vec<String> = samples.iter().filter_map(|s| s.type_key()).collect();
    typed.iter().filter(|k| *k == key).count() as f64 / typed.len().max(1) as f64
}
