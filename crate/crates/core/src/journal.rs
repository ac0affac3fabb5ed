//! Sample journal (one line-delimited file per stage) and atomic file writes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::reward::ScoredSample;

/// Write `bytes` to `path` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("row serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    write_atomic(path, to_jsonl(rows).as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

/// Journal directory holding `<stage>.jsonl` files of scored samples.
#[derive(Clone, Debug)]
pub struct Journal {
    dir: PathBuf,
}

impl Journal {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, stage: &str) -> PathBuf {
        self.dir.join(format!("{stage}.jsonl"))
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.path(stage).exists()
    }

    /// Replace the stage's journal in one step.
    pub fn write_stage(&self, stage: &str, samples: &[ScoredSample]) -> io::Result<PathBuf> {
        debug_assert!(samples.iter().all(|s| s.stage == stage));
        let path = self.path(stage);
        write_jsonl(&path, samples)?;
        Ok(path)
    }

    pub fn read_stage(&self, stage: &str) -> io::Result<Vec<ScoredSample>> {
        read_jsonl(&self.path(stage))
    }

    /// Stage names present on disk, sorted.
    pub fn stages(&self) -> io::Result<Vec<String>> {
        if !self.dir.exists() {
            return Ok(Vec::new());
        }
        let mut out: Vec<String> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".jsonl")).map(str::to_string))
            .collect();
        out.sort();
        Ok(out)
    }

    pub fn read_all(&self) -> io::Result<Vec<ScoredSample>> {
        let mut all = Vec::new();
        for stage in self.stages()? {
            all.extend(self.read_stage(&stage)?);
        }
        Ok(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::Split;
    use crate::reward::{SampleMeta, Source};

    #[test]
    fn stage_roundtrip_and_listing() {
        let dir = tempfile::tempdir().unwrap();
        let j = Journal::new(dir.path().join("journal"));
        assert!(j.stages().unwrap().is_empty());
        let s = ScoredSample {
            task_id: "b#1".into(),
            benchmark: "b".into(),
            split: Split::Train,
            stage: "sft".into(),
            prompt: Some("q".into()),
            supplement: Some(crate::supplement::parse_supplement("{\"summary\": \"x\"}").unwrap()),
            actor_output: "y".into(),
            reward: true.into(),
            flagged: None,
            meta: SampleMeta { temperature: 1.0, seed: 3, sample_index: 0, source: Source::Predefined },
        };
        j.write_stage("sft", std::slice::from_ref(&s)).unwrap();
        assert_eq!(j.read_stage("sft").unwrap(), vec![s]);
        assert_eq!(j.stages().unwrap(), ["sft"]);
        assert!(j.has_stage("sft") && !j.has_stage("dpo_iter_1"));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/state.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
