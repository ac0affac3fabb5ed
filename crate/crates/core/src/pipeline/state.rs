//! Persisted run state: the last completed stage, checkpoints, datasets and
//! metrics. Written atomically after every stage.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sampling::SamplingSummary;

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Init,
    Split,
    SftData,
    SftTrained,
    /// Evaluation after SFT (t = 0, includes the baselines) or after DPO
    /// iteration t.
    Eval(u32),
    DpoData(u32),
    DpoTrained(u32),
}

impl Stage {
    pub fn ordinal(self) -> u64 {
        match self {
            Stage::Init => 0,
            Stage::Split => 1,
            Stage::SftData => 2,
            Stage::SftTrained => 3,
            Stage::Eval(t) => 4 + 3 * t as u64,
            Stage::DpoData(t) => 2 + 3 * t as u64,
            Stage::DpoTrained(t) => 3 + 3 * t as u64,
        }
    }

    /// The stage after `self` in a run with `iterations` DPO iterations, or
    /// `None` when `self` is the last one.
    pub fn next(self, iterations: u32) -> Option<Stage> {
        let next = match self {
            Stage::Init => Stage::Split,
            Stage::Split => Stage::SftData,
            Stage::SftData => Stage::SftTrained,
            Stage::SftTrained => Stage::Eval(0),
            Stage::Eval(t) if t >= iterations => return None,
            Stage::Eval(t) => Stage::DpoData(t + 1),
            Stage::DpoData(t) => Stage::DpoTrained(t),
            Stage::DpoTrained(t) => Stage::Eval(t),
        };
        Some(next)
    }

    pub fn last(iterations: u32) -> Stage {
        Stage::Eval(iterations)
    }
}

impl PartialOrd for Stage {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Stage {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ordinal().cmp(&other.ordinal())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Init => f.write_str("init"),
            Stage::Split => f.write_str("split"),
            Stage::SftData => f.write_str("sft_data"),
            Stage::SftTrained => f.write_str("sft_trained"),
            Stage::Eval(t) => write!(f, "eval({t})"),
            Stage::DpoData(t) => write!(f, "dpo_data({t})"),
            Stage::DpoTrained(t) => write!(f, "dpo_trained({t})"),
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let simple = match s {
            "init" => Some(Stage::Init),
            "split" => Some(Stage::Split),
            "sft_data" => Some(Stage::SftData),
            "sft_trained" => Some(Stage::SftTrained),
            _ => None,
        };
        if let Some(stage) = simple {
            return Ok(stage);
        }
        let (name, rest) = s.split_once('(').ok_or_else(|| format!("unknown stage {s:?}"))?;
        let t: u32 = rest.strip_suffix(')').and_then(|n| n.parse().ok()).ok_or_else(|| format!("bad stage {s:?}"))?;
        match name {
            "eval" => Ok(Stage::Eval(t)),
            "dpo_data" if t > 0 => Ok(Stage::DpoData(t)),
            "dpo_trained" if t > 0 => Ok(Stage::DpoTrained(t)),
            _ => Err(format!("unknown stage {s:?}")),
        }
    }
}

impl Serialize for Stage {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Stage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A generator checkpoint, referenced as something servable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointRef {
    /// Mock generator scenario file; relative paths are under the output root.
    Mock { scenario: PathBuf },
    /// Model id on a chat-completions endpoint.
    Endpoint { base_url: String, model: String },
}

impl fmt::Display for CheckpointRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointRef::Mock { scenario } => write!(f, "mock:{}", scenario.display()),
            CheckpointRef::Endpoint { base_url, model } => write!(f, "{model}@{base_url}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config_fingerprint: String,
    pub completed: Stage,
    /// "base", "sft", "dpo_1", ...
    pub checkpoints: BTreeMap<String, CheckpointRef>,
    /// Dataset paths relative to the output root, keyed like checkpoints.
    pub datasets: BTreeMap<String, PathBuf>,
    /// Method tag → benchmark → mean test reward.
    pub metrics: BTreeMap<String, BTreeMap<String, f64>>,
    pub sampling: BTreeMap<String, SamplingSummary>,
}

pub const STATE_FILE: &str = "state.json";

impl RunState {
    pub fn new(config_fingerprint: String) -> Self {
        Self {
            config_fingerprint,
            completed: Stage::Init,
            checkpoints: BTreeMap::new(),
            datasets: BTreeMap::new(),
            metrics: BTreeMap::new(),
            sampling: BTreeMap::new(),
        }
    }

    pub fn path(root: &Path) -> PathBuf {
        root.join(STATE_FILE)
    }

    pub fn load(root: &Path) -> std::io::Result<Option<Self>> {
        let path = Self::path(root);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map(Some).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, root: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("state serializes");
        text.push('\n');
        crate::journal::write_atomic(&Self::path(root), text.as_bytes())
    }

    /// Record `stage` as completed. Stages only move forward.
    pub fn advance(&mut self, stage: Stage) {
        assert!(stage > self.completed, "stage {stage} does not follow {}", self.completed);
        self.completed = stage;
    }
}

/// Checkpoint tag for iteration t: "sft" at 0.
pub fn checkpoint_tag(t: u32) -> String {
    if t == 0 {
        "sft".into()
    } else {
        format!("dpo_{t}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_stages(t: u32) -> Vec<Stage> {
        let mut out = vec![Stage::Init];
        while let Some(s) = out.last().unwrap().next(t) {
            out.push(s);
        }
        out
    }

    #[test]
    fn stage_sequence() {
        let s = all_stages(2);
        let names: Vec<String> = s.iter().map(|s| s.to_string()).collect();
        assert_eq!(
            names,
            [
                "init",
                "split",
                "sft_data",
                "sft_trained",
                "eval(0)",
                "dpo_data(1)",
                "dpo_trained(1)",
                "eval(1)",
                "dpo_data(2)",
                "dpo_trained(2)",
                "eval(2)"
            ]
        );
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|x| x.to_string().parse::<Stage>().unwrap() == *x));
        assert_eq!(all_stages(0).last(), Some(&Stage::Eval(0)));
        assert_eq!(*s.last().unwrap(), Stage::last(2));
    }

    #[test]
    fn bad_stage_names() {
        for bad in ["", "eval", "dpo_data(0)", "dpo_data(x)", "train"] {
            assert!(bad.parse::<Stage>().is_err(), "{bad}");
        }
    }

    #[test]
    #[should_panic(expected = "does not follow")]
    fn state_never_moves_backward() {
        let mut st = RunState::new("f".into());
        st.advance(Stage::SftData);
        st.advance(Stage::Split);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        assert!(RunState::load(dir.path()).unwrap().is_none());
        let mut st = RunState::new("abc".into());
        st.advance(Stage::DpoData(1));
        st.checkpoints.insert("sft".into(), CheckpointRef::Mock { scenario: "checkpoints/sft/scenario.toml".into() });
        st.checkpoints
            .insert("base".into(), CheckpointRef::Endpoint { base_url: "http://h/v1".into(), model: "m".into() });
        st.save(dir.path()).unwrap();
        assert_eq!(RunState::load(dir.path()).unwrap(), Some(st));
    }
}
