//! Training hand-off: an external trainer process, or the reference type
//! trainer that moves a mock generator's type distribution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use crate::backend::Scenario;
use crate::dpo::{read_dpo_dataset, PreferencePair};
use crate::sft::read_sft_dataset;
use crate::supplement::SupplementType;

use super::state::CheckpointRef;

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("trainer unavailable: {0}")]
    Unavailable(String),
    #[error("training failed: {0}")]
    Failed(String),
}

pub trait Trainer: Send + Sync {
    /// Train on an SFT dataset starting from `base`; `out_dir` is the
    /// checkpoint's directory under the output root.
    fn train_sft(&self, data: &Path, base: &CheckpointRef, out_dir: &Path) -> Result<CheckpointRef, TrainerError>;

    /// DPO with `reference` frozen as the reference policy.
    fn train_dpo(
        &self,
        data: &Path,
        base: &CheckpointRef,
        reference: &CheckpointRef,
        out_dir: &Path,
    ) -> Result<CheckpointRef, TrainerError>;
}

/// Weight given to a type that gains mass but was not in the distribution.
pub const NEW_TYPE_FLOOR: f64 = 0.01;

/// `w[k] *= exp(eta * net[k] / total)`, renormalized. Types absent from
/// `dist` enter at [`NEW_TYPE_FLOOR`] when their net count is positive.
pub fn reference_update(
    dist: &BTreeMap<String, f64>,
    net: &BTreeMap<String, i64>,
    total: usize,
    eta: f64,
) -> BTreeMap<String, f64> {
    if total == 0 {
        return dist.clone();
    }
    let mut out = dist.clone();
    for (k, &n) in net {
        let entry = match out.get_mut(k) {
            Some(w) => w,
            None if n > 0 => out.entry(k.clone()).or_insert(NEW_TYPE_FLOOR),
            None => continue,
        };
        *entry *= (eta * n as f64 / total as f64).exp();
    }
    let sum: f64 = out.values().sum();
    out.values_mut().for_each(|w| *w /= sum);
    out
}

/// Net (chosen − rejected) counts per canonical type key.
pub fn dpo_net_counts(pairs: &[PreferencePair]) -> BTreeMap<String, i64> {
    let mut net = BTreeMap::new();
    for p in pairs {
        *net.entry(canonical(&p.chosen_type)).or_default() += 1;
        *net.entry(canonical(&p.rejected_type)).or_default() -= 1;
    }
    net
}

fn canonical(key: &str) -> String {
    SupplementType::from_key(key).map(|t| t.key()).unwrap_or_else(|_| key.to_string())
}

/// Stand-in trainer for mock runs: reads the dataset and applies
/// [`reference_update`] to the base scenario's distribution.
#[derive(Clone, Debug)]
pub struct ReferenceTypeTrainer {
    pub eta: f64,
    /// Resolves relative checkpoint paths.
    pub root: PathBuf,
}

impl ReferenceTypeTrainer {
    fn load(&self, base: &CheckpointRef) -> Result<Scenario, TrainerError> {
        match base {
            CheckpointRef::Mock { scenario } => {
                Scenario::load(&self.root.join(scenario)).map_err(|e| TrainerError::Failed(e.to_string()))
            }
            other => Err(TrainerError::Unavailable(format!("reference trainer needs a mock checkpoint, got {other}"))),
        }
    }

    fn save(
        &self,
        mut scenario: Scenario,
        net: BTreeMap<String, i64>,
        total: usize,
        out_dir: &Path,
    ) -> Result<CheckpointRef, TrainerError> {
        scenario.generator.distribution = reference_update(&scenario.generator.distribution, &net, total, self.eta);
        let path = out_dir.join("scenario.toml");
        std::fs::create_dir_all(self.root.join(out_dir)).map_err(|e| TrainerError::Failed(e.to_string()))?;
        scenario.save(&self.root.join(&path)).map_err(|e| TrainerError::Failed(e.to_string()))?;
        Ok(CheckpointRef::Mock { scenario: path })
    }
}

impl Trainer for ReferenceTypeTrainer {
    fn train_sft(&self, data: &Path, base: &CheckpointRef, out_dir: &Path) -> Result<CheckpointRef, TrainerError> {
        let scenario = self.load(base)?;
        let records = read_sft_dataset(data).map_err(|e| TrainerError::Failed(format!("{}: {e}", data.display())))?;
        let mut net = BTreeMap::new();
        for r in &records {
            *net.entry(canonical(&r.stype_key)).or_default() += 1;
        }
        self.save(scenario, net, records.len(), out_dir)
    }

    fn train_dpo(
        &self,
        data: &Path,
        base: &CheckpointRef,
        _reference: &CheckpointRef,
        out_dir: &Path,
    ) -> Result<CheckpointRef, TrainerError> {
        let scenario = self.load(base)?;
        let pairs = read_dpo_dataset(data).map_err(|e| TrainerError::Failed(format!("{}: {e}", data.display())))?;
        self.save(scenario, dpo_net_counts(&pairs), pairs.len(), out_dir)
    }
}

/// External trainer:
///
/// ```text
/// <program> [args..] sft --data D --base B --out O --seed S
/// <program> [args..] dpo --data D --base B --ref R --out O --beta β --alpha α --seed S
/// ```
///
/// Exit 0 means success; the last non-empty stdout line is the checkpoint id
/// under which the trainer serves the result (the output directory when
/// nothing is printed).
#[derive(Clone, Debug)]
pub struct CommandTrainer {
    pub program: String,
    pub args: Vec<String>,
    pub serve_base_url: String,
    pub beta: f64,
    pub alpha: f64,
    pub seed: u64,
    pub root: PathBuf,
}

fn model_arg(c: &CheckpointRef, root: &Path) -> String {
    match c {
        CheckpointRef::Endpoint { model, .. } => model.clone(),
        CheckpointRef::Mock { scenario } => root.join(scenario).display().to_string(),
    }
}

impl CommandTrainer {
    fn run(&self, mode: &str, mut extra: Vec<String>, out_dir: &Path) -> Result<CheckpointRef, TrainerError> {
        let out = self.root.join(out_dir);
        std::fs::create_dir_all(&out).map_err(|e| TrainerError::Failed(e.to_string()))?;
        extra.extend(["--out".into(), out.display().to_string(), "--seed".into(), self.seed.to_string()]);
        log::info!("running {} {mode} {}", self.program, extra.join(" "));
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(mode)
            .args(&extra)
            .stdin(Stdio::null())
            .stderr(Stdio::inherit())
            .output()
            .map_err(|e| TrainerError::Unavailable(format!("{}: {e}", self.program)))?;
        if !output.status.success() {
            return Err(TrainerError::Failed(format!("{} {mode} exited with {}", self.program, output.status)));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let model = stdout
            .lines()
            .map(str::trim)
            .rfind(|l| !l.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| out.display().to_string());
        Ok(CheckpointRef::Endpoint { base_url: self.serve_base_url.clone(), model })
    }
}

impl Trainer for CommandTrainer {
    fn train_sft(&self, data: &Path, base: &CheckpointRef, out_dir: &Path) -> Result<CheckpointRef, TrainerError> {
        let args = vec!["--data".into(), data.display().to_string(), "--base".into(), model_arg(base, &self.root)];
        self.run("sft", args, out_dir)
    }

    fn train_dpo(
        &self,
        data: &Path,
        base: &CheckpointRef,
        reference: &CheckpointRef,
        out_dir: &Path,
    ) -> Result<CheckpointRef, TrainerError> {
        let args = vec![
            "--data".into(),
            data.display().to_string(),
            "--base".into(),
            model_arg(base, &self.root),
            "--ref".into(),
            model_arg(reference, &self.root),
            "--beta".into(),
            self.beta.to_string(),
            "--alpha".into(),
            self.alpha.to_string(),
        ];
        self.run("dpo", args, out_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpo::PairCategory;

    fn dist(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, p)| (k.to_string(), *p)).collect()
    }

    fn pair(chosen: &str, rejected: &str) -> PreferencePair {
        PreferencePair {
            task_id: "b#0".into(),
            prompt: "p".into(),
            chosen: "c".into(),
            rejected: "r".into(),
            category: if chosen == rejected { PairCategory::WithinType } else { PairCategory::CrossType },
            chosen_type: chosen.into(),
            rejected_type: rejected.into(),
        }
    }

    #[test]
    fn chosen_type_gains_mass() {
        let d = dist(&[("summary", 0.3), ("hint", 0.3), ("plan", 0.4)]);
        let pairs: Vec<_> = (0..10).map(|_| pair("summary", "hint")).collect();
        let out = reference_update(&d, &dpo_net_counts(&pairs), pairs.len(), 0.5);
        assert!(out["summary"] > 0.3);
        assert!(out["hint"] < 0.3);
        assert!((out.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_identity() {
        let d = dist(&[("summary", 0.25), ("hint", 0.75)]);
        assert_eq!(reference_update(&d, &BTreeMap::new(), 0, 1.0), d);
    }

    #[test]
    fn within_type_pairs_cancel_and_new_types_enter() {
        let d = dist(&[("summary", 0.5), ("hint", 0.5)]);
        let out = reference_update(&d, &dpo_net_counts(&[pair("summary", "summary")]), 1, 1.0);
        assert_eq!(out, d);
        let out = reference_update(&d, &dpo_net_counts(&[pair("plan", "ghost")]), 1, 1.0);
        assert!(out["plan"] > 0.0 && out["plan"] < 0.05);
        assert!(!out.contains_key("ghost"));
    }

    #[test]
    fn aliases_are_canonicalized() {
        let net = dpo_net_counts(&[pair("step_by_step_reasoning", "Hint")]);
        assert_eq!(net, [("cot".to_string(), 1), ("hint".to_string(), -1)].into());
    }

    #[test]
    fn missing_trainer_program_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let t = CommandTrainer {
            program: "/nonexistent/sgt-train".into(),
            args: vec![],
            serve_base_url: "http://h/v1".into(),
            beta: 0.1,
            alpha: 1.0,
            seed: 0,
            root: dir.path().into(),
        };
        let base = CheckpointRef::Endpoint { base_url: "http://h/v1".into(), model: "m".into() };
        let err = t.train_sft(Path::new("d.jsonl"), &base, Path::new("checkpoints/sft")).unwrap_err();
        assert!(matches!(err, TrainerError::Unavailable(_)));
    }

    #[cfg(unix)]
    #[test]
    fn command_trainer_reports_printed_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("train.sh");
        std::fs::write(&script, "#!/bin/sh\necho \"$@\" > \"$(dirname \"$0\")/args.txt\"\necho loading\necho ckpt-7\n")
            .unwrap();
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
        let t = CommandTrainer {
            program: script.display().to_string(),
            args: vec![],
            serve_base_url: "http://h/v1".into(),
            beta: 0.1,
            alpha: 1.0,
            seed: 3,
            root: dir.path().into(),
        };
        let base = CheckpointRef::Endpoint { base_url: "http://h/v1".into(), model: "ckpt-6".into() };
        let got = t.train_dpo(Path::new("d.jsonl"), &base, &base, Path::new("checkpoints/dpo_1")).unwrap();
        assert_eq!(got, CheckpointRef::Endpoint { base_url: "http://h/v1".into(), model: "ckpt-7".into() });
        let args = std::fs::read_to_string(dir.path().join("args.txt")).unwrap();
        assert!(
            args.starts_with("dpo --data d.jsonl --base ckpt-6 --ref ckpt-6 --beta 0.1 --alpha 1 --out "),
            "{args}"
        );
        assert!(args.trim_end().ends_with("--seed 3"));
    }
}
