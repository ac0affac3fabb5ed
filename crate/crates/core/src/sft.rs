//! Warm-start SFT data: prompt-guided sampling of every promptable type,
//! gold-based supplements, positive filtering and type-stratified selection.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::fan_out;
use crate::bench::{Split, TaskInstance};
use crate::journal;
use crate::reward::{normalize_answer, ScoredSample, Source};
use crate::sampling::{merge, Origin, Sampler, SamplingSummary, TaskSamples};
use crate::seed;
use crate::stratify::stratified_sample;
use crate::supplement::{output_prefix, Predefined, Supplement, SupplementType};

pub const STAGE: &str = "sft";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub task_id: String,
    pub prompt: String,
    pub completion: String,
    pub stype_key: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftStats {
    pub records: usize,
    pub positives: usize,
    pub target: usize,
    pub per_type: BTreeMap<String, usize>,
}

fn ensure_train(tasks: &[TaskInstance]) {
    assert!(tasks.iter().all(|t| t.split == Some(Split::Train)), "SFT sampling only takes train-split tasks");
}

/// k prefix-forced samples of each of the nine promptable types per task.
pub fn sample_sft_candidates(
    tasks: &[TaskInstance],
    sampler: &Sampler<'_>,
    k: u32,
) -> (Vec<ScoredSample>, SamplingSummary) {
    ensure_train(tasks);
    let per_task = fan_out(tasks, sampler.parallelism, |task| {
        let mut out = TaskSamples::default();
        'types: for stype in SupplementType::sft_types() {
            let prompt = sampler.templates.render_prompt(task, &stype).expect("promptable type");
            let prefix = output_prefix(&stype);
            for i in 0..k {
                let seed = sampler.sample_seed(task, STAGE, &stype.key(), i);
                let supplement = match sampler.generate(&prompt, Some(&prefix), seed) {
                    Ok(Ok(s)) => s,
                    Ok(Err(f)) => {
                        out.parse_failed(task, &f);
                        continue;
                    }
                    Err(e) => {
                        out.aborted(task, &e);
                        break 'types;
                    }
                };
                let origin = Origin {
                    stage: STAGE,
                    prompt: Some(prompt.clone()),
                    seed,
                    sample_index: i,
                    source: Source::Predefined.for_type(&stype),
                    temperature: sampler.temperature,
                };
                match sampler.score(task, Some(supplement), origin) {
                    Ok(s) => out.samples.push(s),
                    Err(e) => {
                        out.aborted(task, &e);
                        break 'types;
                    }
                }
            }
        }
        out
    });
    merge(tasks, per_task)
}

impl Source {
    /// Sampling source tag for a prompted type: free style is its own source.
    pub fn for_type(self, stype: &SupplementType) -> Source {
        match stype {
            SupplementType::FreeStyle => Source::Free,
            _ => self,
        }
    }
}

/// Deterministic wrong answer derived from `gold`.
pub fn corrupt_gold(gold: &str) -> String {
    let trimmed = gold.trim();
    if let Ok(n) = trimmed.parse::<i64>() {
        return (n.wrapping_add(1)).to_string();
    }
    if let Ok(x) = trimmed.parse::<f64>() {
        return (x + 1.0).to_string();
    }
    format!("not {trimmed}")
}

/// Answer, Pairs and One-Shot supplements built from gold answers.
///
/// `wrong_outputs` are actor outputs for this task known to be wrong; the
/// first one that differs from gold becomes the incorrect half of Pairs.
pub fn build_gold_supplements(
    task: &TaskInstance,
    train_tasks: &[TaskInstance],
    wrong_outputs: &[&str],
    run_seed: u64,
) -> Vec<Supplement> {
    let mut out = Vec::with_capacity(3);
    match Supplement::single(SupplementType::Predefined(Predefined::Answer), task.gold.clone()) {
        Ok(s) => out.push(s),
        Err(e) => log::warn!("{}: no gold answer supplement: {e}", task.id),
    }

    let gold_norm = normalize_answer(&task.gold);
    let incorrect = wrong_outputs
        .iter()
        .find(|o| !o.trim().is_empty() && normalize_answer(o) != gold_norm)
        .map(|o| o.to_string())
        .unwrap_or_else(|| corrupt_gold(&task.gold));
    match Supplement::pairs(task.gold.clone(), incorrect) {
        Ok(s) => out.push(s),
        Err(e) => log::warn!("{}: no gold pairs supplement: {e}", task.id),
    }

    let others: Vec<&TaskInstance> = train_tasks.iter().filter(|t| t.id != task.id).collect();
    if others.is_empty() {
        log::warn!("{}: train split has no other task; skipping gold one-shot example", task.id);
    } else {
        let pick = others[(seed::derive(run_seed, &["one_shot", &task.id]) % others.len() as u64) as usize];
        let example = format!("Question: {}\nAnswer: {}", pick.query, pick.gold);
        if let Ok(s) = Supplement::single(SupplementType::Predefined(Predefined::OneShot), example) {
            out.push(s);
        }
    }
    out
}

/// Gold supplements for every task, scored by the actor like sampled ones.
pub fn score_gold_supplements(
    tasks: &[TaskInstance],
    sampled: &[ScoredSample],
    sampler: &Sampler<'_>,
) -> (Vec<ScoredSample>, SamplingSummary) {
    ensure_train(tasks);
    let mut wrong: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in sampled.iter().filter(|s| !s.reward.is_pass() && s.flagged.is_none()) {
        wrong.entry(s.task_id.as_str()).or_default().push(s.actor_output.as_str());
    }
    let per_task = fan_out(tasks, sampler.parallelism, |task| {
        let mut out = TaskSamples::default();
        let wrong_outputs = wrong.get(task.id.as_str()).cloned().unwrap_or_default();
        for supplement in build_gold_supplements(task, tasks, &wrong_outputs, sampler.run_seed) {
            let key = supplement.type_key();
            let origin = Origin {
                stage: STAGE,
                prompt: Some(sampler.templates.render_prompt(task, supplement.stype()).expect("promptable type")),
                seed: sampler.sample_seed(task, STAGE, &format!("gold:{key}"), 0),
                sample_index: 0,
                source: Source::Gold,
                temperature: 0.0,
            };
            match sampler.score(task, Some(supplement), origin) {
                Ok(s) => out.samples.push(s),
                Err(e) => {
                    out.aborted(task, &e);
                    break;
                }
            }
        }
        out
    });
    merge(tasks, per_task)
}

/// Positive, unflagged samples turned into a stratified SFT dataset.
///
/// `target` defaults to min(positives, 2 × number of train tasks). Exact
/// duplicates (same task, prompt and completion) count once.
pub fn build_sft_dataset(
    samples: &[ScoredSample],
    train_task_count: usize,
    target: Option<usize>,
    run_seed: u64,
) -> (Vec<SftRecord>, SftStats) {
    let mut by_type: BTreeMap<String, Vec<SftRecord>> = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    for s in samples {
        assert_eq!(s.split, Split::Train, "{} is not a train-split sample", s.task_id);
        if !s.reward.is_pass() || s.flagged.is_some() {
            continue;
        }
        let (Some(sup), Some(prompt)) = (&s.supplement, &s.prompt) else { continue };
        let record = SftRecord {
            task_id: s.task_id.clone(),
            prompt: prompt.clone(),
            completion: sup.raw().to_string(),
            stype_key: sup.type_key(),
        };
        if seen.insert((record.task_id.clone(), record.prompt.clone(), record.completion.clone())) {
            by_type.entry(record.stype_key.clone()).or_default().push(record);
        }
    }
    let positives: usize = by_type.values().map(Vec::len).sum();
    let target = target.unwrap_or(2 * train_task_count).min(positives);
    let mut records = stratified_sample(&by_type, target, run_seed, STAGE);
    sort_records(&mut records);
    let mut per_type = BTreeMap::new();
    for r in &records {
        *per_type.entry(r.stype_key.clone()).or_insert(0) += 1;
    }
    let stats = SftStats { records: records.len(), positives, target, per_type };
    (records, stats)
}

pub fn sort_records(records: &mut [SftRecord]) {
    records.sort_by_cached_key(|r| {
        (r.task_id.clone(), r.stype_key.clone(), seed::content_hash(format!("{}\0{}", r.prompt, r.completion)))
    });
}

pub fn stats_path(dataset: &Path) -> std::path::PathBuf {
    let mut name = dataset.file_name().unwrap_or_default().to_os_string();
    name.push(".stats.json");
    dataset.with_file_name(name)
}

/// Write the dataset and its `.stats.json` sidecar.
pub fn emit_sft_dataset(path: &Path, records: &[SftRecord], stats: &SftStats) -> std::io::Result<()> {
    journal::write_jsonl(path, records)?;
    let mut sidecar = serde_json::to_string_pretty(stats).expect("stats serialize");
    sidecar.push('\n');
    journal::write_atomic(&stats_path(path), sidecar.as_bytes())
}

pub fn read_sft_dataset(path: &Path) -> std::io::Result<Vec<SftRecord>> {
    journal::read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::SampleMeta;
    use crate::supplement::parse_supplement;
    use proptest::prelude::*;

    fn train(id: usize, gold: &str) -> TaskInstance {
        TaskInstance::new(&format!("b#{id}"), "b", &format!("question {id}"), gold).with_split(Split::Train)
    }

    fn sample(task: &str, key_json: &str, reward: bool, idx: u32) -> ScoredSample {
        let sup = parse_supplement(key_json).unwrap();
        ScoredSample {
            task_id: task.into(),
            benchmark: "b".into(),
            split: Split::Train,
            stage: STAGE.into(),
            prompt: Some(format!("prompt for {}", sup.type_key())),
            supplement: Some(sup),
            actor_output: "out".into(),
            reward: reward.into(),
            flagged: None,
            meta: SampleMeta { temperature: 1.0, seed: idx as u64, sample_index: idx, source: Source::Predefined },
        }
    }

    #[test]
    fn gold_supplements() {
        let tasks: Vec<_> = (0..4).map(|i| train(i, "42")).collect();
        let golds = build_gold_supplements(&tasks[1], &tasks, &["42", "17"], 5);
        assert_eq!(golds.iter().map(|s| s.type_key()).collect::<Vec<_>>(), ["answer", "pairs", "one_shot"]);
        assert_eq!(golds[0].raw(), r#"{"answer": "42"}"#);
        assert_eq!(golds[1].get("incorrect_answer"), Some("17"));
        assert!(!golds[2].get("one_shot_example").unwrap().contains("question 1\n"));

        let alone = build_gold_supplements(&tasks[0], &tasks[..1], &[], 5);
        assert_eq!(alone.len(), 2);
        assert_eq!(alone[1].get("incorrect_answer"), Some("43"));
    }

    #[test]
    fn one_shot_never_uses_own_task() {
        let tasks: Vec<_> = (0..30).map(|i| train(i, &format!("g{i}"))).collect();
        for seed in 0..5 {
            for t in &tasks {
                let g = build_gold_supplements(t, &tasks, &[], seed);
                let ex = g[2].get("one_shot_example").unwrap();
                assert!(!ex.ends_with(&format!("Answer: {}", t.gold)));
            }
        }
    }

    proptest! {
        #[test]
        fn pairs_incorrect_differs_from_gold(gold in "[a-zA-Z0-9 .]{1,12}", wrong in proptest::collection::vec("[a-z0-9 ]{0,6}", 0..3)) {
            prop_assume!(!gold.trim().is_empty());
            let t = train(0, &gold);
            let wrong_refs: Vec<&str> = wrong.iter().map(String::as_str).collect();
            let golds = build_gold_supplements(&t, std::slice::from_ref(&t), &wrong_refs, 0);
            let pairs = golds.iter().find(|s| s.type_key() == "pairs").unwrap();
            prop_assert_ne!(normalize_answer(pairs.get("incorrect_answer").unwrap()), normalize_answer(&gold));
        }
    }

    #[test]
    fn dataset_keeps_only_positives_and_balances_types() {
        let mut samples = Vec::new();
        for t in 0..3 {
            for i in 0..5 {
                samples.push(sample(&format!("b#{t}"), &format!(r#"{{"summary": "s{t}{i}"}}"#), true, i));
                samples.push(sample(&format!("b#{t}"), &format!(r#"{{"mistakes": "m{t}{i}"}}"#), i < 1, i));
                samples.push(sample(&format!("b#{t}"), &format!(r#"{{"rephrasing": "r{t}{i}"}}"#), false, i));
            }
        }
        let (records, stats) = build_sft_dataset(&samples, 3, None, 9);
        assert_eq!(stats.positives, 18);
        assert_eq!(stats.target, 6);
        assert_eq!(stats.per_type, [("mistakes".to_string(), 3), ("summary".to_string(), 3)].into());
        assert_eq!(stats.per_type.values().sum::<usize>(), records.len());
        for r in &records {
            let s = samples.iter().find(|s| s.supplement.as_ref().unwrap().raw() == r.completion).unwrap();
            assert!(s.reward.is_pass());
            assert_eq!(parse_supplement(&r.completion).unwrap().type_key(), r.stype_key);
        }
        let (again, _) = build_sft_dataset(&samples, 3, None, 9);
        assert_eq!(records, again);
    }

    #[test]
    fn flagged_samples_are_excluded() {
        let mut s = sample("b#0", r#"{"summary": "x"}"#, true, 0);
        s.flagged = Some("executor timed out".into());
        let (records, stats) = build_sft_dataset(&[s], 1, None, 0);
        assert!(records.is_empty());
        assert_eq!(stats.positives, 0);
    }

    #[test]
    fn emits_dataset_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![sample("b#0", r#"{"summary": "x"}"#, true, 0)];
        let (records, stats) = build_sft_dataset(&samples, 1, None, 0);
        let path = dir.path().join("sft.jsonl");
        emit_sft_dataset(&path, &records, &stats).unwrap();
        assert_eq!(read_sft_dataset(&path).unwrap(), records);
        let text = std::fs::read_to_string(dir.path().join("sft.jsonl.stats.json")).unwrap();
        assert_eq!(serde_json::from_str::<SftStats>(&text).unwrap(), stats);
    }
}
