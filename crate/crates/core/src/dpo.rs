//! Iterative DPO data: candidate sampling (three forced sources in the first
//! iteration, free sampling afterwards), preference pairs, per-category caps
//! and dataset emission.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{fan_out, type_distribution, BackendError};
use crate::bench::{Split, TaskInstance};
use crate::journal;
use crate::reward::{partition, ScoredSample, Source};
use crate::sampling::{merge, Origin, Sampler, SamplingSummary, TaskSamples};
use crate::seed;
use crate::stratify::stratified_sample;
use crate::supplement::{make_concat, output_prefix, reserved_keys, Predefined, Supplement, SupplementType};

pub fn stage_name(t: u32) -> String {
    format!("dpo_iter_{t}")
}

/// Sampling constants for one iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationPlan {
    pub t: u32,
    pub repeats: u32,
    pub ood_types: usize,
    pub concat_pairs: usize,
    pub n_free: u32,
    pub cap: usize,
}

impl IterationPlan {
    pub fn new(t: u32) -> Self {
        assert!(t >= 1, "iterations are numbered from 1");
        Self { t, repeats: 5, ood_types: 3, concat_pairs: 3, n_free: 20, cap: 20 }
    }

    /// Upper bound on candidates per task.
    pub fn max_candidates(&self) -> usize {
        if self.t == 1 {
            self.repeats as usize * (Predefined::ALL.len() + self.ood_types + self.concat_pairs)
        } else {
            self.n_free as usize
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCategory {
    CrossType,
    WithinType,
}

impl PairCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            PairCategory::CrossType => "cross_type",
            PairCategory::WithinType => "within_type",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub task_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub category: PairCategory,
    pub chosen_type: String,
    pub rejected_type: String,
}

/// The `k` most probable keys outside the predefined and free-style set,
/// probability descending, ties by key.
pub fn select_ood_types(dist: &BTreeMap<String, f64>, k: usize) -> Vec<String> {
    let reserved: HashSet<&str> = reserved_keys().into_iter().collect();
    let mut candidates: Vec<(&String, f64)> = dist
        .iter()
        .filter(|(key, _)| !reserved.contains(key.as_str()) && !key.contains('+'))
        .filter(|(key, _)| matches!(SupplementType::from_key(key), Ok(SupplementType::Named(_))))
        .map(|(key, &p)| (key, p))
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if candidates.len() < k {
        log::info!("only {} out-of-distribution types available (wanted {k})", candidates.len());
    }
    candidates.into_iter().take(k).map(|(key, _)| key.clone()).collect()
}

/// (positives, samples) per non-concat type key, from journaled samples.
/// Gold-built supplements are left out: they say nothing about the generator.
pub fn positive_rates(samples: &[ScoredSample]) -> BTreeMap<String, (usize, usize)> {
    let mut rates: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.meta.source != Source::Gold && s.flagged.is_none()) {
        let Some(sup) = &s.supplement else { continue };
        if sup.stype().is_concat() {
            continue;
        }
        let entry = rates.entry(sup.type_key()).or_default();
        entry.1 += 1;
        if s.reward.is_pass() {
            entry.0 += 1;
        }
    }
    rates
}

/// Up to `k` unordered pairs of successful types, taken from the ranking by
/// positive rate (descending, ties by key) in the order (1,2), (1,3), (2,3),
/// (1,4), ...
pub fn select_concat_pairs(rates: &BTreeMap<String, (usize, usize)>, k: usize) -> Vec<(String, String)> {
    let mut ranked: Vec<(&String, f64)> = rates
        .iter()
        .filter(|(key, &(pos, n))| n > 0 && pos > 0 && !key.contains('+'))
        .map(|(key, &(pos, n))| (key, pos as f64 / n as f64))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut pairs = Vec::with_capacity(k);
    'outer: for j in 1..ranked.len() {
        for i in 0..j {
            if pairs.len() == k {
                break 'outer;
            }
            pairs.push((ranked[i].0.clone(), ranked[j].0.clone()));
        }
    }
    if pairs.len() < k {
        log::info!("only {} successful type pairs for concatenation (wanted {k})", pairs.len());
    }
    pairs
}

/// Type probabilities for one task: indicator-position logprobs when the
/// endpoint has them, else frequencies over `n_free` free-style samples.
pub fn task_type_distribution(
    task: &TaskInstance,
    sampler: &Sampler<'_>,
    stage: &str,
    n_free: u32,
) -> Result<BTreeMap<String, f64>, BackendError> {
    let prompt = sampler.templates.free_style_prompt(task);
    let probe_seed = sampler.sample_seed(task, stage, "probe", 0);
    match type_distribution(sampler.generator, &prompt, probe_seed) {
        Err(BackendError::Unsupported(_)) => {
            let mut counts: BTreeMap<String, f64> = BTreeMap::new();
            for parsed in sampler.generate_many(&prompt, n_free, probe_seed)?.into_iter().flatten() {
                *counts.entry(parsed.type_key()).or_default() += 1.0;
            }
            let total: f64 = counts.values().sum();
            counts.values_mut().for_each(|c| *c /= total.max(1.0));
            Ok(counts)
        }
        other => other,
    }
}

/// First-iteration candidates for one task.
fn sample_first_iteration(
    task: &TaskInstance,
    sampler: &Sampler<'_>,
    plan: &IterationPlan,
    concat_pairs: &[(SupplementType, SupplementType)],
    stage: &str,
) -> (TaskSamples, BTreeMap<String, f64>) {
    let mut out = TaskSamples::default();
    let dist = match task_type_distribution(task, sampler, stage, plan.n_free) {
        Ok(d) => d,
        Err(e) => {
            out.aborted(task, &e);
            return (out, BTreeMap::new());
        }
    };
    let ood: Vec<SupplementType> =
        select_ood_types(&dist, plan.ood_types).iter().filter_map(|k| SupplementType::from_key(k).ok()).collect();
    let free_prompt = sampler.templates.free_style_prompt(task);

    let result: Result<(), BackendError> = (|| {
        for r in 0..plan.repeats {
            let forced: Vec<(SupplementType, String, Source)> = Predefined::ALL
                .into_iter()
                .map(|p| {
                    let t = SupplementType::Predefined(p);
                    let prompt = sampler.templates.render_prompt(task, &t).expect("promptable type");
                    (t, prompt, Source::Predefined)
                })
                .chain(ood.iter().map(|t| (t.clone(), free_prompt.clone(), Source::Ood)))
                .collect();
            for (stype, prompt, source) in forced {
                let seed = sampler.sample_seed(task, stage, &stype.key(), r);
                match sampler.generate(&prompt, Some(&output_prefix(&stype)), seed)? {
                    Ok(sup) => {
                        let origin = Origin {
                            stage,
                            prompt: Some(prompt),
                            seed,
                            sample_index: r,
                            source,
                            temperature: sampler.temperature,
                        };
                        out.samples.push(sampler.score(task, Some(sup), origin)?);
                    }
                    Err(f) => out.parse_failed(task, &f),
                }
            }
            for (a, b) in concat_pairs {
                let key = SupplementType::concat(a.clone(), b.clone()).expect("distinct members").key();
                let seed = sampler.sample_seed(task, stage, &key, r);
                let member = |t: &SupplementType| -> Result<_, BackendError> {
                    let prompt = sampler.templates.render_prompt(task, t).expect("promptable member");
                    sampler.generate(&prompt, Some(&output_prefix(t)), seed::derive(seed, &[&t.key()]))
                };
                let (sa, sb) = match (member(a)?, member(b)?) {
                    (Ok(sa), Ok(sb)) => (sa, sb),
                    (Err(f), _) | (_, Err(f)) => {
                        out.parse_failed(task, &f);
                        continue;
                    }
                };
                let merged = make_concat(&sa, &sb).expect("distinct non-concat members");
                let origin = Origin {
                    stage,
                    prompt: Some(free_prompt.clone()),
                    seed,
                    sample_index: r,
                    source: Source::Concat,
                    temperature: sampler.temperature,
                };
                out.samples.push(sampler.score(task, Some(merged), origin)?);
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        out.aborted(task, &e);
    }
    (out, dist)
}

/// Later-iteration candidates: `n_free` unforced free-style samples.
fn sample_free(task: &TaskInstance, sampler: &Sampler<'_>, plan: &IterationPlan, stage: &str) -> TaskSamples {
    let mut out = TaskSamples::default();
    let prompt = sampler.templates.free_style_prompt(task);
    let seed = sampler.sample_seed(task, stage, "free", 0);
    let parsed = match sampler.generate_many(&prompt, plan.n_free, seed) {
        Ok(p) => p,
        Err(e) => {
            out.aborted(task, &e);
            return out;
        }
    };
    for (i, p) in parsed.into_iter().enumerate() {
        match p {
            Ok(sup) => {
                let origin = Origin {
                    stage,
                    prompt: Some(prompt.clone()),
                    seed,
                    sample_index: i as u32,
                    source: Source::Free,
                    temperature: sampler.temperature,
                };
                match sampler.score(task, Some(sup), origin) {
                    Ok(s) => out.samples.push(s),
                    Err(e) => {
                        out.aborted(task, &e);
                        break;
                    }
                }
            }
            Err(f) => out.parse_failed(task, &f),
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct IterationSamples {
    pub samples: Vec<ScoredSample>,
    pub summary: SamplingSummary,
    /// Mean probed type distribution over tasks (first iteration only).
    pub probe_distribution: BTreeMap<String, f64>,
}

/// Sample and score every candidate for iteration `plan.t` on val tasks.
/// `concat_pairs` (type keys) only matter for the first iteration.
pub fn sample_iteration(
    plan: &IterationPlan,
    tasks: &[TaskInstance],
    sampler: &Sampler<'_>,
    concat_pairs: &[(String, String)],
) -> IterationSamples {
    assert!(tasks.iter().all(|t| t.split == Some(Split::Val)), "DPO sampling only takes val-split tasks");
    let stage = stage_name(plan.t);
    let pairs: Vec<(SupplementType, SupplementType)> = concat_pairs
        .iter()
        .filter_map(|(a, b)| Some((SupplementType::from_key(a).ok()?, SupplementType::from_key(b).ok()?)))
        .collect();
    let per_task: Vec<(TaskSamples, BTreeMap<String, f64>)> = fan_out(tasks, sampler.parallelism, |task| {
        if plan.t == 1 {
            sample_first_iteration(task, sampler, plan, &pairs, &stage)
        } else {
            (sample_free(task, sampler, plan, &stage), BTreeMap::new())
        }
    });
    let mut probe: BTreeMap<String, f64> = BTreeMap::new();
    let probed = per_task.iter().filter(|(_, d)| !d.is_empty()).count();
    for (_, d) in &per_task {
        for (k, p) in d {
            *probe.entry(k.clone()).or_default() += p / probed as f64;
        }
    }
    let (samples, summary) = merge(tasks, per_task.into_iter().map(|(s, _)| s).collect());
    IterationSamples { samples, summary, probe_distribution: probe }
}

/// Parsed supplements of a sample set with their type keys.
fn typed<'a>(samples: &[&'a ScoredSample]) -> Vec<(&'a ScoredSample, &'a Supplement, String)> {
    samples.iter().filter_map(|s| s.supplement.as_ref().map(|sup| (*s, sup, sup.type_key()))).collect()
}

/// Deduplicated (category, positive, negative) index triples in
/// positive-major order. Keeping the first sample of each text on both
/// sides leaves every distinct (chosen, rejected) text pair exactly once.
fn candidates(
    pos: &[(&ScoredSample, &Supplement, String)],
    neg: &[(&ScoredSample, &Supplement, String)],
) -> Vec<(PairCategory, usize, usize)> {
    let first = |set: &[(&ScoredSample, &Supplement, String)], need_prompt: bool| -> Vec<usize> {
        let mut seen = HashSet::new();
        (0..set.len()).filter(|&i| (!need_prompt || set[i].0.prompt.is_some()) && seen.insert(set[i].1.raw())).collect()
    };
    let (pi, ni) = (first(pos, true), first(neg, false));
    let mut out = Vec::with_capacity(pi.len() * ni.len());
    for &i in &pi {
        let chosen = pos[i].1;
        for &j in &ni {
            let rejected = neg[j].1;
            if chosen.raw() == rejected.raw() {
                continue;
            }
            let category =
                if chosen.stype() == rejected.stype() { PairCategory::WithinType } else { PairCategory::CrossType };
            out.push((category, i, j));
        }
    }
    out
}

fn materialize(
    task_id: &str,
    category: PairCategory,
    pos: &(&ScoredSample, &Supplement, String),
    neg: &(&ScoredSample, &Supplement, String),
) -> PreferencePair {
    PreferencePair {
        task_id: task_id.to_string(),
        prompt: pos.0.prompt.clone().expect("candidates have prompts"),
        chosen: pos.1.raw().to_string(),
        rejected: neg.1.raw().to_string(),
        category,
        chosen_type: pos.2.clone(),
        rejected_type: neg.2.clone(),
    }
}

/// Every (positive, negative) combination for one task, labelled by
/// whether the two supplements share a type. Textually identical
/// supplements and repeated (chosen, rejected) texts are dropped.
pub fn build_pairs(task_id: &str, positives: &[&ScoredSample], negatives: &[&ScoredSample]) -> Vec<PreferencePair> {
    let (pos, neg) = (typed(positives), typed(negatives));
    candidates(&pos, &neg)
        .into_iter()
        .map(|(category, i, j)| materialize(task_id, category, &pos[i], &neg[j]))
        .collect()
}

/// Keep at most `cap` pairs per category, stratified by chosen type.
pub fn cap_and_stratify(pairs: Vec<PreferencePair>, cap: usize, seed: u64) -> Vec<PreferencePair> {
    let mut by_category: BTreeMap<PairCategory, Vec<PreferencePair>> = BTreeMap::new();
    for p in pairs {
        by_category.entry(p.category).or_default().push(p);
    }
    let mut out = Vec::new();
    for (category, group) in by_category {
        if group.len() <= cap {
            out.extend(group);
            continue;
        }
        let task_id = group[0].task_id.clone();
        let mut by_type: BTreeMap<String, Vec<PreferencePair>> = BTreeMap::new();
        for p in group {
            by_type.entry(p.chosen_type.clone()).or_default().push(p);
        }
        out.extend(stratified_sample(&by_type, cap, seed, &format!("{task_id}/{}", category.as_str())));
    }
    out
}

/// Same pairs as `cap_and_stratify(build_pairs(..))`, without copying out
/// the combinations that the cap drops.
pub fn capped_pairs(
    task_id: &str,
    positives: &[&ScoredSample],
    negatives: &[&ScoredSample],
    cap: usize,
    seed: u64,
) -> Vec<PreferencePair> {
    let (pos, neg) = (typed(positives), typed(negatives));
    let mut by_category: BTreeMap<PairCategory, Vec<(usize, usize)>> = BTreeMap::new();
    for (category, i, j) in candidates(&pos, &neg) {
        by_category.entry(category).or_default().push((i, j));
    }
    let mut out = Vec::new();
    for (category, group) in by_category {
        let kept = if group.len() <= cap {
            group
        } else {
            let mut by_type: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
            for (i, j) in group {
                by_type.entry(pos[i].2.clone()).or_default().push((i, j));
            }
            stratified_sample(&by_type, cap, seed, &format!("{task_id}/{}", category.as_str()))
        };
        out.extend(kept.into_iter().map(|(i, j)| materialize(task_id, category, &pos[i], &neg[j])));
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DpoStats {
    pub iteration: u32,
    pub pairs: usize,
    pub tasks_with_pairs: usize,
    pub per_category: BTreeMap<String, usize>,
    pub per_chosen_type: BTreeMap<String, usize>,
    /// Fraction of each type among this iteration's parsed candidates.
    pub candidate_types: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub probe_distribution: BTreeMap<String, f64>,
}

/// Pairs for every val task in the journal, capped per task and category.
pub fn build_dataset(
    t: u32,
    tasks: &[TaskInstance],
    samples: &[ScoredSample],
    cap: usize,
    run_seed: u64,
    probe_distribution: BTreeMap<String, f64>,
) -> (Vec<PreferencePair>, DpoStats) {
    let mut by_task: BTreeMap<&str, Vec<&ScoredSample>> = BTreeMap::new();
    let mut type_counts: BTreeMap<String, f64> = BTreeMap::new();
    for s in samples {
        assert_eq!(s.split, Split::Val, "{} is not a val-split sample", s.task_id);
        if let Some(sup) = &s.supplement {
            *type_counts.entry(sup.type_key()).or_default() += 1.0;
        }
        if s.flagged.is_none() {
            by_task.entry(s.task_id.as_str()).or_default().push(s);
        }
    }
    let total: f64 = type_counts.values().sum();
    type_counts.values_mut().for_each(|c| *c /= total.max(1.0));

    let mut pairs = Vec::new();
    let mut tasks_with_pairs = 0;
    for task in tasks {
        let Some(task_samples) = by_task.get(task.id.as_str()) else { continue };
        let (pos, neg) = partition(task, task_samples.iter().copied());
        let built = capped_pairs(&task.id, &pos, &neg, cap, seed::derive(run_seed, &[&stage_name(t)]));
        if !built.is_empty() {
            tasks_with_pairs += 1;
        }
        pairs.extend(built);
    }
    sort_pairs(&mut pairs);
    let mut stats = DpoStats {
        iteration: t,
        pairs: pairs.len(),
        tasks_with_pairs,
        candidate_types: type_counts,
        probe_distribution,
        ..Default::default()
    };
    for p in &pairs {
        *stats.per_category.entry(p.category.as_str().to_string()).or_default() += 1;
        *stats.per_chosen_type.entry(p.chosen_type.clone()).or_default() += 1;
    }
    (pairs, stats)
}

pub fn sort_pairs(pairs: &mut [PreferencePair]) {
    pairs.sort_by_cached_key(|p| {
        (
            p.task_id.clone(),
            p.category,
            p.chosen_type.clone(),
            seed::content_hash(format!("{}\0{}\0{}", p.prompt, p.chosen, p.rejected)),
        )
    });
}

pub fn emit_dpo_dataset(path: &Path, pairs: &[PreferencePair], stats: &DpoStats) -> std::io::Result<()> {
    journal::write_jsonl(path, pairs)?;
    let mut sidecar = serde_json::to_string_pretty(stats).expect("stats serialize");
    sidecar.push('\n');
    journal::write_atomic(&crate::sft::stats_path(path), sidecar.as_bytes())
}

pub fn read_dpo_dataset(path: &Path) -> std::io::Result<Vec<PreferencePair>> {
    journal::read_jsonl(path)
}

/// Chosen types that appear in a dataset.
pub fn chosen_types(pairs: &[PreferencePair]) -> BTreeSet<String> {
    pairs.iter().map(|p| p.chosen_type.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::SampleMeta;
    use crate::supplement::parse_supplement;

    fn dist(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, p)| (k.to_string(), *p)).collect()
    }

    #[test]
    fn ood_selection() {
        let d = dist(&[("summary", 0.3), ("hint", 0.25), ("plan", 0.2), ("background", 0.15), ("outline", 0.1)]);
        assert_eq!(select_ood_types(&d, 3), ["hint", "plan", "outline"]);
        assert!(select_ood_types(&dist(&[("summary", 0.5), ("cot", 0.3), ("free_style", 0.2)]), 3).is_empty());
        assert_eq!(select_ood_types(&dist(&[("plan", 0.2), ("hint", 0.2), ("x", 0.6)]), 3), ["x", "hint", "plan"]);
        assert_eq!(select_ood_types(&dist(&[("a", 0.5), ("b+c", 0.5)]), 3), ["a"]);
    }

    fn rates(pairs: &[(&str, f64)]) -> BTreeMap<String, (usize, usize)> {
        pairs.iter().map(|(k, r)| (k.to_string(), ((r * 10.0).round() as usize, 10))).collect()
    }

    #[test]
    fn concat_pair_selection() {
        let r = rates(&[("cot", 0.8), ("summary", 0.6), ("pairs", 0.5), ("answer", 0.1)]);
        let want = [("cot", "summary"), ("cot", "pairs"), ("summary", "pairs")];
        assert_eq!(select_concat_pairs(&r, 3), want.map(|(a, b)| (a.to_string(), b.to_string())));
        assert!(select_concat_pairs(&rates(&[("cot", 0.5), ("summary", 0.0)]), 3).is_empty());
        let eq = rates(&[("d", 0.5), ("c", 0.5), ("b", 0.5), ("a", 0.5)]);
        let want = [("a", "b"), ("a", "c"), ("b", "c")];
        assert_eq!(select_concat_pairs(&eq, 3), want.map(|(a, b)| (a.to_string(), b.to_string())));
    }

    #[test]
    fn concat_order_oracle_over_rankings() {
        // enumerate all pairs, sort by (rank of second, rank of first)
        for n in 2..7usize {
            let keys: Vec<String> = (0..n).map(|i| format!("k{i}")).collect();
            let r: BTreeMap<String, (usize, usize)> =
                keys.iter().enumerate().map(|(i, k)| (k.clone(), (10 - i, 10))).collect();
            let mut all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
            all.sort_by_key(|&(i, j)| (j, i));
            for k in 0..5 {
                let want: Vec<(String, String)> =
                    all.iter().take(k).map(|&(i, j)| (keys[i].clone(), keys[j].clone())).collect();
                assert_eq!(select_concat_pairs(&r, k), want);
            }
        }
    }

    fn scored(raw: &str, reward: bool, idx: u32) -> ScoredSample {
        ScoredSample {
            task_id: "b#0".into(),
            benchmark: "b".into(),
            split: Split::Val,
            stage: "dpo_iter_1".into(),
            prompt: Some("p".into()),
            supplement: Some(parse_supplement(raw).unwrap()),
            actor_output: String::new(),
            reward: reward.into(),
            flagged: None,
            meta: SampleMeta { temperature: 1.0, seed: 0, sample_index: idx, source: Source::Free },
        }
    }

    #[test]
    fn pair_categories() {
        let a = scored(r#"{"summary": "a"}"#, true, 0);
        let b = scored(r#"{"hint": "b"}"#, true, 1);
        let c = scored(r#"{"summary": "c"}"#, false, 2);
        let pairs = build_pairs("b#0", &[&a, &b], &[&c]);
        assert_eq!(pairs.len(), 2);
        assert_eq!(
            (pairs[0].chosen.as_str(), pairs[0].category),
            (a.supplement.as_ref().unwrap().raw(), PairCategory::WithinType)
        );
        assert_eq!(pairs[1].category, PairCategory::CrossType);
        assert!(build_pairs("b#0", &[&a], &[]).is_empty());
    }

    #[test]
    fn counting_oracle_all_distinct_types() {
        let pos: Vec<_> = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, k)| scored(&format!(r#"{{"{k}": "x"}}"#), true, i as u32))
            .collect();
        let neg: Vec<_> = ["d", "e", "f", "g"]
            .iter()
            .enumerate()
            .map(|(i, k)| scored(&format!(r#"{{"{k}": "y"}}"#), false, i as u32))
            .collect();
        let pairs = build_pairs("b#0", &pos.iter().collect::<Vec<_>>(), &neg.iter().collect::<Vec<_>>());
        assert_eq!(pairs.len(), 12);
        assert!(pairs.iter().all(|p| p.category == PairCategory::CrossType));
    }

    #[test]
    fn concat_types_equal_only_with_same_members() {
        let a = scored(r#"{"summary": "a", "mistakes": "b"}"#, true, 0);
        let b = scored(r#"{"mistakes": "c", "summary": "d"}"#, false, 1);
        let c = scored(r#"{"summary": "e", "hint": "f"}"#, false, 2);
        let pairs = build_pairs("b#0", &[&a], &[&b, &c]);
        assert_eq!(pairs[0].category, PairCategory::WithinType);
        assert_eq!(pairs[1].category, PairCategory::CrossType);
    }

    fn pair(chosen_type: &str, i: usize, category: PairCategory) -> PreferencePair {
        PreferencePair {
            task_id: "b#0".into(),
            prompt: "p".into(),
            chosen: format!("c{i}"),
            rejected: format!("r{i}"),
            category,
            chosen_type: chosen_type.into(),
            rejected_type: if category == PairCategory::WithinType { chosen_type.into() } else { "z".into() },
        }
    }

    #[test]
    fn caps() {
        let mut pairs: Vec<_> = (0..30).map(|i| pair("A", i, PairCategory::CrossType)).collect();
        pairs.extend((30..50).map(|i| pair("B", i, PairCategory::CrossType)));
        let kept = cap_and_stratify(pairs, 20, 3);
        assert_eq!(kept.iter().filter(|p| p.chosen_type == "A").count(), 10);
        assert_eq!(kept.iter().filter(|p| p.chosen_type == "B").count(), 10);

        let within: Vec<_> = (0..12).map(|i| pair("A", i, PairCategory::WithinType)).collect();
        assert_eq!(cap_and_stratify(within, 20, 3).len(), 12);

        let mut skewed: Vec<_> = (0..19).map(|i| pair("A", i, PairCategory::CrossType)).collect();
        skewed.push(pair("B", 19, PairCategory::CrossType));
        assert_eq!(cap_and_stratify(skewed, 20, 3).len(), 20);
    }

    #[test]
    fn capped_pairs_match_build_then_cap() {
        let kinds = ["summary", "hint", "cot", "plan"];
        let samples: Vec<ScoredSample> = (0..60u32)
            .map(|i| scored(&format!(r#"{{"{}": "t{}"}}"#, kinds[(i * 7 % 4) as usize], i % 9), i % 3 != 0, i))
            .collect();
        let t = TaskInstance::new("b#0", "b", "q", "g");
        let (pos, neg) = partition(&t, &samples);
        for cap in [1, 5, 20, 1000] {
            let mut a = cap_and_stratify(build_pairs("b#0", &pos, &neg), cap, 9);
            let mut b = capped_pairs("b#0", &pos, &neg, cap, 9);
            sort_pairs(&mut a);
            sort_pairs(&mut b);
            assert_eq!(a, b, "cap {cap}");
        }
    }

    #[test]
    fn plan_bounds() {
        assert_eq!(IterationPlan::new(1).max_candidates(), 70);
        assert_eq!(IterationPlan::new(2).max_candidates(), 20);
    }
}
