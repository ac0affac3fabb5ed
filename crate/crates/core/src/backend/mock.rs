//! Deterministic stand-ins for the generator and the actor.
//!
//! The mock generator emits supplement objects whose type is drawn from a
//! configured distribution and reports indicator-position log-probabilities
//! that match it. The mock actor answers correctly iff the supplement section
//! of its input fires a configured trigger.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Completion, GenRequest, TokenLogprob};
use crate::bench::TaskInstance;
use crate::reward::normalize_answer;
use crate::seed;
use crate::supplement::{
    normalize_key, render_object, ActorFormat, Predefined, SupplementType, DEFAULT_DELIMITER, OPEN_PREFIX,
};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("scenario: {0}")]
    Invalid(String),
}

/// When the mock actor answers correctly.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    /// Supplement section contains any alphanumeric token of the gold answer.
    #[default]
    GoldToken,
    Contains {
        text: String,
    },
    AnyOf {
        texts: Vec<String>,
    },
    /// Supplement parses to one of these type keys (aliases accepted).
    Types {
        keys: Vec<String>,
    },
    /// Always correct, even without a supplement.
    Always,
    Never,
}

impl Trigger {
    pub fn fires(&self, section: Option<&str>, gold: &str) -> bool {
        match (self, section) {
            (Trigger::Always, _) => true,
            (Trigger::Never, _) | (_, None) => false,
            (Trigger::GoldToken, Some(s)) => {
                gold.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).any(|t| s.contains(t))
            }
            (Trigger::Contains { text }, Some(s)) => s.contains(text.as_str()),
            (Trigger::AnyOf { texts }, Some(s)) => texts.iter().any(|t| s.contains(t.as_str())),
            (Trigger::Types { keys }, Some(s)) => match crate::supplement::parse_supplement(s) {
                Ok(sup) => {
                    let key = sup.type_key();
                    keys.iter().any(|k| SupplementType::from_key(k).map(|t| t.key() == key).unwrap_or(false))
                }
                Err(_) => false,
            },
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorScenario {
    /// Type key (or indicator key, or `a+b`) → weight.
    pub distribution: BTreeMap<String, f64>,
    #[serde(default = "default_true")]
    pub logprobs: bool,
}

fn default_delimiter() -> String {
    DEFAULT_DELIMITER.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorScenario {
    #[serde(default)]
    pub trigger: Trigger,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    /// Fraction of tasks answered correctly even when the trigger does not
    /// fire. Which tasks is fixed by a hash of the query.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub base_accuracy: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl Default for ActorScenario {
    fn default() -> Self {
        Self { trigger: Trigger::default(), delimiter: default_delimiter(), base_accuracy: 0.0 }
    }
}

/// Whether the mock actor solves `query` without help at `base_accuracy`.
pub fn solved_unaided(query: &str, base_accuracy: f64) -> bool {
    (seed::derive(0, &["unaided", query]) as f64 / u64::MAX as f64) < base_accuracy
}

/// Mock configuration file.
///
/// ```toml
/// seed = 7
/// [generator.distribution]
/// summary = 0.4
/// hint = 0.3
/// background = 0.3
/// [actor]
/// trigger = { kind = "contains", text = "\"summary\"" }
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub generator: GeneratorScenario,
    #[serde(default)]
    pub actor: ActorScenario,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        s.canonicalize()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::File { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Write atomically (temp file then rename).
    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        crate::journal::write_atomic(path, self.to_toml_string().as_bytes())
            .map_err(|e| ScenarioError::File { path: path.display().to_string(), message: e.to_string() })
    }

    /// Rewrite distribution keys as type keys and normalize weights to 1.
    pub fn canonicalize(&mut self) -> Result<(), ScenarioError> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for (k, &w) in &self.generator.distribution {
            if w.is_nan() || w < 0.0 || !w.is_finite() {
                return Err(ScenarioError::Invalid(format!("weight for {k:?} must be finite and >= 0")));
            }
            let t = SupplementType::from_key(k).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            *out.entry(t.key()).or_default() += w;
        }
        let total: f64 = out.values().sum();
        if total <= 0.0 {
            return Err(ScenarioError::Invalid("generator distribution has no mass".into()));
        }
        out.values_mut().for_each(|w| *w /= total);
        self.generator.distribution = out;
        Ok(())
    }

    /// Uniform distribution over the given type keys.
    pub fn uniform(keys: &[&str]) -> Self {
        let mut s = Scenario {
            seed: 0,
            generator: GeneratorScenario {
                distribution: keys.iter().map(|k| (k.to_string(), 1.0)).collect(),
                logprobs: true,
            },
            actor: ActorScenario::default(),
        };
        s.canonicalize().expect("uniform scenario is valid");
        s
    }

    pub fn fingerprint(&self) -> String {
        seed::content_hash(self.to_toml_string())[..12].to_string()
    }
}

struct TypeEntry {
    stype: SupplementType,
    prob: f64,
    /// First indicator key, split into mock tokens.
    pieces: Vec<String>,
}

/// `step_by_step_reasoning` → `step_`, `by_`, `step_`, `reasoning"`.
fn key_pieces(key: &str) -> Vec<String> {
    let mut pieces: Vec<String> = key.split_inclusive('_').map(str::to_string).collect();
    match pieces.last_mut() {
        Some(last) => last.push('"'),
        None => pieces.push("\"".into()),
    }
    pieces
}

fn json_inner(s: &str) -> String {
    let quoted = serde_json::to_string(s).expect("string serializes");
    quoted[1..quoted.len() - 1].to_string()
}

fn forced_key_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"^\{\s*"((?:[^"\\]|\\.)*)"\s*:\s*"$"#).expect("forced key pattern"))
}

/// Mock supplement generator.
pub struct MockGenerator {
    id: String,
    seed: u64,
    types: Vec<TypeEntry>,
    logprobs: bool,
}

impl MockGenerator {
    pub fn new(scenario: &Scenario) -> Self {
        let mut s = scenario.clone();
        s.canonicalize().expect("scenario distribution is valid");
        let types = s
            .generator
            .distribution
            .iter()
            .map(|(k, &p)| {
                let stype = SupplementType::from_key(k).expect("canonical key");
                let pieces = key_pieces(&stype.indicator_keys()[0]);
                TypeEntry { stype, prob: p, pieces }
            })
            .collect();
        Self { id: format!("mock-gen-{}", s.fingerprint()), seed: s.seed, types, logprobs: s.generator.logprobs }
    }

    /// The configured distribution, keyed by type key.
    pub fn distribution(&self) -> BTreeMap<String, f64> {
        self.types.iter().map(|t| (t.stype.key(), t.prob)).collect()
    }

    fn request_rng(&self, req: &GenRequest, index: u32) -> ChaCha8Rng {
        let messages = serde_json::to_string(&req.messages).expect("messages serialize");
        let idx = if req.temperature == 0.0 { "greedy".to_string() } else { index.to_string() };
        seed::rng(
            self.seed,
            &["mock-gen", &req.seed.to_string(), &idx, &messages, req.output_prefix.as_deref().unwrap_or("")],
        )
    }

    /// Choose among types whose first indicator key starts with `partial`.
    fn choose(&self, rng: &mut ChaCha8Rng, temperature: f64, partial: &str) -> Option<&TypeEntry> {
        let candidates: Vec<&TypeEntry> =
            self.types.iter().filter(|t| t.prob > 0.0 && t.pieces.concat().starts_with(partial)).collect();
        if candidates.is_empty() {
            return None;
        }
        if temperature == 0.0 {
            // greedy token by token: most probable first token, then the most
            // probable type behind it
            let mut groups: BTreeMap<&str, f64> = BTreeMap::new();
            for t in &candidates {
                *groups.entry(t.pieces[0].as_str()).or_default() += t.prob;
            }
            let best_group = groups
                .iter()
                .fold(None::<(&str, f64)>, |best, (&g, &p)| match best {
                    Some((_, bp)) if bp >= p => best,
                    _ => Some((g, p)),
                })
                .map(|(g, _)| g)?;
            return candidates.into_iter().filter(|t| t.pieces[0] == best_group).fold(None::<&TypeEntry>, |best, t| {
                match best {
                    Some(b) if b.prob > t.prob || (b.prob == t.prob && b.stype.key() <= t.stype.key()) => Some(b),
                    _ => Some(t),
                }
            });
        }
        let weights: Vec<f64> = candidates.iter().map(|t| t.prob.powf(1.0 / temperature)).collect();
        let total: f64 = weights.iter().sum();
        let mut x = rng.random_range(0.0..total);
        for (t, w) in candidates.iter().zip(&weights) {
            if x < *w {
                return Some(t);
            }
            x -= w;
        }
        candidates.last().copied()
    }

    fn content(&self, rng: &mut ChaCha8Rng, query: &str, temperature: f64) -> String {
        let words: Vec<String> =
            query.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect();
        let count = rng.random_range(3..=6);
        let mut out: Vec<String> = (0..count)
            .map(
                |_| if words.is_empty() { "note".to_string() } else { words[rng.random_range(0..words.len())].clone() },
            )
            .collect();
        if temperature > 0.0 {
            out.push(format!("v{:04x}", rng.random_range(0..0x10000u32)));
        }
        out.join(" ")
    }

    /// Alternatives at the indicator position: first tokens with the summed
    /// probability of every type behind them.
    fn first_token_alternatives(&self) -> Vec<(String, f64)> {
        let mut groups: BTreeMap<String, f64> = BTreeMap::new();
        for t in self.types.iter().filter(|t| t.prob > 0.0) {
            *groups.entry(t.pieces[0].clone()).or_default() += t.prob;
        }
        let mut alts: Vec<(String, f64)> = groups.into_iter().map(|(tok, p)| (tok, p.ln())).collect();
        alts.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        alts
    }

    fn sample_one(&self, req: &GenRequest, index: u32) -> Completion {
        let mut rng = self.request_rng(req, index);
        let query = req.user_text();
        let prefix = req.output_prefix.as_deref();
        let mut entries: Vec<TokenLogprob> = Vec::new();
        let plain = |token: &str| TokenLogprob { token: token.to_string(), logprob: 0.0, top: vec![] };

        let text = match prefix.and_then(|p| forced_key_re().captures(p)) {
            Some(caps) => {
                // forced key: continue with its value and close the object
                let p = prefix.expect("matched prefix");
                let forced: String =
                    serde_json::from_str(&format!("\"{}\"", &caps[1])).unwrap_or_else(|_| caps[1].to_string());
                let mut rest = format!("{}\"", json_inner(&self.content(&mut rng, query, req.temperature)));
                if let Ok(SupplementType::Predefined(Predefined::Pairs)) = SupplementType::from_key(&forced) {
                    let other =
                        if normalize_key(&forced) == "correct_answer" { "incorrect_answer" } else { "correct_answer" };
                    let value = self.content(&mut rng, query, req.temperature);
                    rest.push_str(&format!(
                        ", {}: {}",
                        serde_json::to_string(other).unwrap(),
                        serde_json::to_string(&value).unwrap()
                    ));
                }
                rest.push('}');
                entries.push(plain(p));
                entries.push(plain(&rest));
                format!("{p}{rest}")
            }
            None => {
                let (opening, partial) = match prefix {
                    None => (OPEN_PREFIX.to_string(), ""),
                    Some(p) if p.starts_with(OPEN_PREFIX) && !p[OPEN_PREFIX.len()..].contains('"') => {
                        (p.to_string(), &p[OPEN_PREFIX.len()..])
                    }
                    Some(p) => {
                        // opening we do not understand: append a plain object
                        let rendered = render_object(&[(
                            crate::supplement::FREE_STYLE_INDICATOR.to_string(),
                            self.content(&mut rng, query, req.temperature),
                        )]);
                        entries.push(plain(p));
                        entries.push(plain(&rendered));
                        return self.finish(format!("{p}{rendered}"), entries, req);
                    }
                };
                entries.push(plain(&opening));
                let (key_rest, keys) = match self.choose(&mut rng, req.temperature, partial) {
                    Some(t) => {
                        let full_key: String = t.pieces.concat();
                        if partial.is_empty() {
                            let alts = self.first_token_alternatives();
                            let group_lp = alts.iter().find(|(tok, _)| *tok == t.pieces[0]).map(|a| a.1).unwrap_or(0.0);
                            entries.push(TokenLogprob { token: t.pieces[0].clone(), logprob: group_lp, top: alts });
                            for piece in &t.pieces[1..] {
                                entries.push(plain(piece));
                            }
                        } else {
                            entries.push(plain(&full_key[partial.len()..]));
                        }
                        (full_key[partial.len()..].to_string(), t.stype.indicator_keys())
                    }
                    None => {
                        // nothing configured starts this way: close it as a named key
                        entries.push(plain("\""));
                        ("\"".to_string(), vec![partial.to_string()])
                    }
                };
                let mut rest = format!(": \"{}\"", json_inner(&self.content(&mut rng, query, req.temperature)));
                for k in &keys[1..] {
                    let value = self.content(&mut rng, query, req.temperature);
                    rest.push_str(&format!(
                        ", {}: {}",
                        serde_json::to_string(k).unwrap(),
                        serde_json::to_string(&value).unwrap()
                    ));
                }
                rest.push('}');
                entries.push(plain(&rest));
                format!("{opening}{key_rest}{rest}")
            }
        };
        self.finish(text, entries, req)
    }

    fn finish(&self, text: String, entries: Vec<TokenLogprob>, req: &GenRequest) -> Completion {
        let token_logprobs =
            (req.want_logprobs && self.logprobs).then(|| entries.into_iter().filter(|e| !e.token.is_empty()).collect());
        Completion { text, token_logprobs, finish_reason: "stop".into() }
    }
}

impl Backend for MockGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenRequest) -> Result<Vec<Completion>, BackendError> {
        req.validate()?;
        if req.want_logprobs && !self.logprobs {
            return Err(BackendError::Unsupported("mock generator configured without logprobs".into()));
        }
        Ok((0..req.n).map(|i| self.sample_one(req, i)).collect())
    }

    fn supports_logprobs(&self) -> bool {
        self.logprobs
    }
}

fn wrong_answer(input: &str, gold: &str) -> String {
    let mut answer = format!("unsure {}", &seed::content_hash(input)[..10]);
    if normalize_answer(&answer) == normalize_answer(gold) {
        answer.push_str(" (retry)");
    }
    answer
}

/// Judge one actor input under `trigger`.
pub fn judge(trigger: &Trigger, format: &ActorFormat, input: &str, gold: &str) -> Completion {
    let section = format.supplement_section(input);
    let text = if trigger.fires(section, gold) { gold.to_string() } else { wrong_answer(input, gold) };
    Completion { text, token_logprobs: None, finish_reason: "stop".into() }
}

/// Default-rule judgement: correct iff the supplement section contains any
/// token of `gold`.
pub fn mock_actor_judge(input: &str, gold: &str) -> Completion {
    judge(&Trigger::GoldToken, &ActorFormat::default(), input, gold)
}

/// Mock actor endpoint. Recovers the gold answer by matching the query at the
/// start of its input against registered tasks.
pub struct MockActor {
    id: String,
    trigger: Trigger,
    format: ActorFormat,
    base_accuracy: f64,
    golds: HashMap<String, String>,
}

impl MockActor {
    pub fn new(scenario: &ActorScenario, tasks: &[TaskInstance]) -> Self {
        let fingerprint = seed::content_hash(serde_json::to_string(scenario).expect("actor scenario serializes"));
        Self {
            id: format!("mock-actor-{}", &fingerprint[..12]),
            trigger: scenario.trigger.clone(),
            format: ActorFormat::new(scenario.delimiter.clone()),
            base_accuracy: scenario.base_accuracy,
            golds: tasks.iter().map(|t| (t.query.clone(), t.gold.clone())).collect(),
        }
    }

    pub fn register(&mut self, query: &str, gold: &str) {
        self.golds.insert(query.to_string(), gold.to_string());
    }

    /// Registered (query, gold) whose query starts the input.
    fn task_for<'a>(&'a self, input: &'a str) -> Option<(&'a str, &'a str)> {
        if let Some(g) = self.golds.get(input) {
            return Some((input, g));
        }
        input
            .match_indices("\n\n")
            .map(|(i, _)| i)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .find_map(|i| self.golds.get(&input[..i]).map(|g| (&input[..i], g.as_str())))
    }
}

impl Backend for MockActor {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenRequest) -> Result<Vec<Completion>, BackendError> {
        req.validate()?;
        let input = req.user_text();
        let completion = match self.task_for(input) {
            Some((query, gold)) if solved_unaided(query, self.base_accuracy) => {
                Completion { text: gold.to_string(), token_logprobs: None, finish_reason: "stop".into() }
            }
            Some((_, gold)) => judge(&self.trigger, &self.format, input, gold),
            None => {
                log::debug!("mock actor: no registered task for input");
                Completion { text: wrong_answer(input, ""), token_logprobs: None, finish_reason: "stop".into() }
            }
        };
        Ok(vec![completion; req.n as usize])
    }

    fn supports_logprobs(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{type_distribution, Client};
    use crate::supplement::{format_actor_input, output_prefix, parse_supplement, Supplement};
    use std::sync::Arc;

    fn scenario(dist: &[(&str, f64)]) -> Scenario {
        let mut s = Scenario {
            seed: 7,
            generator: GeneratorScenario {
                distribution: dist.iter().map(|(k, p)| (k.to_string(), *p)).collect(),
                logprobs: true,
            },
            actor: ActorScenario::default(),
        };
        s.canonicalize().unwrap();
        s
    }

    fn prompt() -> String {
        "How many singers are older than 30?\n\nBased on the task above, please provide supplementary text that can assist in completing the task.".into()
    }

    #[test]
    fn temperature_zero_gives_identical_samples() {
        let g = MockGenerator::new(&scenario(&[("summary", 0.5), ("hint", 0.5)]));
        let out = g.generate(&GenRequest::user("g", prompt()).n(3)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|c| c.text == out[0].text));
    }

    #[test]
    fn forced_prefix_is_respected_for_every_type() {
        let g = MockGenerator::new(&scenario(&[("hint", 1.0)]));
        let mut types = SupplementType::sft_types();
        types.push(SupplementType::named("plan").unwrap());
        for t in types {
            let p = output_prefix(&t);
            let out = g.generate(&GenRequest::user("g", prompt()).n(4).temperature(1.0).prefix(&p)).unwrap();
            for c in out {
                assert!(c.text.starts_with(&p));
                assert_eq!(parse_supplement(&c.text).unwrap().stype(), &t, "{}", c.text);
            }
        }
    }

    #[test]
    fn replay_is_identical_and_samples_vary() {
        let g = MockGenerator::new(&scenario(&[("summary", 0.5), ("hint", 0.5)]));
        let req = GenRequest::user("g", prompt()).n(5).temperature(1.0).seed(3);
        let a = g.generate(&req).unwrap();
        assert_eq!(a, g.generate(&req).unwrap());
        let texts: std::collections::HashSet<_> = a.iter().map(|c| c.text.clone()).collect();
        assert!(texts.len() > 1);
    }

    #[test]
    fn logprob_entries_concatenate_to_text() {
        let g = MockGenerator::new(&scenario(&[("cot", 0.6), ("hint", 0.4)]));
        for prefix in [None, Some("{\""), Some("{\"step_"), Some("{\"summary\": \"")] {
            let mut req = GenRequest::user("g", prompt()).logprobs(true).temperature(1.0).n(3);
            req.output_prefix = prefix.map(String::from);
            for c in g.generate(&req).unwrap() {
                let joined: String = c.token_logprobs.unwrap().iter().map(|e| e.token.as_str()).collect();
                assert_eq!(joined, c.text);
            }
        }
    }

    #[test]
    fn type_distribution_echoes_configuration() {
        let s = scenario(&[("summary", 0.4), ("hint", 0.3), ("background", 0.3)]);
        let c = Client::new(Arc::new(MockGenerator::new(&s)));
        let d = type_distribution(&c, &prompt(), 1).unwrap();
        assert_eq!(d.len(), 3);
        assert!((d["summary"] - 0.4).abs() < 1e-9);
        assert!((d["hint"] - 0.3).abs() < 1e-9);
        assert!((d["background"] - 0.3).abs() < 1e-9);
        assert!((d.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn multi_token_keys_are_completed_greedily() {
        let s = scenario(&[("cot", 0.5), ("one_shot", 0.2), ("free_style", 0.1), ("study_plan", 0.2)]);
        let c = Client::new(Arc::new(MockGenerator::new(&s)));
        let d = type_distribution(&c, &prompt(), 1).unwrap();
        for (k, p) in [("cot", 0.5), ("one_shot", 0.2), ("free_style", 0.1), ("study_plan", 0.2)] {
            assert!((d[k] - p).abs() < 1e-9, "{k}: {d:?}");
        }
        // two probe calls plus one completion per multi-token first token
        assert_eq!(c.call_count(), 5);
    }

    #[test]
    fn top_type_matches_greedy_generation() {
        for (i, dist) in [
            vec![("summary", 0.4), ("hint", 0.35), ("mistakes", 0.25)],
            vec![("cot", 0.7), ("rephrase", 0.3)],
            vec![("plan", 0.1), ("outline", 0.5), ("answer", 0.4)],
        ]
        .into_iter()
        .enumerate()
        {
            let g = Arc::new(MockGenerator::new(&scenario(&dist)));
            let c = Client::new(g.clone());
            let d = type_distribution(&c, &prompt(), i as u64).unwrap();
            let top = d.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0.clone();
            let greedy = c.complete(&GenRequest::user("g", prompt()).prefix(OPEN_PREFIX)).unwrap();
            assert_eq!(parse_supplement(&greedy).unwrap().type_key(), top);
        }
    }

    #[test]
    fn unsupported_logprobs_is_reported() {
        let mut s = scenario(&[("summary", 1.0)]);
        s.generator.logprobs = false;
        let g = MockGenerator::new(&s);
        assert!(matches!(g.generate(&GenRequest::user("g", "q").logprobs(true)), Err(BackendError::Unsupported(_))));
    }

    #[test]
    fn sampled_frequencies_follow_distribution() {
        let g = MockGenerator::new(&scenario(&[("summary", 0.7), ("hint", 0.3)]));
        let out = g.generate(&GenRequest::user("g", prompt()).n(2000).temperature(1.0)).unwrap();
        let summaries = out.iter().filter(|c| parse_supplement(&c.text).unwrap().type_key() == "summary").count();
        assert!((1250..1550).contains(&summaries), "{summaries}");
    }

    #[test]
    fn scenario_roundtrip_and_aliases() {
        let s = Scenario::from_toml_str(
            "seed = 3\n[generator.distribution]\nbackground_knowledge = 1.0\nHint = 3.0\n[actor]\ntrigger = { kind = \"contains\", text = \"x\" }\n",
        )
        .unwrap();
        assert_eq!(s.generator.distribution.keys().collect::<Vec<_>>(), ["background", "hint"]);
        assert!((s.generator.distribution["hint"] - 0.75).abs() < 1e-12);
        assert_eq!(Scenario::from_toml_str(&s.to_toml_string()).unwrap(), s);
        assert!(Scenario::from_toml_str("[generator.distribution]\nx = 0.0\n").is_err());
    }

    #[test]
    fn judge_rules() {
        let t = TaskInstance::new("m#0", "m", "What is 6*7?", "42");
        let s = Supplement::single(SupplementType::FreeStyle, "the product is 42").unwrap();
        assert_eq!(mock_actor_judge(&format_actor_input(&t, Some(&s)), "42").text, "42");
        assert_ne!(mock_actor_judge(&format_actor_input(&t, None), "42").text, "42");
        // gold appearing in the query alone is not enough
        let t2 = TaskInstance::new("m#1", "m", "Is 42 the answer?", "42");
        assert_ne!(mock_actor_judge(&format_actor_input(&t2, None), "42").text, "42");
    }

    #[test]
    fn base_accuracy_solves_a_fixed_share_unaided() {
        let tasks: Vec<TaskInstance> = (0..400)
            .map(|i| TaskInstance::new(&format!("m#{i}"), "m", &format!("What is {i}+1?"), &(i + 1).to_string()))
            .collect();
        let actor = MockActor::new(
            &ActorScenario { trigger: Trigger::Never, base_accuracy: 0.25, ..Default::default() },
            &tasks,
        );
        let client = Client::new(Arc::new(actor));
        let solved: Vec<bool> = tasks
            .iter()
            .map(|t| {
                let req = GenRequest::user("actor", format_actor_input(t, None));
                client.generate(&req).unwrap()[0].text == t.gold
            })
            .collect();
        let n = solved.iter().filter(|s| **s).count();
        assert!((70..=130).contains(&n), "{n}");
        for (t, s) in tasks.iter().zip(&solved) {
            assert_eq!(*s, solved_unaided(&t.query, 0.25));
        }
        assert!(!tasks.iter().any(|t| solved_unaided(&t.query, 0.0)));
    }

    #[test]
    fn removing_the_trigger_flips_success() {
        let t = TaskInstance::new("m#0", "m", "q?", "42");
        for pos in 0..8 {
            let mut text: String = "abcdefgh".into();
            text.insert_str(pos, "42");
            let s = Supplement::single(SupplementType::FreeStyle, text.clone()).unwrap();
            assert_eq!(mock_actor_judge(&format_actor_input(&t, Some(&s)), "42").text, "42");
            for flip in [pos, pos + 1] {
                let mut chars: Vec<char> = text.chars().collect();
                chars[flip] = 'x';
                let broken: String = chars.into_iter().collect();
                let s = Supplement::single(SupplementType::FreeStyle, broken).unwrap();
                assert_ne!(mock_actor_judge(&format_actor_input(&t, Some(&s)), "42").text, "42");
            }
        }
    }

    #[test]
    fn actor_endpoint_matches_registered_queries() {
        let tasks =
            vec![TaskInstance::new("m#0", "m", "alpha\n\nbeta", "7"), TaskInstance::new("m#1", "m", "alpha", "8")];
        let actor = MockActor::new(&ActorScenario { trigger: Trigger::Always, ..Default::default() }, &tasks);
        let ask = |input: &str| actor.generate(&GenRequest::user("a", input)).unwrap().remove(0).text;
        assert_eq!(ask("alpha\n\nbeta"), "7");
        assert_eq!(ask("alpha\n\nbeta\n\n[Supplement]\n{}"), "7");
        assert_eq!(ask("alpha\n\nLet's think step by step."), "8");
        assert!(ask("gamma").starts_with("unsure"));
    }

    #[test]
    fn type_trigger_rewards_exactly_the_listed_types() {
        let trigger = Trigger::Types { keys: vec!["summary".into()] };
        let fires = |raw: &str| trigger.fires(Some(raw), "7");
        assert!(fires(r#"{"summary": "x"}"#));
        assert!(!fires(r#"{"hint": "summary"}"#));
        assert!(!fires(r#"{"summary": "a", "hint": "b"}"#));
        assert!(!fires("not json"));
        assert!(!trigger.fires(None, "7"));
        let toml = "kind = \"types\"\nkeys = [\"cot\"]\n";
        let parsed: Trigger = toml::from_str(toml).unwrap();
        assert!(parsed.fires(Some(r#"{"step_by_step_reasoning": "x"}"#), "7"));
    }
}
