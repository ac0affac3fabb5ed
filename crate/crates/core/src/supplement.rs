//! Supplement types, generation prompts, parsing and actor-input formatting.
//!
//! A supplement is a single structured-text object whose keys identify its
//! type, e.g. `{"summary": "tables: singer, concert"}`. The eight predefined
//! types plus the free-style type each own a fixed indicator key; any other
//! key is an out-of-distribution ("named") type, and an object carrying two
//! types at once is a concatenation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::TaskInstance;

/// Indicator key of the free-style supplement.
pub const FREE_STYLE_INDICATOR: &str = "supplementary_text";
/// Type key used for the free-style supplement in reports and datasets.
pub const FREE_STYLE_KEY: &str = "free_style";
/// Default line that separates the query from the supplement in actor input.
pub const DEFAULT_DELIMITER: &str = "[Supplement]";

const PAIRS_CORRECT: &str = "correct_answer";
const PAIRS_INCORRECT: &str = "incorrect_answer";

const FREE_STYLE_INSTRUCTION: &str =
    "Based on the task above, please provide supplementary text that can assist in completing the task.";

#[derive(Debug, thiserror::Error)]
pub enum SupplementError {
    #[error("invalid supplement usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Parse(#[from] ParseFailure),
    #[error("template file: {0}")]
    Template(String),
}

/// Generator output that could not be turned into a supplement. Carries the
/// raw text so the caller can log and drop the sample.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unparseable supplement ({reason})")]
pub struct ParseFailure {
    pub reason: String,
    pub raw: String,
}

impl ParseFailure {
    fn new(reason: impl Into<String>, raw: &str) -> Self {
        Self { reason: reason.into(), raw: raw.to_string() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predefined {
    Answer,
    Background,
    Cot,
    Rephrase,
    Summary,
    Mistakes,
    OneShot,
    Pairs,
}

impl Predefined {
    pub const ALL: [Predefined; 8] = [
        Predefined::Answer,
        Predefined::Background,
        Predefined::Cot,
        Predefined::Rephrase,
        Predefined::Summary,
        Predefined::Mistakes,
        Predefined::OneShot,
        Predefined::Pairs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Predefined::Answer => "answer",
            Predefined::Background => "background",
            Predefined::Cot => "cot",
            Predefined::Rephrase => "rephrase",
            Predefined::Summary => "summary",
            Predefined::Mistakes => "mistakes",
            Predefined::OneShot => "one_shot",
            Predefined::Pairs => "pairs",
        }
    }

    /// Keys this type writes into the supplement object, in output order.
    pub fn indicator_keys(self) -> &'static [&'static str] {
        match self {
            Predefined::Answer => &["answer"],
            Predefined::Background => &["background_knowledge"],
            Predefined::Cot => &["step_by_step_reasoning"],
            Predefined::Rephrase => &["rephrasing"],
            Predefined::Summary => &["summary"],
            Predefined::Mistakes => &["mistakes"],
            Predefined::OneShot => &["one_shot_example"],
            Predefined::Pairs => &[PAIRS_CORRECT, PAIRS_INCORRECT],
        }
    }

    pub fn default_instruction(self) -> &'static str {
        match self {
            Predefined::Answer => "",
            Predefined::Background => {
                "Based on the task above, please provide background knowledge that does not exist in the task."
            }
            Predefined::Cot => {
                "Based on the task above, please provide a step by step reasoning that can assist in completing the task."
            }
            Predefined::Rephrase => {
                "Based on the task above, please rephrase the task to make it clearer and more understandable."
            }
            Predefined::Summary => {
                "Based on the task above, please first provide a summary of context (excluding the specific question)."
            }
            Predefined::Mistakes => {
                "Based on the task above, please provide common mistakes in completing the task."
            }
            Predefined::OneShot => {
                "Based on the task above, please provide one different question+answer example"
            }
            Predefined::Pairs => {
                "Following the answer format above, please provide a correct answer and an incorrect answer to this task that illustrates common mistakes."
            }
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

/// Out-of-distribution type key, normalized to lowercase snake case and
/// guaranteed not to collide with any reserved key.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NamedKey(String);

impl NamedKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// A concatenation of two distinct non-concat types. Members are stored in
/// key order so that `a+b` and `b+a` are the same type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConcatType {
    first: Box<SupplementType>,
    second: Box<SupplementType>,
}

impl ConcatType {
    pub fn members(&self) -> (&SupplementType, &SupplementType) {
        (&self.first, &self.second)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SupplementType {
    Predefined(Predefined),
    FreeStyle,
    Named(NamedKey),
    Concat(ConcatType),
}

/// Lowercase snake case: runs of non-alphanumerics become one underscore.
pub fn normalize_key(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    let mut pending_sep = false;
    for ch in key.trim().chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(ch);
        } else {
            pending_sep = true;
        }
    }
    out
}

/// How a single object key is understood.
#[derive(Debug, Clone, PartialEq, Eq)]
enum KeyRole {
    Type(SupplementType, String),
    PairsHalf(&'static str),
}

fn classify_key(raw_key: &str) -> Option<KeyRole> {
    let key = normalize_key(raw_key);
    if key.is_empty() {
        return None;
    }
    if key == PAIRS_CORRECT {
        return Some(KeyRole::PairsHalf(PAIRS_CORRECT));
    }
    if key == PAIRS_INCORRECT {
        return Some(KeyRole::PairsHalf(PAIRS_INCORRECT));
    }
    if key == FREE_STYLE_INDICATOR || key == FREE_STYLE_KEY {
        return Some(KeyRole::Type(SupplementType::FreeStyle, FREE_STYLE_INDICATOR.to_string()));
    }
    for p in Predefined::ALL {
        if p == Predefined::Pairs {
            continue;
        }
        if p.name() == key || p.indicator_keys()[0] == key {
            return Some(KeyRole::Type(SupplementType::Predefined(p), p.indicator_keys()[0].to_string()));
        }
    }
    if key == Predefined::Pairs.name() {
        // a lone "pairs" key cannot carry both halves
        return None;
    }
    Some(KeyRole::Type(SupplementType::Named(NamedKey(key.clone())), key))
}

impl SupplementType {
    pub fn named(key: &str) -> Result<Self, SupplementError> {
        match classify_key(key) {
            Some(KeyRole::Type(t @ SupplementType::Named(_), _)) => Ok(t),
            _ => Err(SupplementError::Usage(format!("{key:?} is not a valid out-of-distribution key"))),
        }
    }

    pub fn concat(a: SupplementType, b: SupplementType) -> Result<Self, SupplementError> {
        if a.is_concat() || b.is_concat() {
            return Err(SupplementError::Usage("concat members cannot themselves be concat".into()));
        }
        if a == b {
            return Err(SupplementError::Usage(format!("cannot concat {} with itself", a.key())));
        }
        let (first, second) = if a.key() <= b.key() { (a, b) } else { (b, a) };
        Ok(SupplementType::Concat(ConcatType { first: Box::new(first), second: Box::new(second) }))
    }

    /// All nine prompt-able types used for warm-start sampling.
    pub fn sft_types() -> Vec<SupplementType> {
        let mut v: Vec<_> = Predefined::ALL.into_iter().map(SupplementType::Predefined).collect();
        v.push(SupplementType::FreeStyle);
        v
    }

    pub fn is_concat(&self) -> bool {
        matches!(self, SupplementType::Concat(_))
    }

    /// Stable type key: predefined name, `free_style`, the named key, or
    /// `a+b` for concatenations.
    pub fn key(&self) -> String {
        match self {
            SupplementType::Predefined(p) => p.name().to_string(),
            SupplementType::FreeStyle => FREE_STYLE_KEY.to_string(),
            SupplementType::Named(k) => k.0.clone(),
            SupplementType::Concat(c) => format!("{}+{}", c.first.key(), c.second.key()),
        }
    }

    /// Inverse of [`SupplementType::key`]. Also accepts indicator keys and
    /// unnormalized spellings.
    pub fn from_key(key: &str) -> Result<Self, SupplementError> {
        if let Some((a, b)) = key.split_once('+') {
            return Self::concat(Self::from_key(a)?, Self::from_key(b)?);
        }
        let norm = normalize_key(key);
        if norm == Predefined::Pairs.name() || norm == PAIRS_CORRECT || norm == PAIRS_INCORRECT {
            return Ok(SupplementType::Predefined(Predefined::Pairs));
        }
        match classify_key(key) {
            Some(KeyRole::Type(t, _)) => Ok(t),
            _ => Err(SupplementError::Usage(format!("unknown supplement type key {key:?}"))),
        }
    }

    pub fn indicator_keys(&self) -> Vec<String> {
        match self {
            SupplementType::Predefined(p) => p.indicator_keys().iter().map(|k| k.to_string()).collect(),
            SupplementType::FreeStyle => vec![FREE_STYLE_INDICATOR.to_string()],
            SupplementType::Named(k) => vec![k.0.clone()],
            SupplementType::Concat(c) => {
                let mut keys = c.first.indicator_keys();
                keys.extend(c.second.indicator_keys());
                keys
            }
        }
    }

    pub fn is_predefined(&self) -> bool {
        matches!(self, SupplementType::Predefined(_))
    }
}

impl fmt::Display for SupplementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl Serialize for SupplementType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for SupplementType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let key = String::deserialize(d)?;
        SupplementType::from_key(&key).map_err(serde::de::Error::custom)
    }
}

/// Keys that can never be an out-of-distribution type.
pub fn reserved_keys() -> Vec<&'static str> {
    let mut keys = vec![FREE_STYLE_INDICATOR, FREE_STYLE_KEY];
    for p in Predefined::ALL {
        keys.push(p.name());
        keys.extend(p.indicator_keys());
    }
    keys
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Supplement {
    stype: SupplementType,
    content: Vec<(String, String)>,
    raw: String,
}

/// Renders an ordered key/value list as one object: `{"k": "v", "k2": "v2"}`.
pub fn render_object(content: &[(String, String)]) -> String {
    let fields: Vec<String> = content
        .iter()
        .map(|(k, v)| {
            format!(
                "{}: {}",
                serde_json::to_string(k).expect("string serialization"),
                serde_json::to_string(v).expect("string serialization")
            )
        })
        .collect();
    format!("{{{}}}", fields.join(", "))
}

impl Supplement {
    /// Build a supplement from typed content; `raw` is the canonical rendering.
    pub fn new(stype: SupplementType, content: Vec<(String, String)>) -> Result<Self, SupplementError> {
        let mut expected = stype.indicator_keys();
        let mut got: Vec<String> = content.iter().map(|(k, _)| k.clone()).collect();
        expected.sort();
        got.sort();
        if expected != got {
            return Err(SupplementError::Usage(format!(
                "content keys {got:?} do not match type {} (expected {expected:?})",
                stype.key()
            )));
        }
        if content.iter().any(|(_, v)| v.trim().is_empty()) {
            return Err(SupplementError::Usage("supplement values must be non-empty".into()));
        }
        let raw = render_object(&content);
        Ok(Self { stype, content, raw })
    }

    /// Single-key convenience constructor for non-pairs types.
    pub fn single(stype: SupplementType, text: impl Into<String>) -> Result<Self, SupplementError> {
        let keys = stype.indicator_keys();
        if keys.len() != 1 {
            return Err(SupplementError::Usage(format!("{} needs {} keys", stype.key(), keys.len())));
        }
        Self::new(stype, vec![(keys[0].clone(), text.into())])
    }

    pub fn pairs(correct: impl Into<String>, incorrect: impl Into<String>) -> Result<Self, SupplementError> {
        Self::new(
            SupplementType::Predefined(Predefined::Pairs),
            vec![(PAIRS_CORRECT.to_string(), correct.into()), (PAIRS_INCORRECT.to_string(), incorrect.into())],
        )
    }

    pub fn stype(&self) -> &SupplementType {
        &self.stype
    }

    pub fn type_key(&self) -> String {
        self.stype.key()
    }

    pub fn content(&self) -> &[(String, String)] {
        &self.content
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.content.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Canonical serialized form (may differ from `raw` in whitespace or key spelling).
    pub fn serialize(&self) -> String {
        render_object(&self.content)
    }
}

impl Serialize for Supplement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Supplement", 2)?;
        st.serialize_field("type", &self.stype.key())?;
        st.serialize_field("raw", &self.raw)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Supplement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Stored {
            #[serde(rename = "type")]
            stype: String,
            raw: String,
        }
        let stored = Stored::deserialize(d)?;
        let s = parse_supplement(&stored.raw).map_err(serde::de::Error::custom)?;
        if s.type_key() != stored.stype {
            return Err(serde::de::Error::custom(format!(
                "stored type {} does not match parsed type {}",
                stored.stype,
                s.type_key()
            )));
        }
        Ok(s)
    }
}

/// Locate the first top-level JSON object in `text`; returns its byte span.
fn first_object(text: &str) -> Option<(usize, usize, serde_json::Map<String, serde_json::Value>)> {
    let mut search = 0;
    while let Some(off) = text[search..].find('{') {
        let start = search + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(map))) = stream.next() {
            let end = start + stream.byte_offset();
            return Some((start, end, map));
        }
        search = start + 1;
    }
    None
}

/// Parse generator output into a typed supplement.
///
/// The first top-level object wins; anything after it is ignored (and logged).
pub fn parse_supplement(raw: &str) -> Result<Supplement, ParseFailure> {
    let (start, end, map) = first_object(raw).ok_or_else(|| ParseFailure::new("no structured object", raw))?;
    if first_object(&raw[end..]).is_some() {
        log::debug!("supplement output carries extra objects after byte {end}; ignoring them");
    }
    if map.is_empty() {
        return Err(ParseFailure::new("empty object", raw));
    }
    if map.len() > 3 {
        return Err(ParseFailure::new(format!("{} keys", map.len()), raw));
    }

    let mut content = Vec::with_capacity(map.len());
    // member types in first-appearance order
    let mut members: Vec<SupplementType> = Vec::new();
    let mut halves: Vec<&'static str> = Vec::new();
    for (key, value) in &map {
        let text = match value {
            serde_json::Value::String(s) if !s.trim().is_empty() => s.clone(),
            serde_json::Value::String(_) => return Err(ParseFailure::new(format!("empty value for {key:?}"), raw)),
            _ => return Err(ParseFailure::new(format!("non-string value for {key:?}"), raw)),
        };
        match classify_key(key) {
            Some(KeyRole::Type(t, canonical)) => {
                if members.contains(&t) {
                    return Err(ParseFailure::new(format!("type {} appears twice", t.key()), raw));
                }
                members.push(t);
                content.push((canonical, text));
            }
            Some(KeyRole::PairsHalf(half)) => {
                if halves.contains(&half) {
                    return Err(ParseFailure::new(format!("duplicate {half}"), raw));
                }
                if halves.is_empty() {
                    members.push(SupplementType::Predefined(Predefined::Pairs));
                }
                halves.push(half);
                content.push((half.to_string(), text));
            }
            None => return Err(ParseFailure::new(format!("unusable key {key:?}"), raw)),
        }
    }
    if halves.len() == 1 {
        return Err(ParseFailure::new("pairs supplement needs both correct and incorrect answers", raw));
    }
    let stype = match members.len() {
        1 => members.pop().expect("one member"),
        2 => {
            let b = members.pop().expect("two members");
            let a = members.pop().expect("two members");
            SupplementType::concat(a, b).map_err(|e| ParseFailure::new(e.to_string(), raw))?
        }
        n => return Err(ParseFailure::new(format!("{n} supplement types in one object"), raw)),
    };
    Ok(Supplement { stype, content, raw: raw[start..end].to_string() })
}

/// Merge two supplements of different non-concat types into one object.
pub fn make_concat(a: &Supplement, b: &Supplement) -> Result<Supplement, SupplementError> {
    let stype = SupplementType::concat(a.stype.clone(), b.stype.clone())?;
    let mut content = a.content.clone();
    content.extend(b.content.iter().cloned());
    let raw = render_object(&content);
    Ok(Supplement { stype, content, raw })
}

/// The instruction and forced output opening for one supplement type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub stype: SupplementType,
    pub instruction: String,
    /// Forced opening of the output, up to and including the first indicator
    /// key and its separator, e.g. `{"summary": "`.
    pub output_prefix: String,
}

/// Instructions per type, with built-in defaults and optional file overrides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    free_style: String,
    predefined: BTreeMap<Predefined, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            free_style: FREE_STYLE_INSTRUCTION.to_string(),
            predefined: Predefined::ALL.into_iter().map(|p| (p, p.default_instruction().to_string())).collect(),
        }
    }
}

#[derive(Deserialize)]
struct TemplateEntry {
    instruction: String,
}

impl TemplateSet {
    /// Overrides keyed by type name (`summary`, `free_style`, ...):
    ///
    /// ```toml
    /// [summary]
    /// instruction = "Summarize the context."
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self, SupplementError> {
        let entries: BTreeMap<String, TemplateEntry> =
            toml::from_str(text).map_err(|e| SupplementError::Template(e.to_string()))?;
        let mut set = Self::default();
        for (name, entry) in entries {
            if name == FREE_STYLE_KEY {
                set.free_style = entry.instruction;
            } else if let Some(p) = Predefined::from_name(&name) {
                set.predefined.insert(p, entry.instruction);
            } else {
                return Err(SupplementError::Template(format!("unknown template type {name:?}")));
            }
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, SupplementError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SupplementError::Template(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn template(&self, stype: &SupplementType) -> Result<PromptTemplate, SupplementError> {
        let instruction = match stype {
            SupplementType::Predefined(p) => self.predefined[p].clone(),
            // out-of-distribution types have no dedicated instruction
            SupplementType::FreeStyle | SupplementType::Named(_) => self.free_style.clone(),
            SupplementType::Concat(_) => {
                return Err(SupplementError::Usage("concat supplements are assembled, not prompted".into()))
            }
        };
        Ok(PromptTemplate { stype: stype.clone(), instruction, output_prefix: output_prefix(stype) })
    }

    /// The generator prompt: the task query followed by the type's instruction.
    pub fn render_prompt(&self, task: &TaskInstance, stype: &SupplementType) -> Result<String, SupplementError> {
        let template = self.template(stype)?;
        Ok(join_instruction(&task.query, &template.instruction))
    }

    pub fn free_style_prompt(&self, task: &TaskInstance) -> String {
        join_instruction(&task.query, &self.free_style)
    }
}

fn join_instruction(query: &str, instruction: &str) -> String {
    if instruction.is_empty() {
        query.to_string()
    } else {
        format!("{query}\n\n{instruction}")
    }
}

/// `{"<first indicator key>": "` for non-concat types.
pub fn output_prefix(stype: &SupplementType) -> String {
    let key = &stype.indicator_keys()[0];
    format!("{{{}: \"", serde_json::to_string(key).expect("string serialization"))
}

/// Opening used to probe which type the generator wants to emit.
pub const OPEN_PREFIX: &str = "{\"";

/// Joins query and supplement for the actor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActorFormat {
    pub delimiter: String,
}

impl Default for ActorFormat {
    fn default() -> Self {
        Self { delimiter: DEFAULT_DELIMITER.to_string() }
    }
}

impl ActorFormat {
    pub fn new(delimiter: impl Into<String>) -> Self {
        Self { delimiter: delimiter.into() }
    }

    pub fn format(&self, query: &str, supplement: Option<&Supplement>) -> String {
        match supplement {
            None => query.to_string(),
            Some(s) => format!("{query}\n\n{}\n{}", self.delimiter, s.raw()),
        }
    }

    /// Separator between query and supplement, as it appears in actor input.
    pub fn separator(&self) -> String {
        format!("\n\n{}\n", self.delimiter)
    }

    /// The supplement section of an actor input, if any.
    pub fn supplement_section<'a>(&self, input: &'a str) -> Option<&'a str> {
        input.rfind(&self.separator()).map(|i| &input[i + self.separator().len()..])
    }
}

/// Actor input with the default delimiter.
pub fn format_actor_input(task: &TaskInstance, supplement: Option<&Supplement>) -> String {
    ActorFormat::default().format(&task.query, supplement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::TaskInstance;
    use proptest::prelude::*;

    fn task(q: &str) -> TaskInstance {
        TaskInstance::new("t#0", "t", q, "42")
    }

    #[test]
    fn free_style_prompt_ends_with_instruction() {
        let p = TemplateSet::default().render_prompt(&task("2+2?"), &SupplementType::FreeStyle).unwrap();
        assert!(p.starts_with("2+2?"));
        assert!(p.ends_with(
            "Based on the task above, please provide supplementary text that can assist in completing the task."
        ));
    }

    #[test]
    fn answer_prompt_is_bare_query() {
        let t = task("What is the capital of France?");
        let p = TemplateSet::default().render_prompt(&t, &SupplementType::Predefined(Predefined::Answer)).unwrap();
        assert_eq!(p, t.query);
    }

    #[test]
    fn mistakes_prompt() {
        let p = TemplateSet::default()
            .render_prompt(&task("q"), &SupplementType::Predefined(Predefined::Mistakes))
            .unwrap();
        assert!(p.ends_with("please provide common mistakes in completing the task."));
    }

    #[test]
    fn concat_cannot_be_prompted() {
        let c = SupplementType::from_key("summary+mistakes").unwrap();
        assert!(matches!(TemplateSet::default().render_prompt(&task("q"), &c), Err(SupplementError::Usage(_))));
    }

    #[test]
    fn template_overrides() {
        let set = TemplateSet::from_toml_str("[summary]\ninstruction = \"Sum it up.\"\n").unwrap();
        let p = set.render_prompt(&task("q"), &SupplementType::Predefined(Predefined::Summary)).unwrap();
        assert_eq!(p, "q\n\nSum it up.");
        assert!(TemplateSet::from_toml_str("[nonsense]\ninstruction = \"x\"\n").is_err());
    }

    #[test]
    fn parse_predefined_pairs_and_named() {
        let s = parse_supplement(r#"{"summary": "tables: singer, concert"}"#).unwrap();
        assert_eq!(s.stype(), &SupplementType::Predefined(Predefined::Summary));
        let s = parse_supplement(r#"{"correct_answer": "A", "incorrect_answer": "B"}"#).unwrap();
        assert_eq!(s.stype(), &SupplementType::Predefined(Predefined::Pairs));
        let s = parse_supplement(r#"{"hint": "check joins"}"#).unwrap();
        assert_eq!(s.stype(), &SupplementType::named("hint").unwrap());
        let s = parse_supplement(r#"{"supplementary_text": "anything"}"#).unwrap();
        assert_eq!(s.stype(), &SupplementType::FreeStyle);
    }

    #[test]
    fn parse_tolerates_surrounding_text_and_takes_first_object() {
        let raw = "Sure! {\"mistakes\": \"off by one\"} and also {\"summary\": \"x\"}";
        let s = parse_supplement(raw).unwrap();
        assert_eq!(s.type_key(), "mistakes");
        assert_eq!(s.raw(), "{\"mistakes\": \"off by one\"}");
    }

    #[test]
    fn parse_normalizes_named_keys_and_aliases() {
        let s = parse_supplement(r#"{"Key Facts": "x"}"#).unwrap();
        assert_eq!(s.type_key(), "key_facts");
        let s = parse_supplement(r#"{"background": "x"}"#).unwrap();
        assert_eq!(s.type_key(), "background");
        assert_eq!(s.content()[0].0, "background_knowledge");
        let s = parse_supplement(r#"{"Step by step reasoning": "x"}"#).unwrap();
        assert_eq!(s.type_key(), "cot");
    }

    #[test]
    fn parse_failures() {
        for raw in [
            "no object here",
            "{}",
            r#"{"summary": ""}"#,
            r#"{"summary": 3}"#,
            r#"{"a": "1", "b": "2", "c": "3"}"#,
            r#"{"correct_answer": "A"}"#,
            r#"{"summary": "a", "Summary": "b"}"#,
            r#"{"pairs": "a"}"#,
            r#"{"a": "1", "b": "2", "c": "3", "d": "4"}"#,
        ] {
            let err = parse_supplement(raw).unwrap_err();
            assert_eq!(err.raw, raw);
        }
    }

    #[test]
    fn parse_two_types_is_concat_including_pairs() {
        let s = parse_supplement(r#"{"summary": "a", "hint": "b"}"#).unwrap();
        assert_eq!(s.type_key(), "hint+summary");
        let s = parse_supplement(r#"{"correct_answer": "A", "incorrect_answer": "B", "mistakes": "m"}"#).unwrap();
        assert_eq!(s.type_key(), "mistakes+pairs");
    }

    #[test]
    fn make_concat_rules() {
        let a = Supplement::single(SupplementType::Predefined(Predefined::Summary), "s1").unwrap();
        let b = Supplement::single(SupplementType::Predefined(Predefined::Mistakes), "s2").unwrap();
        let c = make_concat(&a, &b).unwrap();
        let keys: Vec<_> = c.content().iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["summary", "mistakes"]);
        assert!(make_concat(&a, &a).is_err());
        assert!(make_concat(&c, &a).is_err());
    }

    #[test]
    fn concat_type_identity_ignores_order() {
        let x = SupplementType::from_key("summary+cot").unwrap();
        let y = SupplementType::from_key("cot+summary").unwrap();
        assert_eq!(x, y);
        assert_eq!(x.key(), "cot+summary");
    }

    #[test]
    fn predefined_indicator_keys_are_distinct() {
        let mut keys: Vec<&str> = Predefined::ALL.iter().flat_map(|p| p.indicator_keys().iter().copied()).collect();
        keys.push(FREE_STYLE_INDICATOR);
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n);
        assert_eq!(n, 10);
    }

    #[test]
    fn named_keys_never_collide_with_reserved() {
        for k in reserved_keys() {
            assert!(SupplementType::named(k).is_err(), "{k} accepted as named");
        }
        assert!(SupplementType::named("hint").is_ok());
    }

    #[test]
    fn actor_input_golden_bytes() {
        let t = task("What is 6*7?");
        assert_eq!(format_actor_input(&t, None), "What is 6*7?");
        let s = parse_supplement(r#"{"answer": "42"}"#).unwrap();
        assert_eq!(format_actor_input(&t, Some(&s)), "What is 6*7?\n\n[Supplement]\n{\"answer\": \"42\"}");
    }

    #[test]
    fn injective_key_serialization_over_types() {
        let types: Vec<SupplementType> = SupplementType::sft_types()
            .into_iter()
            .chain(["hint", "plan"].iter().map(|k| SupplementType::named(k).unwrap()))
            .collect();
        let mut seen = std::collections::HashSet::new();
        for t in &types {
            assert!(seen.insert(t.indicator_keys()), "{t} shares indicator keys");
        }
    }

    fn arb_base_type() -> impl Strategy<Value = SupplementType> {
        prop_oneof![
            (0usize..8).prop_map(|i| SupplementType::Predefined(Predefined::ALL[i])),
            Just(SupplementType::FreeStyle),
            "[a-z]{1,6}(_[a-z]{1,4})?".prop_filter_map("reserved", |k| SupplementType::named(&k).ok()),
        ]
    }

    fn build(stype: &SupplementType, text: &str) -> Supplement {
        let content = stype.indicator_keys().into_iter().enumerate().map(|(i, k)| (k, format!("{text}{i}"))).collect();
        Supplement::new(stype.clone(), content).unwrap()
    }

    proptest! {
        #[test]
        fn roundtrip(stype in arb_base_type(), text in "[^\\x00]{1,40}") {
            let s = build(&stype, &text);
            let back = parse_supplement(&s.serialize()).unwrap();
            prop_assert_eq!(back.stype(), s.stype());
            prop_assert_eq!(back.content(), s.content());
        }

        #[test]
        fn concat_roundtrip(a in arb_base_type(), b in arb_base_type(), t1 in "\\PC{1,30}", t2 in "\\PC{1,30}") {
            prop_assume!(a != b);
            let c = make_concat(&build(&a, &t1), &build(&b, &t2)).unwrap();
            let back = parse_supplement(c.raw()).unwrap();
            prop_assert_eq!(back.stype(), &SupplementType::concat(a, b).unwrap());
            prop_assert_eq!(back.content(), c.content());
        }

        #[test]
        fn prefix_completion_parses_to_type(stype in arb_base_type(), text in "\\PC{1,30}", tail in "[ a-z]{0,10}") {
            let prefix = output_prefix(&stype);
            let escaped = serde_json::to_string(&text).unwrap();
            let mut completion = format!("{prefix}{}\"", &escaped[1..escaped.len() - 1]);
            if stype == SupplementType::Predefined(Predefined::Pairs) {
                completion.push_str(", \"incorrect_answer\": \"wrong\"");
            }
            completion.push('}');
            completion.push_str(&tail);
            let s = parse_supplement(&completion).unwrap();
            prop_assert_eq!(s.stype(), &stype);
        }

        #[test]
        fn actor_format_is_injective(q in "\\PC{0,40}", stype in arb_base_type(), text in "\\PC{1,20}") {
            let s = build(&stype, &text);
            let fmt = ActorFormat::default();
            let input = fmt.format(&q, Some(&s));
            let sep = fmt.separator();
            let cut = input.rfind(&sep).unwrap();
            prop_assert_eq!(&input[..cut], q.as_str());
            prop_assert_eq!(&input[cut + sep.len()..], s.raw());
        }
    }
}
