//! Binary proxy rewards: did the actor solve the task with this supplement?

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::bench::{Split, TaskInstance};
use crate::supplement::Supplement;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    ExactMatch,
    MultipleChoice,
    ExecutionEquivalence,
    ExternalCommand,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum EvaluatorError {
    #[error("executor unavailable: {0}")]
    Unavailable(String),
    #[error("executor timed out after {0:?}")]
    Timeout(Duration),
    #[error("executor failed: {0}")]
    Failed(String),
    #[error("no executor configured for {0:?}")]
    NotConfigured(RewardKind),
}

/// Binary reward. Serialized as the integer 0 or 1; anything else is rejected
/// on read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reward(bool);

impl Reward {
    pub const PASS: Reward = Reward(true);
    pub const FAIL: Reward = Reward(false);

    pub fn is_pass(self) -> bool {
        self.0
    }

    pub fn value(self) -> u8 {
        self.0 as u8
    }
}

impl From<bool> for Reward {
    fn from(b: bool) -> Self {
        Reward(b)
    }
}

impl Serialize for Reward {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.value())
    }
}

impl<'de> Deserialize<'de> for Reward {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Reward::FAIL),
            1 => Ok(Reward::PASS),
            v => Err(serde::de::Error::custom(format!("reward must be 0 or 1, got {v}"))),
        }
    }
}

/// Result of scoring one actor output. Evaluator failures score 0 and carry
/// a flag; flagged samples are kept in the journal but never enter datasets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub reward: Reward,
    pub flag: Option<String>,
}

impl Outcome {
    fn scored(pass: bool) -> Self {
        Self { reward: pass.into(), flag: None }
    }

    fn failed(err: EvaluatorError) -> Self {
        Self { reward: Reward::FAIL, flag: Some(err.to_string()) }
    }
}

/// Exact-match normalization: NFKC, lowercase, trim, collapse whitespace,
/// strip trailing punctuation.
pub fn normalize_answer(text: &str) -> String {
    let folded: String = text.nfkc().collect::<String>().to_lowercase();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_end_matches(['.', ',', ';', ':', '!', '?']).trim_end().to_string()
}

pub const DEFAULT_CHOICE_PATTERN: &str = r"(?i:answer)(?:\s*(?i:is))?\s*[:\-]?\s*\(?([A-E])\)?(?:[^A-Za-z0-9]|$)";

fn last_standalone_choice(text: &str) -> Option<char> {
    let chars: Vec<char> = text.chars().collect();
    let mut found = None;
    for (i, &c) in chars.iter().enumerate() {
        if !('A'..='E').contains(&c) {
            continue;
        }
        let before_ok = i == 0 || !chars[i - 1].is_alphanumeric();
        let after_ok = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        if before_ok && after_ok {
            found = Some(c);
        }
    }
    found
}

/// Final option letter: last `answer: X`-style match, else the last
/// standalone A–E.
pub fn extract_choice(text: &str, pattern: &Regex) -> Option<char> {
    pattern
        .captures_iter(text)
        .filter_map(|c| c.get(1).and_then(|m| m.as_str().chars().next()))
        .last()
        .or_else(|| last_standalone_choice(text))
}

pub type ResultSet = Vec<Vec<String>>;

/// Runs a candidate program (SQL, code) and returns its result rows.
pub trait ProgramRunner: Send + Sync {
    fn run(&self, program: &str) -> Result<ResultSet, EvaluatorError>;
}

/// Stub runner for `SELECT <expr>[, <expr>...]` with arithmetic literals.
#[derive(Clone, Copy, Debug, Default)]
pub struct LiteralEvalRunner;

impl ProgramRunner for LiteralEvalRunner {
    fn run(&self, program: &str) -> Result<ResultSet, EvaluatorError> {
        let body = program.trim().trim_end_matches(';').trim();
        let rest = body
            .get(..6)
            .filter(|head| head.eq_ignore_ascii_case("select"))
            .map(|_| &body[6..])
            .ok_or_else(|| EvaluatorError::Failed(format!("not a SELECT: {program:?}")))?;
        let row = rest
            .split(',')
            .map(|expr| arith::eval(expr).map(format_number))
            .collect::<Result<Vec<_>, _>>()
            .map_err(EvaluatorError::Failed)?;
        Ok(vec![row])
    }
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

mod arith {
    //! Tiny recursive-descent evaluator for `+ - * /` and parentheses.

    pub fn eval(src: &str) -> Result<f64, String> {
        let tokens: Vec<char> = src.chars().filter(|c| !c.is_whitespace()).collect();
        if tokens.is_empty() {
            return Err("empty expression".into());
        }
        let mut p = Parser { tokens, pos: 0 };
        let v = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(format!("unexpected {:?}", p.tokens[p.pos]));
        }
        Ok(v)
    }

    struct Parser {
        tokens: Vec<char>,
        pos: usize,
    }

    impl Parser {
        fn peek(&self) -> Option<char> {
            self.tokens.get(self.pos).copied()
        }

        fn expr(&mut self) -> Result<f64, String> {
            let mut v = self.term()?;
            while let Some(op @ ('+' | '-')) = self.peek() {
                self.pos += 1;
                let rhs = self.term()?;
                v = if op == '+' { v + rhs } else { v - rhs };
            }
            Ok(v)
        }

        fn term(&mut self) -> Result<f64, String> {
            let mut v = self.factor()?;
            while let Some(op @ ('*' | '/')) = self.peek() {
                self.pos += 1;
                let rhs = self.factor()?;
                v = if op == '*' { v * rhs } else { v / rhs };
            }
            Ok(v)
        }

        fn factor(&mut self) -> Result<f64, String> {
            match self.peek() {
                Some('-') => {
                    self.pos += 1;
                    Ok(-self.factor()?)
                }
                Some('(') => {
                    self.pos += 1;
                    let v = self.expr()?;
                    if self.peek() != Some(')') {
                        return Err("missing )".into());
                    }
                    self.pos += 1;
                    Ok(v)
                }
                Some(c) if c.is_ascii_digit() || c == '.' => {
                    let start = self.pos;
                    while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.') {
                        self.pos += 1;
                    }
                    let lit: String = self.tokens[start..self.pos].iter().collect();
                    lit.parse().map_err(|_| format!("bad number {lit:?}"))
                }
                other => Err(format!("unexpected {other:?}")),
            }
        }
    }
}

/// External command invocation with a hard timeout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandSpec {
    pub program: String,
    /// Arguments; `{candidate}` and `{gold}` are replaced by payload file paths.
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    30.0
}

impl CommandSpec {
    fn run(&self, args: &[String], stdin: Option<&[u8]>) -> Result<bool, EvaluatorError> {
        let timeout = Duration::from_secs_f64(self.timeout_secs);
        let mut child = Command::new(&self.program)
            .args(args)
            .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| EvaluatorError::Unavailable(format!("{}: {e}", self.program)))?;
        if let (Some(bytes), Some(mut pipe)) = (stdin, child.stdin.take()) {
            // a command that exits without reading stdin is not an error
            let _ = pipe.write_all(bytes);
        }
        let start = Instant::now();
        loop {
            match child.try_wait().map_err(|e| EvaluatorError::Failed(e.to_string()))? {
                Some(status) => {
                    return match status.code() {
                        Some(0) => Ok(true),
                        Some(1) => Ok(false),
                        code => Err(EvaluatorError::Failed(format!("{} exited with {code:?}", self.program))),
                    }
                }
                None if start.elapsed() >= timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(EvaluatorError::Timeout(timeout));
                }
                None => std::thread::sleep(Duration::from_millis(5)),
            }
        }
    }
}

/// How execution equivalence is decided.
#[derive(Clone)]
pub enum Executor {
    /// Run both programs and compare result sets ignoring row order.
    Runner(Arc<dyn ProgramRunner>),
    /// External executor: payload files substituted into the argument
    /// template; exit 0 means equivalent, 1 means not.
    Command { spec: CommandSpec, scratch: PathBuf },
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Executor::Runner(_) => f.write_str("Executor::Runner"),
            Executor::Command { spec, .. } => write!(f, "Executor::Command({})", spec.program),
        }
    }
}

impl Executor {
    fn equivalent(&self, candidate: &str, gold: &str) -> Result<bool, EvaluatorError> {
        match self {
            Executor::Runner(runner) => {
                let mut a = runner.run(candidate)?;
                let mut b = runner.run(gold)?;
                a.sort();
                b.sort();
                Ok(a == b)
            }
            Executor::Command { spec, scratch } => {
                let dir = tempfile::Builder::new()
                    .prefix("sgt-exec")
                    .tempdir_in(scratch)
                    .map_err(|e| EvaluatorError::Unavailable(e.to_string()))?;
                let cand_path = dir.path().join("candidate.txt");
                let gold_path = dir.path().join("gold.txt");
                std::fs::write(&cand_path, candidate).map_err(|e| EvaluatorError::Failed(e.to_string()))?;
                std::fs::write(&gold_path, gold).map_err(|e| EvaluatorError::Failed(e.to_string()))?;
                let args: Vec<String> = spec
                    .args
                    .iter()
                    .map(|a| {
                        a.replace("{candidate}", &cand_path.to_string_lossy())
                            .replace("{gold}", &gold_path.to_string_lossy())
                    })
                    .collect();
                spec.run(&args, None)
            }
        }
    }
}

/// Executor plus its concurrency contract: non-reentrant executors are
/// serialized behind a lock.
#[derive(Debug)]
pub struct ExecutorHandle {
    executor: Executor,
    reentrant: bool,
    lock: Mutex<()>,
}

impl ExecutorHandle {
    pub fn new(executor: Executor, reentrant: bool) -> Self {
        Self { executor, reentrant, lock: Mutex::new(()) }
    }

    pub fn equivalent(&self, candidate: &str, gold: &str) -> Result<bool, EvaluatorError> {
        if self.reentrant {
            self.executor.equivalent(candidate, gold)
        } else {
            let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
            self.executor.equivalent(candidate, gold)
        }
    }
}

/// Scores actor outputs for one benchmark.
#[derive(Debug, Clone)]
pub struct Evaluator {
    answer_pattern: Option<Regex>,
    choice_pattern: Regex,
    executor: Option<Arc<ExecutorHandle>>,
    command: Option<Arc<(CommandSpec, Mutex<()>, bool)>>,
}

impl Default for Evaluator {
    fn default() -> Self {
        Self {
            answer_pattern: None,
            choice_pattern: Regex::new(DEFAULT_CHOICE_PATTERN).expect("default choice pattern compiles"),
            executor: None,
            command: None,
        }
    }
}

impl Evaluator {
    /// Post-process actor output before comparison: the first capture group
    /// of the last match (or the whole match) replaces the output.
    pub fn with_answer_pattern(mut self, pattern: &str) -> Result<Self, regex::Error> {
        self.answer_pattern = Some(Regex::new(pattern)?);
        Ok(self)
    }

    pub fn with_choice_pattern(mut self, pattern: &str) -> Result<Self, regex::Error> {
        self.choice_pattern = Regex::new(pattern)?;
        Ok(self)
    }

    pub fn with_executor(mut self, handle: Arc<ExecutorHandle>) -> Self {
        self.executor = Some(handle);
        self
    }

    pub fn with_command(mut self, spec: CommandSpec, reentrant: bool) -> Self {
        self.command = Some(Arc::new((spec, Mutex::new(()), reentrant)));
        self
    }

    fn extract<'a>(&self, y: &'a str) -> &'a str {
        match &self.answer_pattern {
            Some(re) => re
                .captures_iter(y)
                .last()
                .map(|c| c.get(1).or_else(|| c.get(0)).expect("group 0 exists").as_str())
                .unwrap_or(y),
            None => y,
        }
    }

    pub fn evaluate(&self, y: &str, task: &TaskInstance) -> Outcome {
        let y = self.extract(y);
        match task.reward_kind {
            RewardKind::ExactMatch => Outcome::scored(normalize_answer(y) == normalize_answer(&task.gold)),
            RewardKind::MultipleChoice => {
                let gold = task.gold.trim();
                let gold_letter = if gold.len() == 1 {
                    gold.chars().next().map(|c| c.to_ascii_uppercase())
                } else {
                    extract_choice(gold, &self.choice_pattern)
                };
                let got = extract_choice(y, &self.choice_pattern);
                Outcome::scored(got.is_some() && got == gold_letter)
            }
            RewardKind::ExecutionEquivalence => match &self.executor {
                Some(h) => h.equivalent(y, &task.gold).map_or_else(Outcome::failed, Outcome::scored),
                None => Outcome::failed(EvaluatorError::NotConfigured(RewardKind::ExecutionEquivalence)),
            },
            RewardKind::ExternalCommand => match &self.command {
                Some(cmd) => {
                    let (spec, lock, reentrant) = &**cmd;
                    let payload = serde_json::json!({ "output": y, "gold": task.gold }).to_string();
                    let _guard = (!reentrant).then(|| lock.lock().unwrap_or_else(|e| e.into_inner()));
                    spec.run(&spec.args, Some(payload.as_bytes())).map_or_else(Outcome::failed, Outcome::scored)
                }
                None => Outcome::failed(EvaluatorError::NotConfigured(RewardKind::ExternalCommand)),
            },
        }
    }
}

/// Evaluators keyed by benchmark name, with a fallback.
#[derive(Debug, Clone, Default)]
pub struct EvaluatorSet {
    by_benchmark: BTreeMap<String, Evaluator>,
    fallback: Evaluator,
}

impl EvaluatorSet {
    pub fn insert(&mut self, benchmark: impl Into<String>, evaluator: Evaluator) {
        self.by_benchmark.insert(benchmark.into(), evaluator);
    }

    pub fn get(&self, benchmark: &str) -> &Evaluator {
        self.by_benchmark.get(benchmark).unwrap_or(&self.fallback)
    }

    pub fn evaluate(&self, y: &str, task: &TaskInstance) -> Outcome {
        self.get(&task.benchmark).evaluate(y, task)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Predefined,
    Ood,
    Concat,
    Free,
    Gold,
    /// Test-split scoring; the supplement (if any) comes from the evaluated mode.
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub temperature: f64,
    pub seed: u64,
    pub sample_index: u32,
    pub source: Source,
}

/// One journaled (task, supplement, actor output, reward) record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub task_id: String,
    pub benchmark: String,
    pub split: Split,
    /// `sft`, `dpo_iter_<t>` or `eval_<method>`.
    pub stage: String,
    /// Generator prompt that produced the supplement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub supplement: Option<Supplement>,
    pub actor_output: String,
    pub reward: Reward,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged: Option<String>,
    pub meta: SampleMeta,
}

impl ScoredSample {
    pub fn type_key(&self) -> Option<String> {
        self.supplement.as_ref().map(Supplement::type_key)
    }

    /// Identity tuple that must be unique within a run.
    pub fn identity(&self) -> (String, String, u64, u32, Source, Option<String>) {
        (
            self.task_id.clone(),
            self.stage.clone(),
            self.meta.seed,
            self.meta.sample_index,
            self.meta.source,
            self.type_key(),
        )
    }
}

/// Split one task's samples into (positives, negatives), preserving order.
pub fn partition<'a>(
    task: &TaskInstance,
    samples: impl IntoIterator<Item = &'a ScoredSample>,
) -> (Vec<&'a ScoredSample>, Vec<&'a ScoredSample>) {
    samples
        .into_iter()
        .inspect(|s| assert_eq!(s.task_id, task.id, "sample from another task passed to partition"))
        .partition(|s| s.reward.is_pass())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(kind: RewardKind, gold: &str) -> TaskInstance {
        let mut t = TaskInstance::new("b#0", "b", "q", gold);
        t.reward_kind = kind;
        t
    }

    #[test]
    fn exact_match_normalizes() {
        let e = Evaluator::default();
        assert_eq!(e.evaluate("  Paris.", &task(RewardKind::ExactMatch, "paris")).reward, Reward::PASS);
        assert_eq!(e.evaluate("New\n  York!", &task(RewardKind::ExactMatch, "new york")).reward, Reward::PASS);
        assert_eq!(e.evaluate("ＰＡＲＩＳ", &task(RewardKind::ExactMatch, "paris")).reward, Reward::PASS);
        assert_eq!(e.evaluate("Lyon", &task(RewardKind::ExactMatch, "paris")).reward, Reward::FAIL);
    }

    /// Hand-labelled answer phrasings and the letter a careful reader would extract.
    const PHRASINGS: &[(&str, Option<char>)] = &[
        ("The answer is (B)", Some('B')),
        ("B", Some('B')),
        ("(C)", Some('C')),
        ("Answer: D", Some('D')),
        ("answer: a", None),
        ("ANSWER: E", Some('E')),
        ("The answer is A.", Some('A')),
        ("Final answer: (D).", Some('D')),
        ("I think it's C", Some('C')),
        ("Options A and B are wrong, the answer is C", Some('C')),
        ("The answer is B, not A", Some('B')),
        ("Between A and D, I pick D", Some('D')),
        ("Correct option: E", Some('E')),
        ("**Answer:** B", Some('B')),
        ("answer - C", Some('C')),
        ("My answer is (E)", Some('E')),
        ("answer is D", Some('D')),
        ("The correct choice is (A).", Some('A')),
        ("Answer:B", Some('B')),
        ("Answer: (C)\n", Some('C')),
        ("After eliminating B and C, answer: A", Some('A')),
        ("So the answer is D. Option E is a distractor.", Some('D')),
        ("None of the above", None),
        ("I am unsure.", None),
        ("", None),
        ("The result is 42", None),
        ("ABCDE", None),
        ("Choice: B)", Some('B')),
        ("B) is correct", Some('B')),
        ("Option (E)", Some('E')),
        ("Thus (A)", Some('A')),
        ("E.", Some('E')),
        ("answer is (b)", None),
        ("Answer:  D  ", Some('D')),
        ("answer: E\nExplanation: A is wrong", Some('E')),
        ("Let me think. A seems plausible but the answer is C", Some('C')),
        ("Final: C", Some('C')),
        ("[D]", Some('D')),
        ("The answer: B", Some('B')),
        ("the answer is: A", Some('A')),
        ("Answer is E because B fails", Some('E')),
        ("A", Some('A')),
        ("C is my pick", Some('C')),
        ("it must be D!", Some('D')),
        ("Picking B.", Some('B')),
        ("Answer = C", Some('C')),
        ("answer (D)", Some('D')),
        ("I choose option A over B", Some('B')),
        ("The best option is E;", Some('E')),
        ("Aspirin is the drug", None),
    ];

    #[test]
    fn choice_extraction_matches_hand_labels() {
        let re = Regex::new(DEFAULT_CHOICE_PATTERN).unwrap();
        assert_eq!(PHRASINGS.len(), 50);
        for (text, want) in PHRASINGS {
            assert_eq!(extract_choice(text, &re), *want, "{text:?}");
        }
    }

    #[test]
    fn multiple_choice_scoring() {
        let e = Evaluator::default();
        assert_eq!(e.evaluate("The answer is (B)", &task(RewardKind::MultipleChoice, "B")).reward, Reward::PASS);
        assert_eq!(e.evaluate("The answer is (B)", &task(RewardKind::MultipleChoice, "(C)")).reward, Reward::FAIL);
        assert_eq!(e.evaluate("no idea", &task(RewardKind::MultipleChoice, "A")).reward, Reward::FAIL);
    }

    #[test]
    fn literal_runner_computes_both_sides() {
        let r = LiteralEvalRunner;
        assert_eq!(r.run("SELECT 2").unwrap(), vec![vec!["2".to_string()]]);
        assert_eq!(r.run("select 1+1;").unwrap(), vec![vec!["2".to_string()]]);
        assert_eq!(r.run("SELECT (2+3)*4, 7/2").unwrap(), vec![vec!["20".to_string(), "3.5".to_string()]]);
        assert!(r.run("DROP TABLE x").is_err());

        let handle = Arc::new(ExecutorHandle::new(Executor::Runner(Arc::new(LiteralEvalRunner)), true));
        let e = Evaluator::default().with_executor(handle);
        let t = task(RewardKind::ExecutionEquivalence, "SELECT 1+1");
        assert_eq!(e.evaluate("SELECT 2", &t), Outcome { reward: Reward::PASS, flag: None });
        assert_eq!(e.evaluate("SELECT 3", &t).reward, Reward::FAIL);
    }

    #[test]
    fn result_sets_compare_order_insensitively() {
        struct Rows;
        impl ProgramRunner for Rows {
            fn run(&self, program: &str) -> Result<ResultSet, EvaluatorError> {
                Ok(program.split(';').map(|r| vec![r.trim().to_string()]).collect())
            }
        }
        let h = ExecutorHandle::new(Executor::Runner(Arc::new(Rows)), false);
        assert!(h.equivalent("a;b;c", "c;a;b").unwrap());
        assert!(!h.equivalent("a;b", "a;b;b").unwrap());
    }

    #[test]
    fn evaluator_errors_score_zero_with_flag() {
        let e = Evaluator::default();
        let out = e.evaluate("SELECT 1", &task(RewardKind::ExecutionEquivalence, "SELECT 1"));
        assert_eq!(out.reward, Reward::FAIL);
        assert!(out.flag.is_some());

        let bad = Arc::new(ExecutorHandle::new(Executor::Runner(Arc::new(LiteralEvalRunner)), true));
        let out = Evaluator::default()
            .with_executor(bad)
            .evaluate("garbage", &task(RewardKind::ExecutionEquivalence, "SELECT 1"));
        assert!(out.flag.is_some());
    }

    #[cfg(unix)]
    #[test]
    fn external_command_exit_code_and_timeout() {
        let sh = |script: &str, timeout| CommandSpec {
            program: "sh".into(),
            args: vec!["-c".into(), script.into()],
            timeout_secs: timeout,
        };
        let t = task(RewardKind::ExternalCommand, "42");
        let pass = Evaluator::default().with_command(sh("grep -q '\"output\":\"42\"'", 10.0), false);
        assert_eq!(pass.evaluate("42", &t).reward, Reward::PASS);
        assert_eq!(pass.evaluate("41", &t).reward, Reward::FAIL);

        let slow = Evaluator::default().with_command(sh("sleep 5", 0.2), true);
        let out = slow.evaluate("42", &t);
        assert_eq!(out.reward, Reward::FAIL);
        assert!(out.flag.unwrap().contains("timed out"));

        let missing = Evaluator::default().with_command(
            CommandSpec { program: "/nonexistent/sgt-judge".into(), args: vec![], timeout_secs: 1.0 },
            true,
        );
        assert!(missing.evaluate("42", &t).flag.unwrap().contains("unavailable"));
    }

    #[cfg(unix)]
    #[test]
    fn command_executor_gets_payload_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CommandSpec {
            program: "cmp".into(),
            args: vec!["-s".into(), "{candidate}".into(), "{gold}".into()],
            timeout_secs: 10.0,
        };
        let h = Arc::new(ExecutorHandle::new(Executor::Command { spec, scratch: dir.path().to_path_buf() }, false));
        let e = Evaluator::default().with_executor(h);
        let t = task(RewardKind::ExecutionEquivalence, "SELECT name FROM singer");
        assert_eq!(e.evaluate("SELECT name FROM singer", &t).reward, Reward::PASS);
        assert_eq!(e.evaluate("SELECT age FROM singer", &t).reward, Reward::FAIL);
    }

    #[test]
    fn answer_pattern_extracts_before_compare() {
        let e = Evaluator::default().with_answer_pattern(r"```sql\s*(.*?)\s*```").unwrap();
        let mut t = task(RewardKind::ExactMatch, "select 1");
        t.gold = "SELECT 1".into();
        assert_eq!(e.evaluate("Here you go:\n```sql\nSELECT 1\n```", &t).reward, Reward::PASS);
    }

    #[test]
    fn reward_schema_rejects_non_binary() {
        assert_eq!(serde_json::to_string(&Reward::PASS).unwrap(), "1");
        assert!(serde_json::from_str::<Reward>("2").is_err());
        assert_eq!(serde_json::from_str::<Reward>("0").unwrap(), Reward::FAIL);
    }

    fn sample(task_id: &str, reward: bool, idx: u32) -> ScoredSample {
        ScoredSample {
            task_id: task_id.into(),
            benchmark: "b".into(),
            split: Split::Val,
            stage: "dpo_iter_1".into(),
            prompt: None,
            supplement: None,
            actor_output: String::new(),
            reward: reward.into(),
            flagged: None,
            meta: SampleMeta { temperature: 1.0, seed: 0, sample_index: idx, source: Source::Free },
        }
    }

    #[test]
    fn partition_basic() {
        let t = task(RewardKind::ExactMatch, "x");
        let (p, n) = partition(&t, &[]);
        assert!(p.is_empty() && n.is_empty());
        let s = vec![sample("b#0", true, 0), sample("b#0", false, 1), sample("b#0", true, 2)];
        let (p, n) = partition(&t, &s);
        assert_eq!((p.len(), n.len()), (2, 1));
        assert_eq!(p[0].meta.sample_index, 0);
        assert_eq!(p[1].meta.sample_index, 2);
    }

    #[test]
    fn partition_recount_over_random_rewards() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t = task(RewardKind::ExactMatch, "x");
        let samples: Vec<_> = (0..1000).map(|i| sample("b#0", rng.random_bool(0.3), i)).collect();
        let (p, n) = partition(&t, &samples);
        assert_eq!(p.len() + n.len(), 1000);
        let expected_pos = samples.iter().filter(|s| s.reward == Reward::PASS).count();
        assert_eq!(p.len(), expected_pos);
        assert!(p.iter().all(|s| s.reward.is_pass()) && n.iter().all(|s| !s.reward.is_pass()));
        let mut idx: Vec<u32> = p.iter().chain(n.iter()).map(|s| s.meta.sample_index).collect();
        idx.sort();
        assert_eq!(idx, (0..1000).collect::<Vec<_>>());
    }
}
