//! Protocol conformance checks any generator endpoint should pass: sample
//! counts, greedy determinism, seeded replay, prefix forcing and logprob
//! alignment.

use super::{Backend, BackendError, GenRequest};
use crate::supplement::{output_prefix, parse_supplement, Predefined, SupplementType, OPEN_PREFIX};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceReport {
    pub checks: Vec<CheckResult>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.outcome.is_ok())
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks.iter().filter_map(|c| c.outcome.as_ref().err().map(|e| format!("{}: {e}", c.name))).collect()
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(backend: &dyn Backend, req: &GenRequest) -> Result<Vec<super::Completion>, String> {
    backend.generate(req).map_err(|e| e.to_string())
}

/// Run every check against `backend` with `prompt` as the user turn.
pub fn run_conformance(backend: &dyn Backend, prompt: &str) -> ConformanceReport {
    let base = GenRequest::user(backend.id(), prompt).max_tokens(64);
    let mut checks = Vec::new();
    let mut check =
        |name: &'static str, f: &dyn Fn() -> Result<(), String>| checks.push(CheckResult { name, outcome: f() });

    check("sample_count", &|| {
        let out = run(backend, &base.clone().n(3).temperature(1.0).seed(1))?;
        ensure(out.len() == 3, || format!("asked for 3, got {}", out.len()))
    });

    check("greedy_determinism", &|| {
        let req = base.clone().n(3);
        let a = run(backend, &req)?;
        let b = run(backend, &req)?;
        ensure(a.iter().all(|c| c.text == a[0].text), || "temperature 0 samples differ".into())?;
        ensure(a == b, || "repeated temperature 0 request differs".into())
    });

    check("seeded_replay", &|| {
        let req = base.clone().n(2).temperature(1.0).seed(11);
        ensure(run(backend, &req)? == run(backend, &req)?, || "same seed gave different completions".into())
    });

    check("prefix_forcing", &|| {
        let summary = SupplementType::Predefined(Predefined::Summary);
        let forced = output_prefix(&summary);
        for c in run(backend, &base.clone().n(2).temperature(1.0).prefix(&forced))? {
            ensure(c.text.starts_with(&forced), || format!("{:?} lacks prefix", c.text))?;
            let parsed = parse_supplement(&c.text).map_err(|e| e.to_string())?;
            ensure(parsed.stype() == &summary, || format!("forced summary parsed as {}", parsed.type_key()))?;
        }
        for c in run(backend, &base.clone().prefix(OPEN_PREFIX))? {
            ensure(c.text.starts_with(OPEN_PREFIX), || format!("{:?} lacks prefix", c.text))?;
        }
        Ok(())
    });

    check("logprob_alignment", &|| {
        if !backend.supports_logprobs() {
            return match backend.generate(&base.clone().logprobs(true)) {
                Err(BackendError::Unsupported(_)) | Err(BackendError::Protocol(_)) => Ok(()),
                Err(e) => Err(format!("unexpected error for unsupported logprobs: {e}")),
                Ok(_) => Err("logprobs not advertised but request succeeded".into()),
            };
        }
        for prefix in [None, Some(OPEN_PREFIX.to_string()), Some(output_prefix(&SupplementType::FreeStyle))] {
            let mut req = base.clone().n(2).temperature(1.0).seed(5).logprobs(true);
            req.output_prefix = prefix;
            for c in run(backend, &req)? {
                let entries = c.token_logprobs.ok_or("logprobs missing")?;
                let joined: String = entries.iter().map(|e| e.token.as_str()).collect();
                ensure(joined == c.text, || format!("entries join to {joined:?}, text is {:?}", c.text))?;
                ensure(entries.iter().all(|e| e.logprob <= 1e-9), || "positive logprob".into())?;
            }
        }
        Ok(())
    });

    ConformanceReport { checks }
}
