//! Chat-completions JSON shapes shared by the HTTP client and server.

use serde::{Deserialize, Serialize};

use super::{Message, TokenLogprob};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    #[serde(default = "one")]
    pub n: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub logprobs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_logprobs: Option<u32>,
    /// Treat a trailing assistant message as an output prefix to continue.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub continue_final_message: bool,
    #[serde(default = "yes")]
    pub add_generation_prompt: bool,
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub model: String,
    pub choices: Vec<Choice>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    #[serde(default)]
    pub index: u32,
    pub message: ResponseMessage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<ChoiceLogprobs>,
    #[serde(default)]
    pub finish_reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseMessage {
    #[serde(default)]
    pub role: String,
    #[serde(default)]
    pub content: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceLogprobs {
    #[serde(default)]
    pub content: Option<Vec<LogprobContent>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogprobContent {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TopLogprob>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

impl From<&TokenLogprob> for LogprobContent {
    fn from(t: &TokenLogprob) -> Self {
        Self {
            token: t.token.clone(),
            logprob: t.logprob,
            top_logprobs: t
                .top
                .iter()
                .map(|(token, logprob)| TopLogprob { token: token.clone(), logprob: *logprob })
                .collect(),
        }
    }
}

impl From<&LogprobContent> for TokenLogprob {
    fn from(c: &LogprobContent) -> Self {
        Self {
            token: c.token.clone(),
            logprob: c.logprob,
            top: c.top_logprobs.iter().map(|t| (t.token.clone(), t.logprob)).collect(),
        }
    }
}

/// Drop the first `len` bytes of text from a token list, splitting a token
/// that straddles the boundary.
pub fn strip_leading(entries: &[TokenLogprob], mut len: usize) -> Vec<TokenLogprob> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if len == 0 {
            out.push(e.clone());
        } else if e.token.len() <= len {
            len -= e.token.len();
        } else {
            let cut = (len..=e.token.len()).find(|&i| e.token.is_char_boundary(i)).unwrap_or(e.token.len());
            out.push(TokenLogprob { token: e.token[cut..].to_string(), logprob: e.logprob, top: e.top.clone() });
            len = 0;
        }
    }
    out
}
