//! Wire types for the chat-completions protocol and strict parsing of model
//! output. Only the fields the harness actually reads are modeled; unknown
//! fields are ignored on the way in.

use crate::backend::BackendError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatCompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_logprobs: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatCompletionResponse {
    pub choices: Vec<Choice>,
    #[serde(default)]
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Choice {
    pub message: ChatMessage,
    #[serde(default)]
    pub logprobs: Option<LogprobsPayload>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LogprobsPayload {
    #[serde(default)]
    pub content: Vec<TokenLogprob>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TopLogprob>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    #[serde(default)]
    pub total_tokens: u32,
}

/// Stable 32-bit id for a token surface form (FNV-1a). Remote services
/// report token text, not ids; hashing gives the optimizer a consistent
/// integer vocabulary without pretending to know the real tokenizer.
pub fn token_id(surface: &str) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for byte in surface.as_bytes() {
        hash ^= u32::from(*byte);
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

/// Extract the LAST bracketed integer list from free text and validate it as
/// a permutation of 0..arity. Tolerates any amount of preamble, including
/// earlier bracketed lists, so reasoning before the final answer is fine.
pub fn extract_permutation(text: &str, arity: usize) -> Result<Vec<usize>, BackendError> {
    let bytes = text.as_bytes();
    let mut best: Option<(usize, usize)> = None;
    let mut open: Option<usize> = None;
    for (i, b) in bytes.iter().enumerate() {
        match b {
            b'[' => open = Some(i),
            b']' => {
                if let Some(start) = open.take() {
                    best = Some((start, i));
                }
            }
            _ => {}
        }
    }
    let Some((start, end)) = best else {
        return Err(BackendError::Parse("no bracketed list found".into()));
    };
    let inner = &text[start + 1..end];
    let mut values = Vec::new();
    for part in inner.split(',') {
        let token = part.trim();
        if token.is_empty() {
            return Err(BackendError::Parse(format!("empty entry in list [{inner}]")));
        }
        let value: usize = token
            .parse()
            .map_err(|_| BackendError::Parse(format!("non-integer entry {token:?} in [{inner}]")))?;
        values.push(value);
    }
    if values.len() != arity {
        return Err(BackendError::Parse(format!(
            "expected {arity} indices, got {} in [{inner}]",
            values.len()
        )));
    }
    let mut seen = vec![false; arity];
    for &v in &values {
        if v >= arity {
            return Err(BackendError::Parse(format!("index {v} out of range in [{inner}]")));
        }
        if seen[v] {
            return Err(BackendError::Parse(format!("duplicate index {v} in [{inner}]")));
        }
        seen[v] = true;
    }
    Ok(values)
}
