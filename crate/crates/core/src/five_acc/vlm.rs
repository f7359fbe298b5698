//! VLM clients and answer parsing. The mock client replays a scripted JSON
//! answer table keyed by `"<item id>:<question id>"`; the HTTP client posts
//! sampled frames plus the question to an external judge with retry and
//! backoff on transport failures.

use crate::error::{Error, Result};
use crate::five_acc::YesNo;
use crate::metrics::FrameImage;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Yn,
    Mc,
}

/// One question headed to the judge, with its mock-table lookup key.
#[derive(Clone, Debug)]
pub struct VlmQuestion {
    /// `"<item id>:<question id>"`, e.g. `"edit_color:yn_source"`.
    pub key: String,
    pub text: String,
    pub kind: QuestionKind,
    pub options: Option<[String; 2]>,
}

/// A judge that answers questions about sampled video frames with free text.
pub trait VlmClient {
    fn ask(&self, frames: &[FrameImage], question: &VlmQuestion) -> Result<String>;
    fn provenance(&self) -> String;
}

/// Scripted answers loaded from a JSON object `{key: answer}`.
pub struct MockVlm {
    table: BTreeMap<String, String>,
}

impl MockVlm {
    pub fn new(table: BTreeMap<String, String>) -> Self {
        MockVlm { table }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
        Ok(MockVlm {
            table: serde_json::from_str(&text)?,
        })
    }
}

impl VlmClient for MockVlm {
    fn ask(&self, _frames: &[FrameImage], question: &VlmQuestion) -> Result<String> {
        self.table
            .get(&question.key)
            .cloned()
            .ok_or_else(|| Error::Vlm(format!("mock table has no answer for {:?}", question.key)))
    }

    fn provenance(&self) -> String {
        "mock".into()
    }
}

#[derive(Serialize)]
struct VlmRequest<'a> {
    frames: Vec<String>,
    question: &'a str,
    kind: QuestionKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    options: Option<&'a [String; 2]>,
}

#[derive(Deserialize)]
struct VlmResponse {
    answer: String,
}

/// HTTP judge with exponential-backoff retries on transport errors.
pub struct HttpVlm {
    url: String,
    agent: ureq::Agent,
    pub retries: usize,
    pub backoff_ms: u64,
}

impl HttpVlm {
    pub fn new(url: impl Into<String>) -> Self {
        HttpVlm {
            url: url.into(),
            agent: ureq::Agent::new_with_defaults(),
            retries: 3,
            backoff_ms: 100,
        }
    }
}

impl VlmClient for HttpVlm {
    fn ask(&self, frames: &[FrameImage], question: &VlmQuestion) -> Result<String> {
        let encoded: Vec<String> = frames
            .iter()
            .map(|f| Ok(B64.encode(crate::imgio::frame_to_png_bytes(f)?)))
            .collect::<Result<_>>()?;
        let request = VlmRequest {
            frames: encoded,
            question: &question.text,
            kind: question.kind,
            options: question.options.as_ref(),
        };
        let mut last_err = None;
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(std::time::Duration::from_millis(
                    self.backoff_ms << (attempt - 1),
                ));
            }
            match self.agent.post(&self.url).send_json(&request) {
                Ok(mut response) => {
                    let parsed: VlmResponse = response
                        .body_mut()
                        .read_json()
                        .map_err(|e| Error::Vlm(format!("bad response: {e}")))?;
                    return Ok(parsed.answer);
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(Error::Vlm(format!(
            "endpoint unreachable after {} attempts: {}",
            self.retries + 1,
            last_err.unwrap()
        )))
    }

    fn provenance(&self) -> String {
        self.url.clone()
    }
}

fn clean(answer: &str) -> String {
    answer
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Parse a yes/no answer, case- and punctuation-insensitive; anything that
/// does not start with "yes" or "no" is rejected.
pub fn parse_yes_no(answer: &str) -> Result<YesNo> {
    let cleaned = clean(answer);
    let first: String = cleaned
        .split_whitespace()
        .next()
        .unwrap_or("")
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect();
    match first.as_str() {
        "yes" => Ok(YesNo::Yes),
        "no" => Ok(YesNo::No),
        _ => Err(Error::UnparseableAnswer {
            answer: answer.to_string(),
        }),
    }
}

/// Parse a multiple-choice answer: an option letter ("A"/"B", with optional
/// punctuation), a 1-based index, or the option text itself.
pub fn parse_multi_choice(answer: &str, options: &[String; 2]) -> Result<usize> {
    let cleaned = clean(answer);
    match cleaned.as_str() {
        "a" | "1" => return Ok(0),
        "b" | "2" => return Ok(1),
        _ => {}
    }
    let norm: Vec<String> = options.iter().map(|o| clean(o)).collect();
    if cleaned == norm[0] {
        return Ok(0);
    }
    if cleaned == norm[1] {
        return Ok(1);
    }
    // unambiguous containment, for answers like "the flamingo"
    let contains: Vec<bool> = norm.iter().map(|o| cleaned.contains(o.as_str())).collect();
    match (contains[0], contains[1]) {
        (true, false) => Ok(0),
        (false, true) => Ok(1),
        _ => Err(Error::UnparseableAnswer {
            answer: answer.to_string(),
        }),
    }
}
