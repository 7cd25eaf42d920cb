//! Final prompt assembly, response generation, and medication parsing.
//!
//! The assembled prompt is byte-deterministic for fixed inputs, and in
//! recommendation mode the parsed medication set is always a subset of the
//! closed candidate list.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clients::{chat_with_retries, ChatClient, ChatMessage, ChatRequest};
use crate::error::{Error, Result};

pub const GENERATION_RECOMMEND_TEMPLATE: &str =
    include_str!("../templates/generation_recommend.txt");
pub const GENERATION_INTERVIEW_TEMPLATE: &str =
    include_str!("../templates/generation_interview.txt");

/// Everything the generation prompt is assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub dialogue_history: String,
    pub graph_text: String,
    pub neighborhood_block: String,
    pub path_block: String,
    /// Closed candidate list; present in recommendation mode, absent in
    /// interviewing mode.
    pub candidate_medications: Option<Vec<String>>,
    pub demonstrations: String,
    pub template: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenerationRequest {
    pub fn recommend(model: impl Into<String>, candidates: Vec<String>) -> GenerationRequest {
        GenerationRequest {
            dialogue_history: String::new(),
            graph_text: String::new(),
            neighborhood_block: String::new(),
            path_block: String::new(),
            candidate_medications: Some(candidates),
            demonstrations: String::new(),
            template: GENERATION_RECOMMEND_TEMPLATE.to_string(),
            model: model.into(),
            temperature: 0.2,
            max_tokens: 1024,
        }
    }

    pub fn interview(model: impl Into<String>) -> GenerationRequest {
        GenerationRequest {
            candidate_medications: None,
            template: GENERATION_INTERVIEW_TEMPLATE.to_string(),
            ..GenerationRequest::recommend(model, Vec::new())
        }
    }
}

/// A generated doctor turn with the medications parsed out of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationResult {
    pub response_text: String,
    pub medications: BTreeSet<String>,
    pub rationale_spans: Option<String>,
    pub warnings: Vec<String>,
}

/// Substitute the placeholder blocks into the template.
///
/// Every placeholder present in the template must be resolvable, and every
/// non-empty block must have a placeholder to land in; otherwise the error
/// names the offending placeholder.
pub fn assemble_prompt(request: &GenerationRequest) -> Result<String> {
    let candidates_value = request
        .candidate_medications
        .as_ref()
        .map(|c| c.join(", "));
    let blocks: [(&str, Option<&str>); 6] = [
        ("[Context]", Some(request.dialogue_history.as_str())),
        ("[Graph]", Some(request.graph_text.as_str())),
        ("[NP]", Some(request.neighborhood_block.as_str())),
        ("[PP]", Some(request.path_block.as_str())),
        ("[Demonstrations]", Some(request.demonstrations.as_str())),
        ("[Medication]", candidates_value.as_deref()),
    ];

    let mut prompt = request.template.clone();
    for (placeholder, value) in blocks {
        match (prompt.contains(placeholder), value) {
            (true, Some(value)) => prompt = prompt.replace(placeholder, value),
            (true, None) => {
                return Err(Error::Template(format!(
                    "template uses {placeholder} but no value is available in this mode"
                )))
            }
            (false, Some(value)) if !value.is_empty() => {
                return Err(Error::Template(format!(
                    "template has no {placeholder} placeholder but its block is non-empty"
                )))
            }
            (false, _) => {}
        }
    }
    Ok(prompt)
}

/// Longest-match scan of the response against the candidate list and its
/// synonym surfaces, case-folded; matches normalize to canonical candidate
/// names. Duplicates collapse by set semantics.
pub fn parse_medications(
    response_text: &str,
    candidates: &[String],
    synonyms: &BTreeMap<String, String>,
) -> BTreeSet<String> {
    let candidate_set: BTreeSet<&str> = candidates.iter().map(String::as_str).collect();
    // surface (casefolded chars) -> canonical candidate
    let mut surfaces: Vec<(Vec<char>, &str)> = Vec::new();
    for candidate in candidates {
        surfaces.push((fold_chars(candidate), candidate.as_str()));
    }
    for (surface, canonical) in synonyms {
        if candidate_set.contains(canonical.as_str()) {
            surfaces.push((fold_chars(surface), canonical.as_str()));
        }
    }

    let text = fold_chars(response_text);
    let mut found = BTreeSet::new();
    let mut i = 0;
    while i < text.len() {
        let mut best: Option<(usize, &str)> = None;
        for (surface, canonical) in &surfaces {
            let n = surface.len();
            if n == 0 || i + n > text.len() {
                continue;
            }
            if text[i..i + n] == surface[..] && best.is_none_or(|(len, _)| n > len) {
                best = Some((n, canonical));
            }
        }
        if let Some((n, canonical)) = best {
            found.insert(canonical.to_string());
            i += n;
        } else {
            i += 1;
        }
    }
    found
}

fn fold_chars(s: &str) -> Vec<char> {
    s.chars().flat_map(|c| c.to_lowercase()).collect()
}

// Text before an explicit recommendation marker reads as the model's
// reasoning; absent a marker there is no rationale to extract.
fn extract_rationale(response: &str) -> Option<String> {
    for marker in ["I recommend", "Recommendation:", "recommend:"] {
        if let Some(at) = response.find(marker) {
            let rationale = response[..at].trim();
            if !rationale.is_empty() {
                return Some(rationale.to_string());
            }
            return None;
        }
    }
    None
}

/// Run one generation call (with bounded retries on transport errors) and
/// parse the result. An empty completion is a generation error.
pub fn generate(
    client: &dyn ChatClient,
    request: &GenerationRequest,
    synonyms: &BTreeMap<String, String>,
    retries: u32,
    backoff_ms: u64,
) -> Result<RecommendationResult> {
    let prompt = assemble_prompt(request)?;
    let chat_request = ChatRequest {
        model: request.model.clone(),
        messages: vec![ChatMessage::user(prompt)],
        temperature: request.temperature,
        max_tokens: request.max_tokens,
    };
    let response_text = chat_with_retries(client, &chat_request, retries, backoff_ms)?;
    if response_text.trim().is_empty() {
        return Err(Error::Generation("empty completion".into()));
    }

    let mut warnings = Vec::new();
    let medications = match &request.candidate_medications {
        Some(candidates) => {
            let meds = parse_medications(&response_text, candidates, synonyms);
            if meds.is_empty() {
                warnings.push("response names no candidate medication".to_string());
            }
            meds
        }
        None => BTreeSet::new(),
    };
    Ok(RecommendationResult {
        rationale_spans: extract_rationale(&response_text),
        response_text,
        medications,
        warnings,
    })
}
