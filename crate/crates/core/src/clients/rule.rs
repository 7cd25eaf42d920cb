//! Deterministic offline backends. They answer by recognizing the engine's
//! own prompt layouts, so the full pipeline can run, record, and replay with
//! no network and byte-stable output.
//!
//! For recommendation prompts the chat backend recommends exactly the
//! candidates that the knowledge sections mention and no exclusion line
//! rules out; removing knowledge from the prompt therefore removes
//! recommendations, which is what offline fixtures need to observe.

use std::collections::BTreeMap;

use super::{ChatClient, ChatRequest, ClientError, SearchClient, SearchRequest, SearchResult};

/// Marker lines the rule backend keys on. They appear in the shipped prompt
/// templates; custom templates that drop them fall back to a generic reply.
pub(crate) mod markers {
    pub const CANDIDATES: &str = "Candidate medications are from:";
    pub const NEIGHBORHOOD: &str = "Neighborhood Prompts:";
    pub const PATHS: &str = "Path-based Prompts:";
    pub const GENERATE: &str = "Now generate your thoughts and answers";
    pub const SUGGESTIONS: &str = "Please provide some effective suggestions";
    pub const QUESTION: &str = "Question:";
    pub const RELATION: &str = "Reply with exactly one relation";
    pub const OPTIONS: &str = "Options:";
    pub const REWRITE: &str = "Rewrite the following medical question";
    pub const EXCLUDE: &str = "Avoid ";
}

#[derive(Debug, Clone, Default)]
pub struct RuleChatClient {
    /// Optional canned replies: the first key contained in the prompt wins.
    replies: BTreeMap<String, String>,
}

impl RuleChatClient {
    pub fn new() -> RuleChatClient {
        RuleChatClient::default()
    }

    pub fn with_replies(replies: BTreeMap<String, String>) -> RuleChatClient {
        RuleChatClient { replies }
    }

    fn recommend(&self, prompt: &str) -> String {
        let candidates = parse_candidates(prompt);
        let knowledge = knowledge_sections(prompt);
        let folded = knowledge.to_lowercase();
        let excluded: Vec<&str> = candidates
            .iter()
            .map(String::as_str)
            .filter(|c| is_excluded(&knowledge, c))
            .collect();
        let recommended: Vec<&str> = candidates
            .iter()
            .map(String::as_str)
            .filter(|c| folded.contains(&c.to_lowercase()) && !excluded.contains(c))
            .collect();
        if recommended.is_empty() {
            "Thoughts: the available knowledge does not support a specific choice. \
             I cannot recommend a medication from the candidate list; please consult a clinician."
                .to_string()
        } else {
            format!(
                "Thoughts: the knowledge sections support these candidates. I recommend: {}.",
                recommended.join(", ")
            )
        }
    }
}

// The marker may sit mid-line; the candidate list runs to the end of line.
fn parse_candidates(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .find_map(|line| line.find(markers::CANDIDATES).map(|at| &line[at + markers::CANDIDATES.len()..]))
        .map(|rest| {
            rest.trim()
                .trim_end_matches('.')
                .split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

fn knowledge_sections(prompt: &str) -> String {
    let np = section_between(prompt, markers::NEIGHBORHOOD, markers::PATHS);
    let pp = section_between(prompt, markers::PATHS, markers::GENERATE);
    format!("{np}\n{pp}")
}

fn section_between(text: &str, start: &str, end: &str) -> String {
    let Some(start_at) = text.find(start) else { return String::new() };
    let body = &text[start_at + start.len()..];
    match body.find(end) {
        Some(end_at) => body[..end_at].to_string(),
        None => body.to_string(),
    }
}

// A candidate is ruled out when an exclusion line names it.
fn is_excluded(knowledge: &str, candidate: &str) -> bool {
    knowledge
        .lines()
        .any(|line| line.contains(markers::EXCLUDE) && line.to_lowercase().contains(&candidate.to_lowercase()))
}

impl ChatClient for RuleChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<String, ClientError> {
        request.validate()?;
        let prompt: String = request
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");

        for (key, reply) in &self.replies {
            if prompt.contains(key) {
                return Ok(reply.clone());
            }
        }
        if prompt.contains(markers::CANDIDATES) {
            return Ok(self.recommend(&prompt));
        }
        if prompt.contains(markers::RELATION) {
            // First option listed wins.
            let relation = prompt
                .lines()
                .find_map(|line| line.trim().strip_prefix(markers::OPTIONS))
                .and_then(|rest| rest.trim().split(',').next().map(|r| r.trim().to_string()))
                .unwrap_or_default();
            return Ok(relation);
        }
        if prompt.contains(markers::REWRITE) || prompt.contains(markers::SUGGESTIONS) {
            let question = prompt
                .lines()
                .find_map(|line| line.trim().strip_prefix(markers::QUESTION))
                .map(str::trim)
                .unwrap_or("")
                .to_string();
            if prompt.contains(markers::REWRITE) {
                return Ok(question);
            }
            return Ok(format!(
                "Seek professional evaluation regarding: {question} Monitor symptoms and avoid self-medication."
            ));
        }
        Ok("Understood. Please continue describing your symptoms.".to_string())
    }
}

/// Search backend answering from a fixed query -> results table.
#[derive(Debug, Clone, Default)]
pub struct RuleSearchClient {
    entries: BTreeMap<String, Vec<SearchResult>>,
}

impl RuleSearchClient {
    pub fn new() -> RuleSearchClient {
        RuleSearchClient::default()
    }

    pub fn with_entries(entries: BTreeMap<String, Vec<SearchResult>>) -> RuleSearchClient {
        RuleSearchClient { entries }
    }

    /// Parse `{"query": [{"title","snippet","url"}, ...], ...}`.
    pub fn from_json(json: &str) -> Result<RuleSearchClient, ClientError> {
        let entries: BTreeMap<String, Vec<SearchResult>> =
            serde_json::from_str(json).map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
        Ok(RuleSearchClient { entries })
    }
}

impl SearchClient for RuleSearchClient {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ClientError> {
        let mut results = self.entries.get(&request.query).cloned().unwrap_or_default();
        results.truncate(request.max_results);
        Ok(results)
    }
}
