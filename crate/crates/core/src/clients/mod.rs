//! Contracts for external services: chat-completion models and web search,
//! plus the record/replay cache that makes every stage hermetic offline.

mod http;
mod replay;
mod rule;

pub use http::{HttpChatClient, HttpSearchClient};
pub use replay::{fingerprint, CacheMode, ReplayCache, ReplayChatClient, ReplaySearchClient};
pub use rule::{RuleChatClient, RuleSearchClient};

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Message role in a chat exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: ChatRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: ChatRole::User, content: content.into() }
    }
}

/// A full chat-completion request. The replay cache fingerprints the entire
/// request, so two requests differing only in temperature are distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: model.into(),
            messages,
            temperature: 0.2,
            max_tokens: 1024,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.messages.is_empty() {
            return Err(ClientError::InvalidRequest("messages must be non-empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ClientError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    pub max_results: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub snippet: String,
    pub url: String,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),

    #[error("rate limited: {0}")]
    RateLimited(String),

    #[error("authentication failed: {0}")]
    Auth(String),

    #[error("replay miss for fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },

    #[error("empty completion")]
    EmptyCompletion,

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

impl ClientError {
    /// Transport and rate-limit failures may be retried; everything else is
    /// final. A replay miss is always fatal: it must never fall through to a
    /// live call.
    pub fn is_retriable(&self) -> bool {
        matches!(self, ClientError::Transport(_) | ClientError::RateLimited(_))
    }
}

/// Chat-completion contract. Implementations must be safe for concurrent
/// calls.
pub trait ChatClient: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, ClientError>;
}

/// Web-search contract.
pub trait SearchClient: Send + Sync {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ClientError>;
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ClientError> {
        (**self).chat(request)
    }
}

impl<S: SearchClient + ?Sized> SearchClient for Box<S> {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ClientError> {
        (**self).search(request)
    }
}

/// Call `chat` with bounded retries on retriable errors, doubling the backoff
/// each attempt. Replay misses and other fatal errors return immediately.
pub fn chat_with_retries(
    client: &dyn ChatClient,
    request: &ChatRequest,
    retries: u32,
    backoff_ms: u64,
) -> Result<String, ClientError> {
    let mut attempt = 0;
    loop {
        match client.chat(request) {
            Ok(completion) => return Ok(completion),
            Err(e) if e.is_retriable() && attempt < retries => {
                if backoff_ms > 0 {
                    thread::sleep(Duration::from_millis(backoff_ms << attempt));
                }
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}
