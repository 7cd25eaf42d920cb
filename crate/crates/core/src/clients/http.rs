//! Minimal HTTP bindings for the chat-completion and search wire contracts.
//!
//! Chat: POST `{"model", "messages", "temperature", "max_tokens"}` to the
//! configured endpoint, bearer token from an environment variable, response
//! read from `choices[0].message.content`. Any provider speaking this shape
//! plugs in. Search: POST `{"query", "count"}`, response is an array of
//! `{"title", "snippet", "url"}` objects (bare or under `"results"`).

use std::time::Duration;

use serde_json::Value;

use super::{ChatClient, ChatRequest, ClientError, SearchClient, SearchRequest, SearchResult};

fn status_error(status: reqwest::StatusCode, body: String) -> ClientError {
    match status.as_u16() {
        401 | 403 => ClientError::Auth(format!("{status}: {body}")),
        429 => ClientError::RateLimited(body),
        _ => ClientError::Transport(format!("{status}: {body}")),
    }
}

pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> HttpChatClient {
        HttpChatClient {
            endpoint: endpoint.into(),
            api_key,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("default client builds"),
        }
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<String, ClientError> {
        request.validate()?;
        let mut http = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(status_error(status, body));
        }
        let value: Value = serde_json::from_str(&body)
            .map_err(|e| ClientError::MalformedResponse(format!("{e}; body: {body}")))?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                ClientError::MalformedResponse(format!("no choices[0].message.content in {body}"))
            })?;
        if content.trim().is_empty() {
            return Err(ClientError::EmptyCompletion);
        }
        Ok(content.to_string())
    }
}

pub struct HttpSearchClient {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpSearchClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> HttpSearchClient {
        HttpSearchClient {
            endpoint: endpoint.into(),
            api_key,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("default client builds"),
        }
    }
}

impl SearchClient for HttpSearchClient {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ClientError> {
        let body = serde_json::json!({
            "query": request.query,
            "count": request.max_results,
        });
        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(status_error(status, body));
        }
        let value: Value = serde_json::from_str(&body)
            .map_err(|e| ClientError::MalformedResponse(format!("{e}; body: {body}")))?;
        let items = value
            .as_array()
            .or_else(|| value.get("results").and_then(Value::as_array))
            .ok_or_else(|| {
                ClientError::MalformedResponse(format!("expected a result array in {body}"))
            })?;
        let mut results = Vec::new();
        for item in items {
            results.push(SearchResult {
                title: item.get("title").and_then(Value::as_str).unwrap_or_default().to_string(),
                snippet: item.get("snippet").and_then(Value::as_str).unwrap_or_default().to_string(),
                url: item.get("url").and_then(Value::as_str).unwrap_or_default().to_string(),
            });
        }
        results.truncate(request.max_results);
        Ok(results)
    }
}
