//! Adapter for a remote chat-completion endpoint with function calling.
//! Temperature is pinned to 0. Not exercised against a live service in tests.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AgentBackend, AgentMessage, AgentTranscript, BackendError, PromptText, ToolCall, ToolName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatCompletionConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

pub struct ChatCompletionBackend {
    config: ChatCompletionConfig,
    client: reqwest::blocking::Client,
}

impl ChatCompletionBackend {
    pub fn new(config: ChatCompletionConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError(e.to_string()))?;
        Ok(Self { config, client })
    }

    /// The request body sent for the next turn.
    pub fn request_body(&self, prompt: &PromptText, transcript: &AgentTranscript) -> Value {
        let mut messages = vec![json!({"role": "user", "content": prompt.text})];
        for (i, step) in transcript.steps.iter().enumerate() {
            let calls: Vec<Value> = step
                .tool_calls
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    json!({
                        "id": format!("call_{i}_{j}"),
                        "type": "function",
                        "function": {
                            "name": c.tool.as_str(),
                            "arguments": Value::Object(c.arguments.clone()).to_string()
                        }
                    })
                })
                .collect();
            let mut assistant = json!({"role": "assistant", "content": step.agent_message});
            if !calls.is_empty() {
                assistant["tool_calls"] = Value::Array(calls);
            }
            messages.push(assistant);
            for (j, result) in step.tool_results.iter().enumerate() {
                messages.push(json!({
                    "role": "tool",
                    "tool_call_id": format!("call_{i}_{j}"),
                    "content": serde_json::to_string(result).expect("outcome serializes")
                }));
            }
        }
        let tools: Vec<Value> = ToolName::ALL
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {"name": t.as_str(), "parameters": t.parameters_schema()}
                })
            })
            .collect();
        json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": messages,
            "tools": tools
        })
    }
}

fn parse_reply(body: &Value) -> Result<AgentMessage, BackendError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError("response has no choices[0].message".into()))?;
    let text = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let mut tool_calls = Vec::new();
    for call in message
        .get("tool_calls")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
    {
        let name = call
            .pointer("/function/name")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError("tool call without a function name".into()))?;
        let tool: ToolName = name
            .parse()
            .map_err(|_| BackendError(format!("model requested unknown tool {name:?}")))?;
        let raw = call
            .pointer("/function/arguments")
            .and_then(Value::as_str)
            .unwrap_or("{}");
        let arguments: Value = serde_json::from_str(raw)
            .map_err(|e| BackendError(format!("tool arguments for {name} are not JSON: {e}")))?;
        tool_calls.push(ToolCall::new(tool, arguments));
    }
    Ok(AgentMessage { text, tool_calls })
}

impl AgentBackend for ChatCompletionBackend {
    fn next_message(
        &self,
        prompt: &PromptText,
        transcript: &AgentTranscript,
    ) -> Result<AgentMessage, BackendError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut request = self.client.post(url).json(&self.request_body(prompt, transcript));
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| BackendError(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(BackendError(format!("chat endpoint returned {status}")));
        }
        let body: Value = response.json().map_err(|e| BackendError(e.to_string()))?;
        parse_reply(&body)
    }
}
