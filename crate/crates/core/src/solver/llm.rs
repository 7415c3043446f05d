//! Remote solving backend speaking a chat-completions protocol.
//!
//! The transport is a trait so tests can fake the wire; the real one posts
//! JSON over HTTP with a bearer token taken from `VULSOLVER_API_KEY`.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::pipeline::StateKey;
use crate::rules::StateVerdict;

use super::{
    BackendConfig, RequestKind, ResponseEntry, SolverBackend, SolverError, SolverRequest,
    SolverResponse, TargetSlot, Transfer,
};

/// Environment variable holding the API key sent as a bearer token.
pub const API_KEY_ENV: &str = "VULSOLVER_API_KEY";

/// One round trip to the remote solver.
pub trait Transport: Sync + Send {
    fn send(&self, payload: &serde_json::Value) -> Result<String, SolverError>;
}

/// Blocking HTTP transport for a chat-completions endpoint.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpTransport {
    pub fn from_config(config: &BackendConfig) -> HttpTransport {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_seconds))
            .build()
            .expect("client builds");
        let url = format!(
            "{}/chat/completions",
            config.endpoint_url.trim_end_matches('/')
        );
        HttpTransport { client, url }
    }
}

impl Transport for HttpTransport {
    fn send(&self, payload: &serde_json::Value) -> Result<String, SolverError> {
        let mut request = self.client.post(&self.url).json(payload);
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let response = request.send().map_err(|e| SolverError::Transport {
            message: e.to_string(),
            attempts: 1,
        })?;
        let status = response.status();
        let body = response.text().map_err(|e| SolverError::Transport {
            message: e.to_string(),
            attempts: 1,
        })?;
        if !status.is_success() {
            return Err(SolverError::Transport {
                message: format!("status {status}: {body}"),
                attempts: 1,
            });
        }
        Ok(extract_reply_text(&body))
    }
}

/// Pulls the assistant text out of a chat-completions body, falling back to
/// the body itself for bare replies.
fn extract_reply_text(body: &str) -> String {
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(body) {
        if let Some(content) = value["choices"][0]["message"]["content"].as_str() {
            return content.to_string();
        }
    }
    body.to_string()
}

pub struct LlmBackend {
    config: BackendConfig,
    transport: Box<dyn Transport>,
}

impl LlmBackend {
    pub fn new(config: BackendConfig, transport: Box<dyn Transport>) -> LlmBackend {
        LlmBackend { config, transport }
    }

    fn build_payload(&self, request: &SolverRequest) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                { "role": "system", "content": SYSTEM_PROMPT },
                { "role": "user", "content": render_prompt(request) },
            ],
        })
    }
}

const SYSTEM_PROMPT: &str = "You analyze one step of a call chain in a Java-like \
language and decide how parameter states propagate. Reply with exactly one fenced \
JSON block of the form {\"transfer\": \"feasible|infeasible|unknown\", \"states\": \
[{\"slot\": <argIndex or \"argIndex.memberPath\">, \"verdict\": \
\"satisfies|violates|unknown\", \"justification\": \"...\"}]}. Omit \"transfer\" \
for branch probes. Mark a slot \"satisfies\" only when every path enforces it.";

fn render_prompt(request: &SolverRequest) -> String {
    let mut out = String::new();
    out.push_str(&format!("Rule: {}\n", request.rule_id));
    out.push_str(&format!(
        "Non-exploitable condition: {}\n\n",
        request.condition_text
    ));
    if !request.member_variables.is_empty() {
        out.push_str("Member variables:\n");
        for member in &request.member_variables {
            out.push_str(&format!("    {} {};\n", member.ty, member.name));
        }
        out.push('\n');
    }
    out.push_str("Method under analysis:\n");
    out.push_str(&request.caller_code);
    out.push_str("\n\n");
    if !request.call_site.is_empty() {
        out.push_str(&format!(
            "Call site: {} (invoked as {})\n",
            request.call_site, request.invoker
        ));
    }
    if !request.bindings.is_empty() {
        out.push_str("Argument bindings:\n");
        for binding in &request.bindings {
            out.push_str(&format!(
                "    arg{} <- {}\n",
                binding.formal_index, binding.actual_expression
            ));
        }
    }
    if !request.seed_states.is_empty() {
        out.push_str("Known parameter states of this method:\n");
        for seed in &request.seed_states {
            out.push_str(&format!(
                "    {} ({}): {}\n",
                seed.key,
                seed.name,
                verdict_text(seed.verdict)
            ));
        }
    }
    if !request.context_text.is_empty() {
        out.push_str("\nContext:\n");
        out.push_str(&request.context_text);
        out.push('\n');
    }
    if !request.aux_methods.is_empty() {
        out.push_str("\nRelated method bodies:\n");
        for aux in &request.aux_methods {
            out.push_str(&format!("// {}\n{}\n", aux.qualified_name, aux.code));
        }
    }
    out.push_str("\nObjective: ");
    out.push_str(&request.objective_text);
    out.push('\n');
    if !request.target_slots.is_empty() {
        out.push_str("Report a state for each slot:\n");
        for slot in &request.target_slots {
            out.push_str(&format!("    {} = {} {}\n", slot.key, slot.ty, slot.name));
        }
    }
    out
}

fn verdict_text(verdict: StateVerdict) -> &'static str {
    match verdict {
        StateVerdict::SatisfiesU => "satisfies the condition",
        StateVerdict::Unknown => "unknown",
        StateVerdict::ViolatesU => "violates the condition",
    }
}

impl SolverBackend for LlmBackend {
    fn solve(&self, request: &SolverRequest) -> Result<SolverResponse, SolverError> {
        let payload = self.build_payload(request);
        let max_attempts = 1 + self.config.max_retries;
        let mut last_error = SolverError::Transport {
            message: "no attempt made".to_string(),
            attempts: 0,
        };
        for attempt in 1..=max_attempts {
            match self.transport.send(&payload) {
                Err(SolverError::Transport { message, .. }) => {
                    last_error = SolverError::Transport {
                        message,
                        attempts: attempt,
                    };
                }
                Err(other) => return Err(other),
                Ok(text) => match parse_llm_reply(&text, &request.target_slots, request.kind) {
                    Ok(response) => return Ok(response),
                    Err(err) => last_error = err,
                },
            }
        }
        Err(last_error)
    }

    fn name(&self) -> &'static str {
        "llm"
    }
}

#[derive(Debug, Deserialize)]
struct ReplyJson {
    transfer: Option<String>,
    states: Option<Vec<ReplyState>>,
}

#[derive(Debug, Deserialize)]
struct ReplyState {
    slot: serde_json::Value,
    #[serde(rename = "memberPath")]
    member_path: Option<String>,
    verdict: String,
    justification: Option<String>,
}

/// Parses a solver reply: fenced JSON blocks first, then the first balanced
/// object. Target slots the reply misses are filled in as Unknown.
pub fn parse_llm_reply(
    text: &str,
    target_slots: &[TargetSlot],
    kind: RequestKind,
) -> Result<SolverResponse, SolverError> {
    for candidate in json_candidates(text) {
        if let Ok(reply) = serde_json::from_str::<ReplyJson>(&candidate) {
            if reply.states.is_some() || reply.transfer.is_some() {
                return build_response(reply, candidate, target_slots, kind);
            }
        }
    }
    Err(SolverError::MalformedReply {
        message: format!("no parseable reply object in: {}", truncate(text, 200)),
    })
}

fn build_response(
    reply: ReplyJson,
    raw: String,
    target_slots: &[TargetSlot],
    kind: RequestKind,
) -> Result<SolverResponse, SolverError> {
    let transfer = match kind {
        RequestKind::BranchObjective => None,
        RequestKind::SubtaskDerivation => Some(match reply.transfer.as_deref() {
            Some("feasible") => Transfer::Feasible,
            Some("infeasible") => Transfer::Infeasible,
            Some("unknown") | None => Transfer::Unknown,
            Some(other) => {
                return Err(SolverError::MalformedReply {
                    message: format!("unrecognized transfer value `{other}`"),
                })
            }
        }),
    };
    let mut entries = Vec::new();
    for state in reply.states.unwrap_or_default() {
        let key = parse_slot(&state.slot, state.member_path.as_deref()).ok_or_else(|| {
            SolverError::MalformedReply {
                message: format!("unrecognized slot value `{}`", state.slot),
            }
        })?;
        let verdict = match state.verdict.as_str() {
            "satisfies" => StateVerdict::SatisfiesU,
            "violates" => StateVerdict::ViolatesU,
            "unknown" => StateVerdict::Unknown,
            other => {
                return Err(SolverError::MalformedReply {
                    message: format!("unrecognized verdict `{other}`"),
                })
            }
        };
        entries.push(ResponseEntry {
            key,
            verdict,
            justification: state.justification.unwrap_or_default(),
        });
    }
    for slot in target_slots {
        if !entries.iter().any(|e| e.key == slot.key) {
            entries.push(ResponseEntry {
                key: slot.key.clone(),
                verdict: StateVerdict::Unknown,
                justification: "reply did not cover this slot".to_string(),
            });
        }
    }
    Ok(SolverResponse {
        transfer,
        entries,
        raw,
    })
}

fn parse_slot(slot: &serde_json::Value, member_path: Option<&str>) -> Option<StateKey> {
    let join = |index: usize| match member_path {
        Some(path) => StateKey::member(index, path),
        None => StateKey::param(index),
    };
    if let Some(index) = slot.as_u64() {
        return Some(join(index as usize));
    }
    let text = slot.as_str()?;
    match text.split_once('.') {
        Some((index, path)) => {
            let index: usize = index.parse().ok()?;
            Some(StateKey::member(index, path))
        }
        None => {
            let index: usize = text.parse().ok()?;
            Some(join(index))
        }
    }
}

/// Candidate JSON texts in priority order: fenced blocks, then the first
/// balanced object in the raw text.
fn json_candidates(text: &str) -> Vec<String> {
    let mut candidates = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = match after.find('\n') {
            Some(nl) if after[..nl].trim().is_empty() || after[..nl].trim() == "json" => nl + 1,
            _ => 0,
        };
        let body = &after[body_start..];
        match body.find("```") {
            Some(end) => {
                candidates.push(body[..end].trim().to_string());
                rest = &body[end + 3..];
            }
            None => break,
        }
    }
    if let Some(balanced) = first_balanced_object(text) {
        candidates.push(balanced);
    }
    candidates
}

fn first_balanced_object(text: &str) -> Option<String> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[start..start + i + 1].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

fn truncate(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        return text.to_string();
    }
    let mut end = limit;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &text[..end])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    struct FakeTransport {
        calls: Arc<AtomicU32>,
        fail_first: u32,
        reply: String,
    }

    impl Transport for FakeTransport {
        fn send(&self, _payload: &serde_json::Value) -> Result<String, SolverError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(SolverError::Transport {
                    message: "connection refused".to_string(),
                    attempts: 1,
                });
            }
            Ok(self.reply.clone())
        }
    }

    fn config_with_retries(max_retries: u32) -> BackendConfig {
        BackendConfig {
            max_retries,
            ..BackendConfig::default()
        }
    }

    fn good_reply() -> String {
        r#"Here is my analysis.
```json
{"transfer": "feasible", "states": [{"slot": 0, "verdict": "violates", "justification": "flows directly"}]}
```"#
            .to_string()
    }

    #[test]
    fn retries_until_the_transport_succeeds() {
        let calls = Arc::new(AtomicU32::new(0));
        let backend = LlmBackend::new(
            config_with_retries(2),
            Box::new(FakeTransport {
                calls: calls.clone(),
                fail_first: 2,
                reply: good_reply(),
            }),
        );
        let request = crate::solver::tests::minimal_request(RequestKind::SubtaskDerivation);
        let response = backend.solve(&request).unwrap();
        assert_eq!(response.transfer, Some(Transfer::Feasible));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausted_retries_report_the_attempt_count() {
        let calls = Arc::new(AtomicU32::new(0));
        let backend = LlmBackend::new(
            config_with_retries(2),
            Box::new(FakeTransport {
                calls: calls.clone(),
                fail_first: 99,
                reply: good_reply(),
            }),
        );
        let request = crate::solver::tests::minimal_request(RequestKind::SubtaskDerivation);
        let err = backend.solve(&request).unwrap_err();
        match err {
            SolverError::Transport { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn persistent_garbage_is_a_malformed_reply() {
        let backend = LlmBackend::new(
            config_with_retries(1),
            Box::new(FakeTransport {
                calls: Arc::new(AtomicU32::new(0)),
                fail_first: 0,
                reply: "I cannot answer that.".to_string(),
            }),
        );
        let request = crate::solver::tests::minimal_request(RequestKind::SubtaskDerivation);
        assert!(matches!(
            backend.solve(&request).unwrap_err(),
            SolverError::MalformedReply { .. }
        ));
    }

    #[test]
    fn first_valid_fenced_block_wins() {
        let text = r#"Thinking...
```json
{"not valid": }
```
```json
{"transfer": "infeasible", "states": []}
```"#;
        let response =
            parse_llm_reply(text, &[], RequestKind::SubtaskDerivation).unwrap();
        assert_eq!(response.transfer, Some(Transfer::Infeasible));
    }

    #[test]
    fn bare_object_without_fences_parses() {
        let text = r#"The verdict is {"transfer": "unknown", "states": [{"slot": "1.query", "verdict": "satisfies", "justification": ""}]} as shown."#;
        let response = parse_llm_reply(text, &[], RequestKind::SubtaskDerivation).unwrap();
        assert_eq!(response.entries[0].key, StateKey::member(1, "query"));
        assert_eq!(response.entries[0].verdict, StateVerdict::SatisfiesU);
    }

    #[test]
    fn uncovered_target_slots_fill_in_as_unknown() {
        let text = r#"```json
{"transfer": "feasible", "states": [{"slot": 0, "verdict": "violates", "justification": "x"}]}
```"#;
        let slots = vec![
            TargetSlot {
                key: StateKey::param(0),
                name: "a".to_string(),
                ty: "String".to_string(),
            },
            TargetSlot {
                key: StateKey::param(1),
                name: "b".to_string(),
                ty: "String".to_string(),
            },
        ];
        let response = parse_llm_reply(text, &slots, RequestKind::SubtaskDerivation).unwrap();
        assert_eq!(response.entries.len(), 2);
        assert_eq!(response.entries[1].key, StateKey::param(1));
        assert_eq!(response.entries[1].verdict, StateVerdict::Unknown);
    }

    #[test]
    fn http_transport_posts_bearer_token_and_parses_the_reply() {
        std::env::set_var(API_KEY_ENV, "test-key-123");
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut read = 0;
            let header_end = loop {
                let n = stream.read(&mut buf[read..]).unwrap();
                read += n;
                let text = String::from_utf8_lossy(&buf[..read]).to_string();
                if let Some(pos) = text.find("\r\n\r\n") {
                    break pos;
                }
                if n == 0 {
                    panic!("connection closed before headers");
                }
            };
            let head = String::from_utf8_lossy(&buf[..header_end]).to_string();
            let content_length: usize = head
                .lines()
                .find(|l| l.to_ascii_lowercase().starts_with("content-length:"))
                .and_then(|l| l.split(':').nth(1))
                .and_then(|v| v.trim().parse().ok())
                .unwrap();
            let body_start = header_end + 4;
            while read < body_start + content_length {
                let n = stream.read(&mut buf[read..]).unwrap();
                read += n;
            }
            let body = String::from_utf8_lossy(&buf[body_start..read]).to_string();
            let content = r#"{"choices": [{"message": {"content": "{\"transfer\": \"feasible\", \"states\": []}"}}]}"#;
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                content.len(),
                content
            );
            stream.write_all(response.as_bytes()).unwrap();
            (head, body)
        });

        let config = BackendConfig {
            endpoint_url: format!("http://127.0.0.1:{port}"),
            ..BackendConfig::default()
        };
        let transport = HttpTransport::from_config(&config);
        let backend = LlmBackend::new(config, Box::new(transport));
        let request = crate::solver::tests::minimal_request(RequestKind::SubtaskDerivation);
        let response = backend.solve(&request).unwrap();
        assert_eq!(response.transfer, Some(Transfer::Feasible));

        let (head, body) = server.join().unwrap();
        assert!(head.contains("POST /chat/completions"));
        assert!(head.contains("Bearer test-key-123"));
        let payload: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(payload["model"], "default-solver-model");
        assert!(payload["messages"][1]["content"]
            .as_str()
            .unwrap()
            .contains("Objective:"));
    }
}
