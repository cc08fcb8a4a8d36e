//! Deterministic scripted provider for offline runs and tests.
//!
//! Scripts pair a request predicate with an ordered response list. The first
//! registered script whose predicate matches serves the request; successive
//! matches consume successive responses. Consumption is serialized behind a
//! mutex, so an identical request sequence always yields an identical
//! response sequence.

use std::sync::Mutex;

use async_trait::async_trait;

use super::{ChatRequest, ChatResponse, GatewayError, Provider};

pub type RequestMatcher = Box<dyn Fn(&ChatRequest) -> bool + Send + Sync>;

struct Script {
    matcher: RequestMatcher,
    responses: Vec<String>,
    next: usize,
    /// Keep serving the final response instead of exhausting.
    repeat_last: bool,
}

#[derive(Default)]
pub struct MockProvider {
    scripts: Mutex<Vec<Script>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a FIFO script; the responses list must be non-empty.
    pub fn register_script(
        &self,
        matcher: RequestMatcher,
        responses: Vec<String>,
    ) -> Result<(), GatewayError> {
        self.register(matcher, responses, false)
    }

    /// Like [`register_script`](Self::register_script) but the last response
    /// repeats forever instead of exhausting.
    pub fn register_script_repeating(
        &self,
        matcher: RequestMatcher,
        responses: Vec<String>,
    ) -> Result<(), GatewayError> {
        self.register(matcher, responses, true)
    }

    fn register(
        &self,
        matcher: RequestMatcher,
        responses: Vec<String>,
        repeat_last: bool,
    ) -> Result<(), GatewayError> {
        if responses.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "script responses must be non-empty".into(),
            ));
        }
        self.scripts.lock().expect("script lock").push(Script {
            matcher,
            responses,
            next: 0,
            repeat_last,
        });
        Ok(())
    }

    /// Convenience: matches when every needle appears in the request text.
    pub fn register_containing(
        &self,
        needles: Vec<String>,
        responses: Vec<String>,
        repeat_last: bool,
    ) -> Result<(), GatewayError> {
        let matcher: RequestMatcher = Box::new(move |req: &ChatRequest| {
            let text = req.full_text();
            needles.iter().all(|n| text.contains(n.as_str()))
        });
        self.register(matcher, responses, repeat_last)
    }

    /// Every request seen so far, verbatim, in arrival order.
    pub fn recorded_requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("request lock").clone()
    }
}

#[async_trait]
impl Provider for MockProvider {
    async fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.requests
            .lock()
            .expect("request lock")
            .push(request.clone());

        let mut scripts = self.scripts.lock().expect("script lock");
        let head = |text: &str| text.chars().take(120).collect::<String>();
        let script = scripts
            .iter_mut()
            .find(|s| (s.matcher)(request))
            .ok_or_else(|| GatewayError::NoScriptMatched(head(&request.full_text())))?;

        let content = if script.next < script.responses.len() {
            let content = script.responses[script.next].clone();
            script.next += 1;
            content
        } else if script.repeat_last {
            script.responses.last().cloned().expect("non-empty script")
        } else {
            return Err(GatewayError::ScriptExhausted(head(&request.full_text())));
        };

        Ok(ChatResponse {
            prompt_tokens: Some(request.full_text().split_whitespace().count() as u64),
            completion_tokens: Some(content.split_whitespace().count() as u64),
            content,
        })
    }

    fn describe(&self) -> String {
        "mock:scripted".into()
    }
}
