#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use humbench::gateway::{ChatRequest, ChatResponse, Transport, TransportFailure, Usage};
use sha2::{Digest, Sha256};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub const STUB_MODEL: &str = "stub-model-1";

/// Deterministic offline model: the answer depends only on the request body.
#[derive(Default)]
pub struct StubTransport {
    pub sent: AtomicUsize,
}

impl StubTransport {
    pub fn answer(req: &ChatRequest) -> String {
        let mut h = Sha256::new();
        for m in req.messages.messages.iter() {
            h.update(m.content.as_bytes());
            h.update([0u8]);
        }
        let d = h.finalize();
        if d[0] < 0x50 { "Yes".into() } else { "No".into() }
    }
}

impl Transport for StubTransport {
    fn send(&self, req: &ChatRequest, _timeout: Duration) -> Result<ChatResponse, TransportFailure> {
        self.sent.fetch_add(1, Ordering::SeqCst);
        Ok(ChatResponse {
            text: Self::answer(req),
            usage: Usage { prompt_tokens: 0, completion_tokens: 1, total_tokens: 1 },
            latency_ms: 0,
            provider_meta: Default::default(),
        })
    }
}

/// Normalizes whitespace runs to one space for golden comparisons.
pub fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Replies with a short digest of the request; used where any non-empty
/// free text will do (optimizer steps, feedback).
#[derive(Default)]
pub struct DigestTransport {
    pub sent: AtomicUsize,
}

impl Transport for DigestTransport {
    fn send(&self, req: &ChatRequest, _timeout: Duration) -> Result<ChatResponse, TransportFailure> {
        self.sent.fetch_add(1, Ordering::SeqCst);
        let mut h = Sha256::new();
        for m in req.messages.messages.iter() {
            h.update(m.content.as_bytes());
        }
        Ok(ChatResponse {
            text: format!("Revised prompt {}", hex::encode(&h.finalize()[..6])),
            usage: Usage::default(),
            latency_ms: 0,
            provider_meta: Default::default(),
        })
    }
}

/// Answers binary questions from a lookup of user prompt -> answer.
pub struct LookupTransport {
    pub answers: std::collections::HashMap<String, bool>,
}

impl Transport for LookupTransport {
    fn send(&self, req: &ChatRequest, _timeout: Duration) -> Result<ChatResponse, TransportFailure> {
        let user = &req.messages.messages.last().expect("user turn").content;
        let yes = *self.answers.get(user).ok_or(TransportFailure::Status { code: 404, body: "unknown prompt".into() })?;
        Ok(ChatResponse {
            text: (if yes { "Yes" } else { "No" }).into(),
            usage: Usage::default(),
            latency_ms: 0,
            provider_meta: Default::default(),
        })
    }
}
