use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Instant;

use super::audit::{AuditEntry, AuditLog};
use super::wire::{self, ChatRequest};
use super::{BackendConfig, BackendError, RelevancyBackend};
use crate::pairs::{AugmentationBackend, AugmentationRequest};
use crate::prompt::ConversationPrompt;
use crate::seed::digest_hex;

/// Blocking chat-completions client. Share it by reference across worker threads.
#[derive(Debug)]
pub struct HttpBackend {
    cfg: BackendConfig,
    agent: ureq::Agent,
    audit: Option<AuditLog>,
    attempts: AtomicU64,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(cfg.timeout)).http_status_as_error(false).build().into();
        Self { cfg, agent, audit: None, attempts: AtomicU64::new(0) }
    }

    pub fn with_audit(mut self, log: AuditLog) -> Self {
        self.audit = Some(log);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    /// HTTP requests issued so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    fn post_once(&self, body: &[u8]) -> Result<String, BackendError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let mut req = self.agent.post(&self.cfg.endpoint_url).header("Content-Type", "application/json");
        if let Some(token) = self.cfg.resolved_token() {
            req = req.header("Authorization", &format!("Bearer {}", token.expose()));
        }
        let mut resp = req.send(body).map_err(map_ureq)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_ureq)?;
        if !(200..300).contains(&status) {
            return Err(BackendError::HttpError { status, body: text });
        }
        wire::parse_response(&text)
    }

    /// Sends one request, retrying transient failures with exponential backoff.
    /// Returns the reply text and the number of attempts made.
    pub fn send(&self, request: &ChatRequest) -> Result<(String, u32), BackendError> {
        let body = wire::encode(request);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.post_once(&body) {
                Ok(text) => return Ok((text, attempt)),
                Err(e) if e.is_transient() => {
                    if attempt > self.cfg.max_retries {
                        return Err(BackendError::ExhaustedRetries { attempts: attempt, last: Box::new(e) });
                    }
                    let delay = self.cfg.backoff(attempt);
                    tracing::debug!(attempt, ?delay, "transient failure: {e}");
                    thread::sleep(delay);
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn send_audited(&self, sample_id: &str, request: &ChatRequest) -> Result<String, BackendError> {
        let started = Instant::now();
        let result = self.send(request);
        if let Some(log) = &self.audit {
            let (raw_response, error, attempts) = match &result {
                Ok((text, n)) => (Some(text.clone()), None, *n),
                Err(BackendError::ExhaustedRetries { attempts, .. }) => {
                    (None, result.as_ref().err().map(|e| e.to_string()), *attempts)
                }
                Err(e) => (None, Some(e.to_string()), 1),
            };
            log.record(&AuditEntry {
                sample_id: sample_id.to_string(),
                prompt_digest: digest_hex(&wire::encode(request)),
                raw_response,
                error,
                latency_ms: started.elapsed().as_millis() as u64,
                attempts,
            });
        }
        result.map(|(text, _)| text)
    }
}

fn map_ureq(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(status) => BackendError::HttpError { status, body: String::new() },
        other => BackendError::Transport(other.to_string()),
    }
}

impl RelevancyBackend for HttpBackend {
    fn answer(&self, sample_id: &str, prompt: &ConversationPrompt) -> Result<String, BackendError> {
        let request = wire::chat_request(prompt, &self.cfg)?;
        self.send_audited(sample_id, &request)
    }

    fn model_name(&self) -> String {
        self.cfg.model_name.clone()
    }
}

impl AugmentationBackend for HttpBackend {
    fn generate(&self, request: &AugmentationRequest) -> Result<String, BackendError> {
        let chat = wire::augmentation_request(request, &self.cfg)?;
        self.send_audited(&request.digest(), &chat)
    }
}

/// One-off request with a fresh client.
pub fn send_chat(prompt: &ConversationPrompt, cfg: &BackendConfig) -> Result<String, BackendError> {
    let backend = HttpBackend::new(cfg.clone());
    let request = wire::chat_request(prompt, cfg)?;
    backend.send(&request).map(|(text, _)| text)
}
