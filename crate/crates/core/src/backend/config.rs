use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Environment variable consulted when a config carries no token.
pub const TOKEN_ENV_VAR: &str = "RELEVANCY_API_TOKEN";

/// A bearer token. Never printed and never serialized.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

impl<'de> Deserialize<'de> for Secret {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d).map(Secret)
    }
}

mod duration_ms {
    use super::*;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

fn default_timeout() -> Duration {
    Duration::from_secs(60)
}
fn default_retries() -> u32 {
    3
}
fn default_parallel() -> usize {
    4
}
fn default_max_tokens() -> u32 {
    10
}
fn default_base_delay() -> Duration {
    Duration::from_millis(500)
}
fn default_max_delay() -> Duration {
    Duration::from_secs(8)
}

/// Connection settings for a chat-completions server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default, skip_serializing)]
    pub auth_token: Option<Secret>,
    #[serde(rename = "timeout_ms", with = "duration_ms", default = "default_timeout")]
    pub timeout: Duration,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallel")]
    pub max_parallel_requests: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Delay before the first retry; doubles per attempt up to `retry_max_delay`.
    #[serde(rename = "retry_base_delay_ms", with = "duration_ms", default = "default_base_delay")]
    pub retry_base_delay: Duration,
    #[serde(rename = "retry_max_delay_ms", with = "duration_ms", default = "default_max_delay")]
    pub retry_max_delay: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("endpoint_url {0:?} is not an absolute http(s) URL")]
    BadEndpoint(String),
    #[error("model_name is empty")]
    EmptyModel,
    #[error("max_parallel_requests must be at least 1")]
    NoParallelism,
    #[error("temperature must be finite and non-negative")]
    BadTemperature,
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            auth_token: None,
            timeout: default_timeout(),
            max_retries: default_retries(),
            max_parallel_requests: default_parallel(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            retry_base_delay: default_base_delay(),
            retry_max_delay: default_max_delay(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let rest = self.endpoint_url.strip_prefix("https://").or_else(|| self.endpoint_url.strip_prefix("http://"));
        match rest {
            Some(rest) if !rest.is_empty() && !rest.starts_with('/') => {}
            _ => return Err(ConfigError::BadEndpoint(self.endpoint_url.clone())),
        }
        if self.model_name.is_empty() {
            return Err(ConfigError::EmptyModel);
        }
        if self.max_parallel_requests == 0 {
            return Err(ConfigError::NoParallelism);
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ConfigError::BadTemperature);
        }
        Ok(())
    }

    /// Token from the config, else from [`TOKEN_ENV_VAR`].
    pub fn resolved_token(&self) -> Option<Secret> {
        self.auth_token
            .clone()
            .filter(|t| !t.expose().is_empty())
            .or_else(|| std::env::var(TOKEN_ENV_VAR).ok().filter(|v| !v.is_empty()).map(Secret))
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.retry_base_delay.checked_mul(factor).unwrap_or(self.retry_max_delay).min(self.retry_max_delay)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_validation() {
        assert!(BackendConfig::new("http://localhost:8000/v1/chat/completions", "m").validate().is_ok());
        assert!(BackendConfig::new("https://api.example.com/v1/chat/completions", "m").validate().is_ok());
        for bad in ["localhost:8000", "ftp://x", "http://", "/v1/chat"] {
            assert_eq!(BackendConfig::new(bad, "m").validate(), Err(ConfigError::BadEndpoint(bad.into())));
        }
        let mut c = BackendConfig::new("http://h/x", "m");
        c.max_parallel_requests = 0;
        assert_eq!(c.validate(), Err(ConfigError::NoParallelism));
    }

    #[test]
    fn secret_is_hidden() {
        let mut c = BackendConfig::new("http://h/x", "m");
        c.auth_token = Some(Secret::new("sk-very-secret"));
        assert!(!format!("{c:?}").contains("sk-very"));
        assert!(!serde_json::to_string(&c).unwrap().contains("sk-very"));
    }

    #[test]
    fn exponential_backoff_is_capped() {
        let mut c = BackendConfig::new("http://h/x", "m");
        c.retry_base_delay = Duration::from_millis(100);
        c.retry_max_delay = Duration::from_millis(350);
        assert_eq!(c.backoff(1), Duration::from_millis(100));
        assert_eq!(c.backoff(2), Duration::from_millis(200));
        assert_eq!(c.backoff(3), Duration::from_millis(350));
        assert_eq!(c.backoff(40), Duration::from_millis(350));
    }

    #[test]
    fn defaults_from_minimal_toml() {
        let c: BackendConfig = toml::from_str("endpoint_url = \"http://h/x\"\nmodel_name = \"m\"").unwrap();
        assert_eq!(c.temperature, 0.0);
        assert_eq!(c.max_tokens, 10);
        assert_eq!(c.max_retries, 3);
    }
}
