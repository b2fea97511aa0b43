//! Blocking JSON-over-HTTP with exponential backoff, shared by the LLM,
//! embedding and model-server clients.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubled after each further failure.
    pub base_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 1000,
            timeout_secs: 60,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << retry.min(20)))
    }
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    policy: RetryPolicy,
    bearer: Option<String>,
}

pub(crate) struct JsonResponse {
    pub status: u16,
    pub body: String,
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl JsonClient {
    pub fn new(policy: RetryPolicy, bearer: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(policy.timeout_secs.max(1))))
            .build();
        JsonClient {
            agent: ureq::Agent::new_with_config(config),
            policy,
            bearer,
        }
    }

    /// POSTs `body`, retrying on 429, 5xx and transport failures.
    ///
    /// Any other status is returned to the caller as-is.
    pub fn post(&self, url: &str, body: &serde_json::Value) -> Result<JsonResponse> {
        let mut last: Option<(Option<u16>, String)> = None;
        for attempt in 0..=self.policy.max_retries {
            if attempt > 0 {
                let wait = self.policy.delay(attempt - 1);
                log::debug!("retrying {url} in {wait:?} (attempt {})", attempt + 1);
                std::thread::sleep(wait);
            }
            let mut req = self.agent.post(url).header("Content-Type", "application/json");
            if let Some(token) = &self.bearer {
                req = req.header("Authorization", format!("Bearer {token}"));
            }
            match req.send(serde_json::to_vec(body)?) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    if retryable(status) {
                        log::warn!("{url} answered {status}");
                        last = Some((Some(status), text));
                        continue;
                    }
                    return Ok(JsonResponse { status, body: text });
                }
                Err(e) => {
                    log::warn!("{url}: {e}");
                    last = Some((None, e.to_string()));
                }
            }
        }
        let (status, message) = last.unwrap_or((None, "no attempt made".into()));
        Err(Error::Http {
            url: url.to_string(),
            status,
            message: format!(
                "giving up after {} attempts: {}",
                self.policy.max_retries + 1,
                match status {
                    Some(s) => format!("status {s}: {message}"),
                    None => message,
                }
            ),
        })
    }

    /// Like [`post`](Self::post) but treats any non-200 status as an error
    /// carrying the server's body verbatim.
    pub fn post_ok(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value> {
        let resp = self.post(url, body)?;
        if resp.status != 200 {
            return Err(Error::Http {
                url: url.to_string(),
                status: Some(resp.status),
                message: resp.body,
            });
        }
        serde_json::from_str(&resp.body)
            .map_err(|e| Error::Protocol(format!("{url} returned a non-JSON body: {e}")))
    }
}

pub(crate) fn bearer_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.is_empty())
}
