//! Blocking JSON-over-HTTP client shared by the remote backends: bounded
//! in-flight requests and exponential-backoff retries.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct HttpSettings {
    pub api_key: Option<String>,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

struct Gate {
    in_use: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            in_use: Mutex::new(0),
            freed: Condvar::new(),
            limit: limit.max(1),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_use.lock().expect("gate lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_use.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    settings: HttpSettings,
    gate: Gate,
}

impl JsonClient {
    pub fn new(settings: HttpSettings) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(settings.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            gate: Gate::new(settings.max_in_flight),
            settings,
        }
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, url: &str, body: &B) -> Result<T> {
        let _permit = self.gate.acquire();
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.try_post(url, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Retry(message)) if attempt >= self.settings.max_attempts => {
                    return Err(Error::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(Attempt::Retry(message)) => {
                    let wait = self.settings.backoff * 2u32.saturating_pow(attempt - 1);
                    log::debug!(
                        "{url}: attempt {attempt} failed ({message}); retrying in {wait:?}"
                    );
                    thread::sleep(wait);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
            }
        }
    }

    fn try_post<B: Serialize, T: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
    ) -> std::result::Result<T, Attempt> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.settings.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| {
                Attempt::Fatal(Error::Data(format!("unexpected response from {url}: {e}")))
            }),
            400 | 404 | 405 | 422 | 501 => Err(Attempt::Fatal(Error::Capability(format!(
                "server rejected request with HTTP {status}: {}",
                truncate(&text)
            )))),
            429 | 500..=599 => Err(Attempt::Retry(format!(
                "HTTP {status}: {}",
                truncate(&text)
            ))),
            _ => Err(Attempt::Fatal(Error::Transport {
                attempts: 1,
                message: format!("HTTP {status}: {}", truncate(&text)),
            })),
        }
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
