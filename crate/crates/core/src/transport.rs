//! Blocking JSON-over-HTTP helper shared by the embedding provider and the
//! chat-completions backend.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub(crate) struct HttpFailure {
    pub message: String,
    pub status: Option<u16>,
    pub retry_after_secs: Option<u64>,
}

impl HttpFailure {
    /// Transport errors, throttling and server errors are worth retrying.
    pub fn retryable(&self) -> bool {
        match self.status {
            None => true,
            Some(s) => s == 429 || s >= 500,
        }
    }
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub(crate) fn post_json<B: Serialize, T: DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &B,
) -> Result<T, HttpFailure> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = bearer {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    let mut resp = req.send_json(body).map_err(|e| HttpFailure {
        message: e.to_string(),
        status: None,
        retry_after_secs: None,
    })?;
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        let retry_after_secs = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse().ok());
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(HttpFailure {
            message: format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()),
            status: Some(status),
            retry_after_secs,
        });
    }
    resp.body_mut().read_json::<T>().map_err(|e| HttpFailure {
        message: format!("malformed response body: {e}"),
        status: Some(status),
        retry_after_secs: None,
    })
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub(crate) struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

pub(crate) struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(slots: usize) -> Self {
        Self {
            free: Mutex::new(slots.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}
