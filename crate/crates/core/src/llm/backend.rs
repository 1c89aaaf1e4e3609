use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::LlmError;
use crate::data::Label;
use crate::sim::{
    base_sample, conditional_sample, contrast_sample, judge_label, ContrastSign, EditSpec,
    SimResponse, SimWorldConfig,
};

/// Structured description of a generation call, consumed by the simulation
/// backend. Text backends ignore it and only see the rendered prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimTask {
    Base,
    Contrast(ContrastSign),
    Conditional { first: SimResponse, spec: EditSpec },
    Judge { first: SimResponse, second: SimResponse },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    pub sim_task: Option<SimTask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendKind {
    HttpApi,
    SimWorld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub api_key_env_var: String,
    pub max_parallel: usize,
    pub retry_limit: u32,
    pub timeout_secs: f64,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    pub generation_temperature: f64,
    pub judge_temperature: f64,
    pub max_tokens: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::SimWorld,
            endpoint_url: None,
            api_key_env_var: "PREFSYNTH_API_KEY".into(),
            max_parallel: 8,
            retry_limit: 2,
            timeout_secs: 60.0,
            backoff_ms: 500,
            generation_temperature: 0.9,
            judge_temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

impl BackendConfig {
    pub fn sim() -> Self {
        BackendConfig::default()
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_parallel == 0 {
            return Err(LlmError::Config("max_parallel must be >= 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(LlmError::Config("timeout_secs must be > 0".into()));
        }
        if self.generation_temperature < 0.0 || self.judge_temperature < 0.0 {
            return Err(LlmError::Config("temperatures must be >= 0".into()));
        }
        if self.kind == BackendKind::HttpApi && self.endpoint_url.is_none() {
            return Err(LlmError::Config("HTTP_API backend needs endpoint_url".into()));
        }
        Ok(())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(16);
        Duration::from_millis(self.backoff_ms.saturating_mul(factor).min(30_000))
    }
}

/// Failure of a single attempt.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("request failed: {0}")]
    Permanent(String),
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;
}

pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Answers structured sim tasks with sim-world draws seeded by the request
/// seed, wrapped in the tags the real templates ask for.
#[derive(Debug, Clone)]
pub struct SimBackend {
    pub world: SimWorldConfig,
}

impl SimBackend {
    pub fn new(world: SimWorldConfig) -> Self {
        SimBackend { world }
    }
}

impl CompletionBackend for SimBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let task = request
            .sim_task
            .ok_or_else(|| BackendError::Permanent("sim backend needs a structured task".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
        let text = match task {
            SimTask::Base => format!("<response>{}</response>", base_sample(&self.world, &mut rng)),
            SimTask::Contrast(sign) => {
                format!("<response>{}</response>", contrast_sample(sign, &self.world, &mut rng))
            }
            SimTask::Conditional { first, spec } => {
                let y = conditional_sample(&first, &spec, &self.world, &mut rng)
                    .map_err(|e| BackendError::Permanent(e.to_string()))?;
                format!("<response>{y}</response>")
            }
            SimTask::Judge { first, second } => {
                let answer = if first == second {
                    "the_same"
                } else {
                    match judge_label(&first, &second, &self.world, &mut rng) {
                        Label::APreferred => "first_response",
                        Label::BPreferred => "second_response",
                    }
                };
                format!("<final_answer>{answer}</final_answer>")
            }
        };
        Ok(Completion {
            prompt_tokens: Some(whitespace_tokens(&request.prompt)),
            completion_tokens: Some(whitespace_tokens(&text)),
            text,
        })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    seed: u64,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
    usage: Option<WireUsage>,
}

/// JSON-over-HTTP completion endpoint:
/// `{prompt, temperature, max_tokens, seed}` → `{text, usage:{prompt_tokens, completion_tokens}}`.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(HttpBackend {
            client,
            endpoint: endpoint.into(),
            api_key,
        })
    }

    /// Reads the bearer token from the environment variable named in `config`.
    pub fn from_config(config: &BackendConfig) -> Result<Self, LlmError> {
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| LlmError::Config("HTTP_API backend needs endpoint_url".into()))?;
        let api_key = std::env::var(&config.api_key_env_var).ok();
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without a bearer token", config.api_key_env_var);
        }
        HttpBackend::new(endpoint, api_key, Duration::from_secs_f64(config.timeout_secs))
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let mut call = self.client.post(&self.endpoint).json(&WireRequest {
            prompt: &request.prompt,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
        });
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(BackendError::Auth(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let msg = format!("HTTP {status}");
            return Err(if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
                BackendError::Transient(msg)
            } else {
                BackendError::Permanent(msg)
            });
        }
        let body: WireResponse = resp
            .json()
            .map_err(|e| BackendError::Permanent(format!("bad response body: {e}")))?;
        let usage = body.usage.unwrap_or(WireUsage {
            prompt_tokens: None,
            completion_tokens: None,
        });
        Ok(Completion {
            text: body.text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }
}

pub fn build_backend(
    config: &BackendConfig,
    world: &SimWorldConfig,
) -> Result<Box<dyn CompletionBackend>, LlmError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::SimWorld => Box::new(SimBackend::new(world.clone())),
        BackendKind::HttpApi => Box::new(HttpBackend::from_config(config)?),
    })
}

/// A request that still failed after all retries.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("failed after {attempts} attempts: {message}")]
pub struct ItemError {
    pub attempts: u32,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BulkReport {
    pub n_requests: usize,
    pub n_failed: usize,
    pub attempts: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Completions whose backend reported no token usage.
    pub missing_usage: usize,
}

#[derive(Debug)]
pub struct BulkOutput {
    pub results: Vec<Result<Completion, ItemError>>,
    pub report: BulkReport,
}

fn complete_with_retries(
    request: &CompletionRequest,
    backend: &dyn CompletionBackend,
    config: &BackendConfig,
    abort: &AtomicBool,
) -> Result<(Completion, u32), (BackendError, u32)> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match backend.complete(request) {
            Ok(c) => return Ok((c, attempt)),
            Err(e @ BackendError::Auth(_)) => return Err((e, attempt)),
            Err(e) => {
                if attempt > config.retry_limit || abort.load(Ordering::Relaxed) {
                    return Err((e, attempt));
                }
                log::debug!("attempt {attempt} failed ({e}); retrying");
                std::thread::sleep(config.backoff(attempt));
            }
        }
    }
}

/// Runs all requests with at most `max_parallel` in flight and returns the
/// results in request order. Per-item failures land in their slot; an
/// authentication failure aborts the whole batch.
pub fn bulk_complete(
    requests: &[CompletionRequest],
    backend: &dyn CompletionBackend,
    config: &BackendConfig,
) -> Result<BulkOutput, LlmError> {
    config.validate()?;
    let n = requests.len();
    let slots: Mutex<Vec<Option<(Result<Completion, ItemError>, u32)>>> = Mutex::new(vec![None; n]);
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let auth_error: Mutex<Option<String>> = Mutex::new(None);

    let worker = || loop {
        if abort.load(Ordering::Relaxed) {
            break;
        }
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= n {
            break;
        }
        let outcome = match complete_with_retries(&requests[i], backend, config, &abort) {
            Ok((c, attempts)) => (Ok(c), attempts),
            Err((BackendError::Auth(msg), attempts)) => {
                abort.store(true, Ordering::Relaxed);
                auth_error.lock().unwrap().get_or_insert(msg.clone());
                (Err(ItemError { attempts, message: msg }), attempts)
            }
            Err((e, attempts)) => (
                Err(ItemError {
                    attempts,
                    message: e.to_string(),
                }),
                attempts,
            ),
        };
        slots.lock().unwrap()[i] = Some(outcome);
    };

    let workers = config.max_parallel.min(n);
    if workers <= 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(worker);
            }
        });
    }

    if let Some(msg) = auth_error.into_inner().unwrap() {
        return Err(LlmError::Auth(msg));
    }
    let mut report = BulkReport {
        n_requests: n,
        ..BulkReport::default()
    };
    let results = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| {
            let (res, attempts) = slot.expect("every request is processed");
            report.attempts += attempts as u64;
            match &res {
                Ok(c) => {
                    if c.prompt_tokens.is_none() || c.completion_tokens.is_none() {
                        report.missing_usage += 1;
                    }
                    report.prompt_tokens += c.prompt_tokens.unwrap_or(0);
                    report.completion_tokens += c.completion_tokens.unwrap_or(0);
                }
                Err(_) => report.n_failed += 1,
            }
            res
        })
        .collect();
    Ok(BulkOutput { results, report })
}
