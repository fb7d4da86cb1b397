//! Completion collection from an OpenAI-compatible endpoint, with a
//! per-sample transcript cache so analysis reruns offline.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{render_prompt, PromptVariant, Question};
use crate::error::{Error, Result};

/// Bearer token for the inference endpoint, read from the environment.
pub const API_KEY_ENV: &str = "FALLBACK_PROBE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// 0 means greedy.
    pub temperature: f64,
    pub max_tokens: u32,
    /// 1 for greedy, 5 for the sampling protocol.
    pub n_samples: u32,
    pub seed: Option<u64>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { temperature: 0.0, max_tokens: 512, n_samples: 1, seed: None }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        DecodeConfig::default()
    }

    pub fn sampling(temperature: f64, n_samples: u32) -> Self {
        DecodeConfig { temperature, n_samples, ..DecodeConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::DecodeConfig(format!(
                "temperature must be a finite non-negative real, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::DecodeConfig("max_tokens must be >= 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::DecodeConfig("n_samples must be >= 1".into()));
        }
        if self.temperature == 0.0 && self.n_samples != 1 {
            return Err(Error::DecodeConfig(format!(
                "greedy decoding (temperature 0) requires n_samples = 1, got {}",
                self.n_samples
            )));
        }
        Ok(())
    }

    /// Soft budget check: warn when the token budget can hardly express the
    /// requested number of facts.
    pub fn warn_if_budget_tight(&self, requested_count: u32) {
        if self.max_tokens < requested_count.saturating_mul(4) {
            log::warn!(
                "max_tokens {} may be too small to express {} facts",
                self.max_tokens,
                requested_count
            );
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub question_id: String,
    pub model_id: String,
    pub prompt: String,
    pub decode: DecodeConfig,
    pub sample_index: u32,
    pub completion_text: String,
    pub finish_reason: FinishReason,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<u32>>,
}

impl Transcript {
    /// The model ended its generation itself.
    pub fn eos_emitted(&self) -> bool {
        self.finish_reason == FinishReason::Stop
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(250) }
    }
}

pub struct CompletionClient {
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    n: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    token_ids: Option<Vec<u32>>,
}

enum Attempt {
    Done(Box<Transcript>),
    Retryable(String),
    Fatal(Error),
}

impl CompletionClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        CompletionClient {
            endpoint: endpoint.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            retry: RetryPolicy::default(),
            http: reqwest::blocking::Client::new(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(
        &self,
        model_id: &str,
        prompt: &str,
        decode: &DecodeConfig,
        sample_index: u32,
    ) -> Attempt {
        let request = CompletionRequest {
            model: model_id,
            prompt,
            temperature: decode.temperature,
            max_tokens: decode.max_tokens,
            n: 1,
            // distinct samples need distinct seeds
            seed: decode.seed.map(|s| s + sample_index as u64),
        };
        let mut builder = self.http.post(&self.endpoint).json(&request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retryable(format!("transport: {e}")),
        };
        let status = response.status();
        let payload = match response.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retryable(format!("read body: {e}")),
        };
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Attempt::Fatal(Error::Auth(format!("status {status}")));
        }
        if status.is_server_error() || status.as_u16() == 429 {
            return Attempt::Retryable(format!("status {status}"));
        }
        if !status.is_success() {
            log::error!("endpoint rejected request ({status}): {payload}");
            return Attempt::Fatal(Error::MalformedResponse {
                message: format!("status {status}"),
                payload,
            });
        }
        let parsed: CompletionResponse = match serde_json::from_str(&payload) {
            Ok(p) => p,
            Err(e) => {
                log::error!("malformed endpoint response: {e}; payload: {payload}");
                return Attempt::Fatal(Error::MalformedResponse { message: e.to_string(), payload });
            }
        };
        let Some(choice) = parsed.choices.into_iter().next() else {
            return Attempt::Fatal(Error::MalformedResponse {
                message: "no choices in response".into(),
                payload,
            });
        };
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        Attempt::Done(Box::new(Transcript {
            question_id: String::new(),
            model_id: model_id.to_string(),
            prompt: prompt.to_string(),
            decode: decode.clone(),
            sample_index,
            completion_text: choice.text,
            finish_reason,
            timestamp: Utc::now(),
            token_ids: choice.token_ids,
        }))
    }

    /// One completion for one (prompt, sample_index). Transport failures are
    /// retried with exponential backoff; after the attempts run out the
    /// transcript comes back with `finish_reason: Error`. Authentication and
    /// malformed-response failures are immediate errors.
    pub fn request_completion(
        &self,
        model_id: &str,
        prompt: &str,
        decode: &DecodeConfig,
        sample_index: u32,
    ) -> Result<Transcript> {
        decode.validate()?;
        if sample_index >= decode.n_samples {
            return Err(Error::DecodeConfig(format!(
                "sample_index {sample_index} out of range for n_samples {}",
                decode.n_samples
            )));
        }
        let mut last = String::new();
        for attempt in 0..self.retry.attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            match self.attempt(model_id, prompt, decode, sample_index) {
                Attempt::Done(t) => return Ok(*t),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retryable(msg) => {
                    log::warn!("attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        log::error!("giving up after {} attempts: {last}", self.retry.attempts);
        Ok(Transcript {
            question_id: String::new(),
            model_id: model_id.to_string(),
            prompt: prompt.to_string(),
            decode: decode.clone(),
            sample_index,
            completion_text: String::new(),
            finish_reason: FinishReason::Error,
            timestamp: Utc::now(),
            token_ids: None,
        })
    }
}

/// Collision-resistant cache key over everything that determines a sample.
pub fn cache_key(
    model_id: &str,
    prompt: &str,
    decode: &DecodeConfig,
    sample_index: u32,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update([0]);
    hasher.update(prompt.as_bytes());
    hasher.update([0]);
    hasher.update(decode.temperature.to_bits().to_le_bytes());
    hasher.update(decode.max_tokens.to_le_bytes());
    match decode.seed {
        Some(s) => {
            hasher.update([1]);
            hasher.update(s.to_le_bytes());
        }
        None => hasher.update([0]),
    }
    hasher.update(sample_index.to_le_bytes());
    hex::encode(hasher.finalize())
}

fn cache_path(cache_dir: &Path, key: &str) -> PathBuf {
    cache_dir.join(&key[..2]).join(format!("{key}.json"))
}

fn read_cached(path: &Path) -> Option<Transcript> {
    let text = fs::read_to_string(path).ok()?;
    match serde_json::from_str(&text) {
        Ok(t) => Some(t),
        Err(e) => {
            log::warn!("ignoring corrupt cache file {}: {e}", path.display());
            None
        }
    }
}

fn write_cached(path: &Path, t: &Transcript) -> Result<()> {
    let dir = path.parent().expect("cache path has a parent");
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = path.with_extension("tmp");
    let body = serde_json::to_string_pretty(t).map_err(|e| Error::record(&t.question_id, e.to_string()))?;
    fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchFailure {
    pub question_id: String,
    pub sample_index: u32,
    pub message: String,
}

/// Immutable result of a batch: one transcript per (question, sample_index)
/// in (question order, sample order), failures summarized alongside.
#[derive(Debug)]
pub struct TranscriptSet {
    pub transcripts: Vec<Transcript>,
    pub failures: Vec<BatchFailure>,
}

/// Fetch or replay every (question, sample_index) pair. Cached transcripts
/// are returned without network traffic; fresh ones are persisted under
/// `cache/<digest-prefix>/<digest>.json`. Failed items still occupy their
/// slot with `finish_reason: Error` and are never cached, so a rerun retries
/// them.
pub fn sample_batch(
    client: &CompletionClient,
    questions: &[Question],
    variant: &PromptVariant,
    model_id: &str,
    decode: &DecodeConfig,
    cache_dir: &Path,
    concurrency: usize,
) -> Result<TranscriptSet> {
    decode.validate()?;
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;

    struct Job {
        question_id: String,
        prompt: String,
        sample_index: u32,
    }
    let mut jobs = Vec::with_capacity(questions.len() * decode.n_samples as usize);
    for q in questions {
        decode.warn_if_budget_tight(q.requested_count);
        let prompt = render_prompt(q, variant)?;
        for sample_index in 0..decode.n_samples {
            jobs.push(Job { question_id: q.id.clone(), prompt: prompt.clone(), sample_index });
        }
    }

    let slots: Mutex<Vec<Option<Transcript>>> = Mutex::new(vec![None; jobs.len()]);
    let failures: Mutex<Vec<BatchFailure>> = Mutex::new(Vec::new());
    let next: AtomicUsize = AtomicUsize::new(0);
    let workers = concurrency.max(1).min(jobs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let job = &jobs[i];
                let key = cache_key(model_id, &job.prompt, decode, job.sample_index);
                let path = cache_path(cache_dir, &key);
                let transcript = if let Some(cached) = read_cached(&path) {
                    cached
                } else {
                    match client.request_completion(
                        model_id,
                        &job.prompt,
                        decode,
                        job.sample_index,
                    ) {
                        Ok(t) => {
                            let mut t = t;
                            t.question_id = job.question_id.clone();
                            if t.finish_reason == FinishReason::Error {
                                failures.lock().unwrap().push(BatchFailure {
                                    question_id: job.question_id.clone(),
                                    sample_index: job.sample_index,
                                    message: "transport failure after retries".into(),
                                });
                            } else if let Err(e) = write_cached(&path, &t) {
                                log::warn!("cache write failed for {key}: {e}");
                            }
                            t
                        }
                        Err(e) => {
                            failures.lock().unwrap().push(BatchFailure {
                                question_id: job.question_id.clone(),
                                sample_index: job.sample_index,
                                message: e.to_string(),
                            });
                            Transcript {
                                question_id: job.question_id.clone(),
                                model_id: model_id.to_string(),
                                prompt: job.prompt.clone(),
                                decode: decode.clone(),
                                sample_index: job.sample_index,
                                completion_text: String::new(),
                                finish_reason: FinishReason::Error,
                                timestamp: Utc::now(),
                                token_ids: None,
                            }
                        }
                    }
                };
                slots.lock().unwrap()[i] = Some(transcript);
            });
        }
    });

    let transcripts: Vec<Transcript> =
        slots.into_inner().unwrap().into_iter().map(|t| t.expect("every slot filled")).collect();
    let mut failures = failures.into_inner().unwrap();
    failures.sort_by(|a, b| (&a.question_id, a.sample_index).cmp(&(&b.question_id, b.sample_index)));
    Ok(TranscriptSet { transcripts, failures })
}

pub fn write_transcripts_jsonl(transcripts: &[Transcript], mut w: impl Write) -> Result<()> {
    for t in transcripts {
        let line =
            serde_json::to_string(t).map_err(|e| Error::record(&t.question_id, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<transcripts jsonl>", e))?;
    }
    Ok(())
}

pub fn read_transcripts_jsonl(r: impl BufRead) -> Result<Vec<Transcript>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<transcripts jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transcript = serde_json::from_str(&line)
            .map_err(|e| Error::record(format!("line {}", i + 1), e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}
