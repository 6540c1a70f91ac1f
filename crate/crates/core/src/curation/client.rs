use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PromptJob;
use crate::error::{Error, Result};

/// Anything that turns a prompt into a model response.
pub trait ModelClient: Send + Sync {
    fn complete(&self, job: &PromptJob) -> Result<String>;
}

/// Offline client: the response for image `N` is the content of `<dir>/N.txt`.
#[derive(Debug, Clone)]
pub struct FixtureClient {
    dir: PathBuf,
}

impl FixtureClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureClient { dir: dir.into() }
    }

    pub fn response_path(&self, image_id: u64) -> PathBuf {
        self.dir.join(format!("{image_id}.txt"))
    }
}

impl ModelClient for FixtureClient {
    fn complete(&self, job: &PromptJob) -> Result<String> {
        let path = self.response_path(job.image_ref.image_id);
        std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct HttpClientConfig {
    /// Chat-completions style endpoint.
    pub endpoint: String,
    pub token: Option<String>,
    pub model: String,
    /// Directory that `file_name` is resolved against for the image payload.
    pub image_root: Option<PathBuf>,
    pub timeout: Duration,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            token: None,
            model: "gpt-4-vision-preview".into(),
            image_root: None,
            timeout: Duration::from_secs(120),
        }
    }
}

/// Sends the prompt as the system message and the image as a base64 data URL.
pub struct HttpClient {
    config: HttpClientConfig,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(config: HttpClientConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        HttpClient { config, agent }
    }

    fn image_content(&self, root: &Path, job: &PromptJob) -> Result<serde_json::Value> {
        let path = root.join(&job.image_ref.file_name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(path, e))?;
        let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(serde_json::json!({
            "type": "image_url",
            "image_url": {"url": format!("data:image/jpeg;base64,{encoded}")}
        }))
    }

    pub fn request_body(&self, job: &PromptJob) -> Result<serde_json::Value> {
        let mut content = Vec::new();
        if let Some(root) = &self.config.image_root {
            content.push(self.image_content(root, job)?);
        }
        Ok(serde_json::json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": job.prompt_text},
                {"role": "user", "content": content},
            ],
        }))
    }
}

impl ModelClient for HttpClient {
    fn complete(&self, job: &PromptJob) -> Result<String> {
        let body = self.request_body(job)?;
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(token) = &self.config.token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        let response = request.send_json(body).map_err(|e| Error::Client(e.to_string()))?;
        let value: serde_json::Value = response.into_json().map_err(|e| Error::Client(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| Error::Client("response has no choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub parallelism: usize,
    pub retry_delay: Duration,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            retries: 2,
            parallelism: 1,
            retry_delay: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobResult {
    pub job: PromptJob,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
}

impl JobResult {
    pub fn succeeded(&self) -> bool {
        self.response.is_some()
    }
}

fn run_one(job: PromptJob, client: &dyn ModelClient, config: &RunConfig) -> JobResult {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.complete(&job) {
            Ok(text) => {
                return JobResult {
                    job,
                    response: Some(text),
                    error: None,
                    attempts,
                }
            }
            Err(e) if attempts > config.retries => {
                log::warn!("image {}: giving up after {attempts} attempts: {e}", job.image_ref.image_id);
                return JobResult {
                    job,
                    response: None,
                    error: Some(e.to_string()),
                    attempts,
                };
            }
            Err(e) => {
                log::warn!("image {}: attempt {attempts} failed: {e}", job.image_ref.image_id);
                if !config.retry_delay.is_zero() {
                    std::thread::sleep(config.retry_delay);
                }
            }
        }
    }
}

/// Runs every job, retrying failures; results come back in input order.
pub fn run_jobs(jobs: Vec<PromptJob>, client: &dyn ModelClient, config: &RunConfig) -> Vec<JobResult> {
    if jobs.is_empty() {
        return Vec::new();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build();
    match pool {
        Ok(pool) => pool.install(|| jobs.into_par_iter().map(|job| run_one(job, client, config)).collect()),
        Err(_) => jobs.into_iter().map(|job| run_one(job, client, config)).collect(),
    }
}
