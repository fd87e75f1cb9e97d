// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt rendering, answer parsing and a cached, concurrent client for
//! OpenAI-compatible chat-completion endpoints.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Instance, Label, PredictionOutcome, PredictionRecord};
use crate::prompts::{fill, PROMPT_1, PROMPT_2};

/// Parse-error marker for requests that never got a response.
pub const TRANSPORT_ERROR: &str = "transport";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptStyle {
    /// Answer on the first line, explanation after.
    ExplainFirstLine,
    LabelOnly,
}

impl FromStr for PromptStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p1" | "explain-first-line" => Ok(PromptStyle::ExplainFirstLine),
            "p2" | "label-only" => Ok(PromptStyle::LabelOnly),
            _ => Err(Error::Invalid(format!("unknown prompt style {s:?} (p1, p2)"))),
        }
    }
}

pub fn render_prompt(instance: &Instance, style: PromptStyle) -> String {
    let template = match style {
        PromptStyle::ExplainFirstLine => PROMPT_1,
        PromptStyle::LabelOnly => PROMPT_2,
    };
    fill(
        template,
        &instance.conversation.render_context(),
        &instance.question.text,
    )
}

/// Reads the label from the first non-empty line. Exactly one of the
/// standalone tokens "yes"/"no" must appear; otherwise the line is returned
/// as the error.
pub fn parse_answer(completion: &str, _style: PromptStyle) -> std::result::Result<Label, String> {
    let line = completion
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let lower = line.to_lowercase();
    let mut yes = false;
    let mut no = false;
    for tok in lower.split(|c: char| !c.is_alphanumeric()) {
        match tok {
            "yes" => yes = true,
            "no" => no = true,
            _ => {}
        }
    }
    match (yes, no) {
        (true, false) => Ok(Label::Yes),
        (false, true) => Ok(Label::No),
        _ => Err(line.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Seconds before the first retry; doubled on each further attempt.
    pub base_backoff: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_backoff: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token; no header if unset.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout_secs: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "model".into(),
            api_key_env: None,
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            timeout_secs: 120.0,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be >= 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be >= 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::Config("retry.max_attempts must be >= 1".into()));
        }
        if self.base_url.is_empty() {
            return Err(Error::Config("base_url is empty".into()));
        }
        Ok(())
    }

    /// Cache key over everything that determines a greedy completion.
    pub fn cache_key(&self, prompt: &str) -> String {
        let prompt_hash = hex::encode(Sha256::digest(prompt.as_bytes()));
        let material = format!(
            "{}\n{}\n{}\n{}\n{}",
            self.model_name, prompt_hash, self.temperature, self.top_p, self.max_tokens
        );
        hex::encode(Sha256::digest(material.as_bytes()))
    }
}

/// Content-addressed completion store: one file per key.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.txt"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        std::fs::read_to_string(self.path(key)).ok()
    }

    /// Writes through a temporary file and a rename, so concurrent readers
    /// never observe a partial entry.
    pub fn put(&self, key: &str, completion: &str) -> Result<()> {
        let path = self.path(key);
        let parent = path.parent().expect("sharded path");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        static SEQ: AtomicUsize = AtomicUsize::new(0);
        let tmp = parent.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            SEQ.fetch_add(1, Ordering::SeqCst)
        ));
        std::fs::write(&tmp, completion).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    Transient(String),
    Fatal(String),
}

/// Something that turns a prompt into a completion.
pub trait Completer: Sync {
    fn complete(&self, prompt: &str) -> std::result::Result<String, CallError>;
}

pub struct HttpCompleter {
    client: reqwest::blocking::Client,
    url: String,
    cfg: EndpointConfig,
    token: Option<String>,
}

impl HttpCompleter {
    pub fn new(cfg: &EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let token = cfg.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
        Ok(HttpCompleter {
            client,
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            cfg: cfg.clone(),
            token,
        })
    }
}

impl Completer for HttpCompleter {
    fn complete(&self, prompt: &str) -> std::result::Result<String, CallError> {
        let body = serde_json::json!({
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "top_p": self.cfg.top_p,
            "max_tokens": self.cfg.max_tokens,
        });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| CallError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(CallError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(CallError::Fatal(format!("HTTP {status}")));
        }
        let v: serde_json::Value = resp.json().map_err(|e| CallError::Transient(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| CallError::Fatal("response has no choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalOutcome {
    /// One record per instance, in dataset order.
    pub predictions: Vec<PredictionRecord>,
    pub network_calls: usize,
    pub cache_hits: usize,
    pub transport_failures: usize,
}

fn with_retries(
    completer: &dyn Completer,
    prompt: &str,
    retry: RetryPolicy,
    calls: &AtomicUsize,
) -> std::result::Result<String, String> {
    let mut last = String::new();
    for attempt in 0..retry.max_attempts {
        if attempt > 0 {
            let wait = retry.base_backoff * f64::from(1u32 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
        calls.fetch_add(1, Ordering::SeqCst);
        match completer.complete(prompt) {
            Ok(c) => return Ok(c),
            Err(CallError::Transient(m)) => {
                log::warn!("attempt {} failed: {m}", attempt + 1);
                last = m;
            }
            Err(CallError::Fatal(m)) => return Err(m),
        }
    }
    Err(last)
}

/// Queries the endpoint for every instance.
pub fn evaluate(
    dataset: &[Instance],
    cfg: &EndpointConfig,
    style: PromptStyle,
    cache: Option<&ResponseCache>,
) -> Result<EvalOutcome> {
    let completer = HttpCompleter::new(cfg)?;
    evaluate_with(dataset, &completer, cfg, style, cache)
}

/// Like [`evaluate`] with any completer. At most `cfg.max_in_flight`
/// requests run at once; output order follows the dataset.
pub fn evaluate_with(
    dataset: &[Instance],
    completer: &dyn Completer,
    cfg: &EndpointConfig,
    style: PromptStyle,
    cache: Option<&ResponseCache>,
) -> Result<EvalOutcome> {
    cfg.validate()?;
    let slots: Vec<Mutex<Option<PredictionRecord>>> = dataset.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let calls = AtomicUsize::new(0);
    let hits = AtomicUsize::new(0);
    let failures = AtomicUsize::new(0);
    let cache_error: Mutex<Option<Error>> = Mutex::new(None);
    let workers = cfg.max_in_flight.min(dataset.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(inst) = dataset.get(i) else { break };
                let prompt = render_prompt(inst, style);
                let key = cfg.cache_key(&prompt);
                let cached = cache.and_then(|c| c.get(&key));
                let result = match cached {
                    Some(c) => {
                        hits.fetch_add(1, Ordering::SeqCst);
                        Ok(c)
                    }
                    None => {
                        let r = with_retries(completer, &prompt, cfg.retry, &calls);
                        if let (Ok(c), Some(cache)) = (&r, cache) {
                            if let Err(e) = cache.put(&key, c) {
                                cache_error.lock().unwrap().get_or_insert(e);
                            }
                        }
                        r
                    }
                };
                let (outcome, raw) = match result {
                    Ok(c) => match parse_answer(&c, style) {
                        Ok(l) => (PredictionOutcome::Predicted(l), c),
                        Err(line) => (PredictionOutcome::ParseError(line), c),
                    },
                    Err(m) => {
                        log::error!("{}: giving up: {m}", inst.instance_id);
                        failures.fetch_add(1, Ordering::SeqCst);
                        (PredictionOutcome::ParseError(TRANSPORT_ERROR.into()), String::new())
                    }
                };
                *slots[i].lock().unwrap() = Some(PredictionRecord {
                    instance_id: inst.instance_id.clone(),
                    model_name: cfg.model_name.clone(),
                    outcome,
                    raw_completion: raw,
                });
            });
        }
    });
    if let Some(e) = cache_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(EvalOutcome {
        predictions: slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every slot filled"))
            .collect(),
        network_calls: calls.into_inner(),
        cache_hits: hits.into_inner(),
        transport_failures: failures.into_inner(),
    })
}

pub mod mock {
    //! A local chat-completions endpoint for offline runs and tests. It
    //! records request counts and the peak number of simultaneous requests.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::time::Duration;

    pub enum Reply {
        Content(String),
        Status(u16),
    }

    type Responder = dyn Fn(&str, usize) -> Reply + Send + Sync;

    struct Shared {
        responder: Box<Responder>,
        delay: Duration,
        requests: AtomicUsize,
        in_flight: AtomicUsize,
        peak: AtomicUsize,
        stop: AtomicBool,
    }

    pub struct MockEndpoint {
        addr: std::net::SocketAddr,
        shared: Arc<Shared>,
        handle: Option<std::thread::JoinHandle<()>>,
    }

    impl MockEndpoint {
        /// `responder` gets the user message and the 0-based request number.
        pub fn start(
            delay: Duration,
            responder: impl Fn(&str, usize) -> Reply + Send + Sync + 'static,
        ) -> std::io::Result<Self> {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let shared = Arc::new(Shared {
                responder: Box::new(responder),
                delay,
                requests: AtomicUsize::new(0),
                in_flight: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
                stop: AtomicBool::new(false),
            });
            let s = shared.clone();
            let handle = std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if s.stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let s = s.clone();
                    std::thread::spawn(move || {
                        let _ = serve(stream, &s);
                    });
                }
            });
            Ok(MockEndpoint {
                addr,
                shared,
                handle: Some(handle),
            })
        }

        /// Always answers with the same completion.
        pub fn constant(content: &str) -> std::io::Result<Self> {
            let c = content.to_string();
            Self::start(Duration::ZERO, move |_, _| Reply::Content(c.clone()))
        }

        pub fn base_url(&self) -> String {
            format!("http://{}/v1", self.addr)
        }

        pub fn requests(&self) -> usize {
            self.shared.requests.load(Ordering::SeqCst)
        }

        pub fn peak_in_flight(&self) -> usize {
            self.shared.peak.load(Ordering::SeqCst)
        }
    }

    impl Drop for MockEndpoint {
        fn drop(&mut self) {
            self.shared.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            if let Some(h) = self.handle.take() {
                let _ = h.join();
            }
        }
    }

    fn serve(stream: TcpStream, s: &Shared) -> std::io::Result<()> {
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut out = stream;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Ok(());
            }
            let mut len = 0usize;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h)?;
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body)?;
            let n = s.requests.fetch_add(1, Ordering::SeqCst);
            let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            s.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(s.delay);
            let v: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
            let prompt = v["messages"][0]["content"].as_str().unwrap_or("");
            let (status, payload) = match (s.responder)(prompt, n) {
                Reply::Content(c) => (
                    200,
                    serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": c}}]}).to_string(),
                ),
                Reply::Status(code) => (code, "{}".to_string()),
            };
            s.in_flight.fetch_sub(1, Ordering::SeqCst);
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
                payload.len()
            )?;
            out.flush()?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{MockEndpoint, Reply};
    use super::*;
    use crate::model::tests::instance;
    use crate::model::AlterationType;

    #[test]
    fn parse_answer_suite() {
        let p = PromptStyle::ExplainFirstLine;
        let cases: [(&str, Option<Label>); 12] = [
            ("yes)\nBecause the oranges were moved.", Some(Label::Yes)),
            ("no)\nThe agent never went there.", Some(Label::No)),
            ("Label: no", Some(Label::No)),
            ("It depends.", None),
            ("yes or no, hard to say", None),
            ("\n\n   Yes.\nno", Some(Label::Yes)),
            ("(NO)", Some(Label::No)),
            ("", None),
            ("Yesterday the apples were there", None),
            ("Answer: yes, because", Some(Label::Yes)),
            ("nobody knows", None),
            ("yes yes", Some(Label::Yes)),
        ];
        for (text, want) in cases {
            assert_eq!(parse_answer(text, p).ok(), want, "{text:?}");
        }
        assert_eq!(parse_answer("It depends.\nyes", p), Err("It depends.".into()));
    }

    #[test]
    fn prompt_endings() {
        let i = instance("c1", "c1", AlterationType::NotAltered);
        assert!(render_prompt(&i, PromptStyle::ExplainFirstLine).ends_with("Your answer:\n("));
        assert!(render_prompt(&i, PromptStyle::LabelOnly).ends_with("Label:"));
        assert!(render_prompt(&i, PromptStyle::LabelOnly).contains(&i.question.text));
    }

    fn cfg(url: String, in_flight: usize) -> EndpointConfig {
        EndpointConfig {
            base_url: url,
            max_in_flight: in_flight,
            retry: RetryPolicy {
                max_attempts: 3,
                base_backoff: 0.001,
            },
            ..Default::default()
        }
    }

    fn dataset(n: usize) -> Vec<Instance> {
        (0..n)
            .map(|k| {
                let mut i = instance(&format!("c{k}"), &format!("c{k}"), AlterationType::NotAltered);
                i.question.text = format!("Is item {k} there?");
                i
            })
            .collect()
    }

    #[test]
    fn bounded_concurrency_order_and_cache() {
        let server = MockEndpoint::start(Duration::from_millis(5), |p, _| {
            Reply::Content(if p.contains("item 3 ") { "(yes)".into() } else { "(no)".into() })
        })
        .unwrap();
        let ds = dataset(100);
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let c = cfg(server.base_url(), 8);
        let a = evaluate(&ds, &c, PromptStyle::ExplainFirstLine, Some(&cache)).unwrap();
        assert_eq!(server.requests(), 100);
        assert!(server.peak_in_flight() <= 8, "peak {}", server.peak_in_flight());
        assert!(server.peak_in_flight() > 1);
        let ids: Vec<&str> = a.predictions.iter().map(|p| p.instance_id.as_str()).collect();
        let want: Vec<&str> = ds.iter().map(|i| i.instance_id.as_str()).collect();
        assert_eq!(ids, want);
        assert_eq!(a.predictions[3].predicted(), Some(Label::Yes));
        assert_eq!(a.predictions.iter().filter(|p| p.predicted() == Some(Label::No)).count(), 99);

        let b = evaluate(&ds, &c, PromptStyle::ExplainFirstLine, Some(&cache)).unwrap();
        assert_eq!(server.requests(), 100);
        assert_eq!((b.network_calls, b.cache_hits), (0, 100));
        assert_eq!(a.predictions, b.predictions);
    }

    #[test]
    fn retries_then_transport_error() {
        let server = MockEndpoint::start(Duration::ZERO, |p, _| {
            if p.contains("item 0 ") {
                Reply::Status(503)
            } else {
                Reply::Content("no".into())
            }
        })
        .unwrap();
        let ds = dataset(3);
        let out = evaluate(&ds, &cfg(server.base_url(), 2), PromptStyle::LabelOnly, None).unwrap();
        assert_eq!(out.transport_failures, 1);
        assert_eq!(out.predictions[0].outcome, PredictionOutcome::ParseError(TRANSPORT_ERROR.into()));
        assert_eq!(out.network_calls, 3 + 2);
        assert_eq!(out.predictions[2].predicted(), Some(Label::No));
    }

    #[test]
    fn flaky_endpoint_recovers() {
        let server = MockEndpoint::start(Duration::ZERO, |_, n| {
            if n < 2 { Reply::Status(500) } else { Reply::Content("yes)".into()) }
        })
        .unwrap();
        let out = evaluate(&dataset(1), &cfg(server.base_url(), 1), PromptStyle::ExplainFirstLine, None).unwrap();
        assert_eq!(out.predictions[0].predicted(), Some(Label::Yes));
        assert_eq!(out.network_calls, 3);
    }

    #[test]
    fn unreachable_endpoint_is_per_instance() {
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let c = cfg(format!("http://127.0.0.1:{port}/v1"), 2);
        let out = evaluate(&dataset(2), &c, PromptStyle::ExplainFirstLine, None).unwrap();
        assert_eq!(out.transport_failures, 2);
    }

    #[test]
    fn config_validation() {
        let mut c = EndpointConfig::default();
        assert!(c.validate().is_ok());
        c.temperature = -0.1;
        assert!(c.validate().is_err());
        c.temperature = 0.0;
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
        let a = EndpointConfig::default();
        let mut b = a.clone();
        b.top_p = 0.5;
        assert_ne!(a.cache_key("p"), b.cache_key("p"));
        assert_eq!(a.cache_key("p"), a.clone().cache_key("p"));
    }
}
