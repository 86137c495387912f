//! Zero-shot classification with a prompted chat model.
//!
//! A [`ZeroShotClassifier`] renders the prompt for a tweet, then answers it
//! from (in order) a replayed transcript, the response cache, or the chat
//! endpoint with retries. The reply is parsed into a [`LabelSet`].

mod cache;
mod endpoint;
mod parse;
mod prompt;
mod transcript;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{prompt_hash, ResponseCache};
pub use endpoint::{ChatEndpoint, EndpointError, HttpChatEndpoint, RateLimiter, RetryPolicy, API_KEY_ENV};
pub use parse::{parse_response, parse_response_with, ParseMode};
pub use prompt::{build_prompt, DecodingParams, PromptBundle, PromptTemplate};
pub use transcript::{read_transcript, ReplayLog, TranscriptRecord, TranscriptWriter};

use crate::taxonomy::{LabelCatalog, LabelSet};

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Error)]
pub enum ZeroShotError {
    #[error("invalid zero-shot configuration: {0}")]
    InvalidConfig(String),
    #[error("tweet text is empty")]
    EmptyTweet,
    #[error("endpoint rejected credentials: {0}")]
    AuthFailure(EndpointError),
    #[error("gave up after {attempts} attempts; last error: {last}")]
    RetriesExhausted { attempts: u32, last: EndpointError },
    #[error("endpoint call failed: {0}")]
    Endpoint(EndpointError),
    #[error("offline mode and no recorded reply for prompt {prompt_hash}")]
    ReplayMiss { prompt_hash: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("tweet `{id}`: {source}")]
    Tweet { id: String, source: Box<ZeroShotError> },
}

impl ZeroShotError {
    /// The error underneath any per-tweet wrapper.
    pub fn root(&self) -> &ZeroShotError {
        match self {
            ZeroShotError::Tweet { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Where a reply came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseSource {
    Endpoint,
    Cache,
    Replay,
}

/// One classified tweet with everything needed to audit or replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmExchange {
    pub bundle: PromptBundle,
    pub prompt_hash: String,
    pub raw_response: String,
    pub parsed: LabelSet,
    pub latency: Duration,
    /// Endpoint calls made; zero when served from cache or replay.
    pub attempt_count: u32,
    pub cache_hit: bool,
    pub source: ResponseSource,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

/// Settings that affect how prompts are sent and read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZeroShotSettings {
    pub model_name: String,
    pub params: DecodingParams,
    pub retry: RetryPolicy,
    pub concurrency: usize,
    /// Request starts per second across all workers; 0 disables limiting.
    pub requests_per_second: f64,
    pub parse_mode: ParseMode,
}

impl Default for ZeroShotSettings {
    fn default() -> Self {
        ZeroShotSettings {
            model_name: DEFAULT_MODEL.into(),
            params: DecodingParams::default(),
            retry: RetryPolicy::default(),
            concurrency: DEFAULT_CONCURRENCY,
            requests_per_second: 0.0,
            parse_mode: ParseMode::Lenient,
        }
    }
}

impl ZeroShotSettings {
    pub fn validate(&self) -> Result<(), ZeroShotError> {
        self.params.validate()?;
        if self.model_name.trim().is_empty() {
            return Err(ZeroShotError::InvalidConfig("model name is empty".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(ZeroShotError::InvalidConfig("retry cap must be at least 1".into()));
        }
        if self.concurrency < 1 {
            return Err(ZeroShotError::InvalidConfig("concurrency must be at least 1".into()));
        }
        if !(self.requests_per_second >= 0.0 && self.requests_per_second.is_finite()) {
            return Err(ZeroShotError::InvalidConfig("requests_per_second must be non-negative".into()));
        }
        Ok(())
    }
}

pub struct ZeroShotClassifier<'a> {
    endpoint: Option<&'a dyn ChatEndpoint>,
    catalog: LabelCatalog,
    template: PromptTemplate,
    settings: ZeroShotSettings,
    cache: Option<ResponseCache>,
    replay: Option<ReplayLog>,
    limiter: RateLimiter,
}

impl<'a> ZeroShotClassifier<'a> {
    /// A classifier that calls `endpoint` for prompts it has no reply for.
    pub fn new(endpoint: &'a dyn ChatEndpoint, settings: ZeroShotSettings) -> Result<Self, ZeroShotError> {
        Self::build(Some(endpoint), settings)
    }

    /// A classifier that never touches the network: every prompt must be
    /// answered by the replay log or the cache.
    pub fn offline(settings: ZeroShotSettings) -> Result<Self, ZeroShotError> {
        Self::build(None, settings)
    }

    fn build(endpoint: Option<&'a dyn ChatEndpoint>, settings: ZeroShotSettings) -> Result<Self, ZeroShotError> {
        settings.validate()?;
        Ok(ZeroShotClassifier {
            endpoint,
            catalog: LabelCatalog::builtin(),
            template: PromptTemplate::builtin(),
            limiter: RateLimiter::per_second(settings.requests_per_second),
            settings,
            cache: None,
            replay: None,
        })
    }

    pub fn with_catalog(mut self, catalog: LabelCatalog) -> Self {
        self.catalog = catalog;
        self
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_replay(mut self, replay: ReplayLog) -> Self {
        self.replay = Some(replay);
        self
    }

    pub fn settings(&self) -> &ZeroShotSettings {
        &self.settings
    }

    pub fn bundle_for(&self, tweet: &str) -> PromptBundle {
        build_prompt(
            tweet,
            &self.catalog,
            &self.template,
            &self.settings.params,
            &self.settings.model_name,
        )
    }

    pub fn classify(&self, tweet: &str) -> Result<LlmExchange, ZeroShotError> {
        if tweet.trim().is_empty() {
            return Err(ZeroShotError::EmptyTweet);
        }
        let started_at = Utc::now();
        let clock = Instant::now();
        let bundle = self.bundle_for(tweet);
        let hash = prompt_hash(&bundle);

        let recorded = match self.replay.as_ref().and_then(|r| r.get(&hash)) {
            Some(raw) => Some((raw.to_string(), ResponseSource::Replay)),
            None => match &self.cache {
                Some(cache) => cache.get(&hash)?.map(|raw| (raw, ResponseSource::Cache)),
                None => None,
            },
        };
        let (raw, source, attempts) = match recorded {
            Some((raw, source)) => (raw, source, 0),
            None => {
                let endpoint = self.endpoint.ok_or_else(|| ZeroShotError::ReplayMiss {
                    prompt_hash: hash.clone(),
                })?;
                let (raw, attempts) = self.call_with_retries(endpoint, &bundle)?;
                if let Some(cache) = &self.cache {
                    cache.put(&hash, &raw)?;
                }
                (raw, ResponseSource::Endpoint, attempts)
            }
        };

        Ok(LlmExchange {
            parsed: parse_response_with(&raw, self.settings.parse_mode),
            bundle,
            prompt_hash: hash,
            raw_response: raw,
            latency: clock.elapsed(),
            attempt_count: attempts,
            cache_hit: source != ResponseSource::Endpoint,
            source,
            started_at,
            finished_at: Utc::now(),
        })
    }

    fn call_with_retries(&self, endpoint: &dyn ChatEndpoint, bundle: &PromptBundle) -> Result<(String, u32), ZeroShotError> {
        let policy = &self.settings.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.limiter.acquire();
            match endpoint.complete(bundle) {
                Ok(raw) => return Ok((raw, attempt)),
                Err(e @ EndpointError::Auth(_)) => return Err(ZeroShotError::AuthFailure(e)),
                Err(e) if !e.is_transient() => return Err(ZeroShotError::Endpoint(e)),
                Err(e) if attempt >= policy.max_attempts => {
                    return Err(ZeroShotError::RetriesExhausted { attempts: attempt, last: e })
                }
                Err(e) => {
                    let delay = policy.delay_after(attempt);
                    log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
            }
        }
    }

    /// Classifies `(id, text)` pairs with up to `concurrency` workers.
    ///
    /// Each finished exchange is appended to `transcript` as soon as it
    /// completes. On the first failure the remaining work is abandoned and
    /// the failure with the lowest input index is returned, tagged with the
    /// tweet id. Results are in input order.
    pub fn classify_batch(
        &self,
        items: &[(String, String)],
        transcript: Option<&TranscriptWriter>,
    ) -> Result<Vec<LlmExchange>, ZeroShotError> {
        let slots: Vec<Mutex<Option<Result<LlmExchange, ZeroShotError>>>> =
            items.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let workers = self.settings.concurrency.min(items.len()).max(1);

        let work = || {
            while !abort.load(Ordering::SeqCst) {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((id, text)) = items.get(i) else { break };
                let mut result = self.classify(text);
                if let (Ok(ex), Some(w)) = (&result, transcript) {
                    if let Err(e) = w.write(&TranscriptRecord::from_exchange(id, ex)) {
                        result = Err(e);
                    }
                }
                if result.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(result);
            }
        };
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });

        let mut out = Vec::with_capacity(items.len());
        for ((id, _), slot) in items.iter().zip(slots) {
            match slot.into_inner().unwrap_or_else(|p| p.into_inner()) {
                Some(Ok(ex)) => out.push(ex),
                Some(Err(e)) => return Err(ZeroShotError::Tweet { id: id.clone(), source: Box::new(e) }),
                // Indices are claimed in order, so an unclaimed slot always
                // follows a failed one.
                None => unreachable!("unclaimed item before any failure"),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::LabelId;
    use std::collections::VecDeque;

    /// Replies from a script, then repeats the fallback; counts calls.
    struct Scripted {
        script: Mutex<VecDeque<Result<String, EndpointError>>>,
        fallback: String,
        calls: AtomicUsize,
    }

    impl Scripted {
        fn new(script: Vec<Result<String, EndpointError>>, fallback: &str) -> Self {
            Scripted {
                script: Mutex::new(script.into()),
                fallback: fallback.into(),
                calls: AtomicUsize::new(0),
            }
        }
        fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl ChatEndpoint for Scripted {
        fn complete(&self, _: &PromptBundle) -> Result<String, EndpointError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.script.lock().unwrap().pop_front().unwrap_or_else(|| Ok(self.fallback.clone()))
        }
    }

    fn settings() -> ZeroShotSettings {
        ZeroShotSettings {
            retry: RetryPolicy::immediate(4),
            ..Default::default()
        }
    }

    #[test]
    fn stubbed_round_trip() {
        let stub = Scripted::new(vec![], "side-effect, rushed");
        let zs = ZeroShotClassifier::new(&stub, settings()).unwrap();
        let ex = zs.classify("They rushed it and now people have clots").unwrap();
        assert_eq!(ex.parsed, [LabelId::SideEffect, LabelId::Rushed].into_iter().collect());
        assert_eq!((ex.attempt_count, ex.cache_hit, ex.source), (1, false, ResponseSource::Endpoint));
        assert_eq!(ex.prompt_hash, prompt_hash(&ex.bundle));
    }

    #[test]
    fn rate_limits_are_retried() {
        let limited = || Err(EndpointError::RateLimited("slow down".into()));
        let stub = Scripted::new(vec![limited(), limited()], "pharma");
        let zs = ZeroShotClassifier::new(&stub, settings()).unwrap();
        let ex = zs.classify("big pharma profits").unwrap();
        assert_eq!(ex.attempt_count, 3);
        assert_eq!(ex.parsed, LabelSet::single(LabelId::Pharma));
    }

    #[test]
    fn retries_exhausted_carries_last_cause() {
        let stub = Scripted::new(
            vec![
                Err(EndpointError::RateLimited("a".into())),
                Err(EndpointError::Server { status: 502, message: "b".into() }),
                Err(EndpointError::Timeout("c".into())),
                Err(EndpointError::Timeout("d".into())),
            ],
            "pharma",
        );
        let zs = ZeroShotClassifier::new(&stub, settings()).unwrap();
        match zs.classify("x") {
            Err(ZeroShotError::RetriesExhausted { attempts: 4, last }) => {
                assert_eq!(last, EndpointError::Timeout("d".into()))
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(stub.calls(), 4);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let stub = Scripted::new(vec![Err(EndpointError::Auth("bad key".into()))], "pharma");
        let zs = ZeroShotClassifier::new(&stub, settings()).unwrap();
        assert!(matches!(zs.classify("x"), Err(ZeroShotError::AuthFailure(_))));
        assert_eq!(stub.calls(), 1);
    }

    #[test]
    fn cache_hit_skips_endpoint() {
        let stub = Scripted::new(vec![], "country");
        let zs = ZeroShotClassifier::new(&stub, settings()).unwrap().with_cache(ResponseCache::memory());
        let first = zs.classify("made in china").unwrap();
        let second = zs.classify("made in china").unwrap();
        assert_eq!(stub.calls(), 1);
        assert!(second.cache_hit && !first.cache_hit);
        assert_eq!(second.attempt_count, 0);
        assert_eq!(second.raw_response, first.raw_response);
    }

    #[test]
    fn offline_replay_and_miss() {
        let stub = Scripted::new(vec![], "religious");
        let live = ZeroShotClassifier::new(&stub, settings()).unwrap();
        let ex = live.classify("god will protect me").unwrap();
        let record = TranscriptRecord::from_exchange("7", &ex);

        let offline = ZeroShotClassifier::offline(settings())
            .unwrap()
            .with_replay(ReplayLog::from_records([&record]));
        let replayed = offline.classify("god will protect me").unwrap();
        assert_eq!(replayed.parsed, ex.parsed);
        assert_eq!(replayed.source, ResponseSource::Replay);
        assert!(matches!(offline.classify("something else"), Err(ZeroShotError::ReplayMiss { .. })));
        assert_eq!(stub.calls(), 1);
    }

    #[test]
    fn empty_tweet_is_rejected() {
        let stub = Scripted::new(vec![], "none");
        let zs = ZeroShotClassifier::new(&stub, settings()).unwrap();
        assert!(matches!(zs.classify("   "), Err(ZeroShotError::EmptyTweet)));
        assert_eq!(stub.calls(), 0);
    }

    /// Fails permanently for tweets containing "boom".
    struct Picky {
        calls: AtomicUsize,
    }

    impl ChatEndpoint for Picky {
        fn complete(&self, b: &PromptBundle) -> Result<String, EndpointError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if b.user_text.contains("boom") {
                Err(EndpointError::Server { status: 500, message: "boom".into() })
            } else {
                Ok("political".into())
            }
        }
    }

    #[test]
    fn batch_keeps_order_and_reports_first_failure() {
        let stub = Picky { calls: AtomicUsize::new(0) };
        let zs = ZeroShotClassifier::new(&stub, settings()).unwrap();
        let items: Vec<(String, String)> = (0..20).map(|i| (format!("t{i}"), format!("tweet number {i}"))).collect();
        let out = zs.classify_batch(&items, None).unwrap();
        assert_eq!(out.len(), 20);
        for (i, ex) in out.iter().enumerate() {
            assert!(ex.bundle.user_text.contains(&format!("tweet number {i}\n")));
        }

        let mut bad = items.clone();
        bad[5].1 = "boom".into();
        bad[9].1 = "boom again".into();
        match zs.classify_batch(&bad, None) {
            Err(ZeroShotError::Tweet { id, source }) => {
                assert_eq!(id, "t5");
                assert!(matches!(*source, ZeroShotError::RetriesExhausted { attempts: 4, .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn settings_validation() {
        assert!(ZeroShotSettings { concurrency: 0, ..Default::default() }.validate().is_err());
        assert!(ZeroShotSettings { model_name: " ".into(), ..Default::default() }.validate().is_err());
        let retry = RetryPolicy { max_attempts: 0, ..Default::default() };
        assert!(ZeroShotSettings { retry, ..Default::default() }.validate().is_err());
        ZeroShotSettings::default().validate().unwrap();
    }
}
