//! Text encoder backends.
//!
//! Two implementations live here:
//!
//! * [`HashEncoder`]: a tiny deterministic encoder. Tokens are hashed into a
//!   table of learnable vectors, mean-pooled, and passed through a fixed
//!   square projection. It is cheap enough to fine-tune in tests.
//! * [`RemoteEncoder`]: a pretrained checkpoint served over HTTP by an
//!   embedding server speaking the text-embeddings-inference `/embed`
//!   protocol. The server owns tokenization, truncation and pooling, so this
//!   backend can only be used with a frozen encoder.

use std::time::Duration;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{known_backend, EncoderBackendSpec, Pooling, HASH_TEST_BACKEND};
use super::FinetuneError;

/// Turns text into fixed-width sentence embeddings.
pub trait Encoder: Send + Sync {
    fn spec(&self) -> &EncoderBackendSpec;
    fn pooling(&self) -> Pooling;
    fn encode(&self, text: &str) -> Result<Array1<f64>, FinetuneError>;
}

/// Lowercased alphanumeric word tokens, truncated to `max_tokens`.
pub fn tokenize(text: &str, max_tokens: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(max_tokens)
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

pub const HASH_BUCKETS: usize = 4096;
/// Magnitude of a token feature. Single-token embeddings then have a norm
/// comparable to the pooled output of a large pretrained encoder.
pub const TOKEN_SCALE: f64 = 32.0;
const HASH_INIT_SEED: u64 = 0x7661_786b_6974;

#[derive(Debug, Clone, PartialEq)]
pub struct HashEncoder {
    spec: EncoderBackendSpec,
    /// One learned vector per hash bucket (`buckets × dim`).
    pub(crate) table: Array2<f64>,
    /// Fixed square output projection (`dim × dim`).
    pub(crate) projection: Array2<f64>,
}

/// Bucket ids of one encoding, needed to backpropagate into the table.
#[derive(Debug, Clone)]
pub struct HashTrace {
    buckets: Vec<usize>,
}

/// Token-table gradients, one entry per distinct bucket.
#[derive(Debug, Clone)]
pub struct HashGrads {
    pub rows: Vec<(usize, Array1<f64>)>,
}

impl HashEncoder {
    /// The bundled test backend: 16 dimensions, 512 tokens, 4096 buckets.
    pub fn test_backend() -> Self {
        let spec = known_backend(HASH_TEST_BACKEND).expect("registered");
        Self::with_shape(spec, HASH_BUCKETS, HASH_INIT_SEED)
    }

    /// Builds a hash encoder. Each bucket row starts as a single signed
    /// coordinate of magnitude [`TOKEN_SCALE`]; the projection is a fixed
    /// signed permutation.
    pub fn with_shape(spec: EncoderBackendSpec, buckets: usize, seed: u64) -> Self {
        let dim = spec.embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = Array2::zeros((buckets, dim));
        for r in 0..buckets {
            let d = rng.random_range(0..dim);
            table[(r, d)] = if rng.random_bool(0.5) { TOKEN_SCALE } else { -TOKEN_SCALE };
        }
        let mut perm: Vec<usize> = (0..dim).collect();
        perm.shuffle(&mut rng);
        let mut projection = Array2::zeros((dim, dim));
        for (i, &j) in perm.iter().enumerate() {
            projection[(i, j)] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        HashEncoder { spec, table, projection }
    }

    pub(crate) fn from_parts(spec: EncoderBackendSpec, table: Array2<f64>, projection: Array2<f64>) -> Result<Self, FinetuneError> {
        let dim = spec.embedding_dim;
        if table.ncols() != dim || table.nrows() == 0 || projection.dim() != (dim, dim) {
            return Err(FinetuneError::Corrupt(format!(
                "hash encoder shapes {:?}/{:?} do not match dim {dim}",
                table.dim(),
                projection.dim()
            )));
        }
        Ok(HashEncoder { spec, table, projection })
    }

    pub fn buckets(&self) -> usize {
        self.table.nrows()
    }

    fn bucket_ids(&self, text: &str) -> Result<Vec<usize>, FinetuneError> {
        let tokens = tokenize(text, self.spec.max_input_tokens);
        if tokens.is_empty() {
            return Err(FinetuneError::TokenizationFailure(format!(
                "no tokens in {:?}",
                text.chars().take(40).collect::<String>()
            )));
        }
        let n = self.buckets() as u64;
        Ok(tokens.iter().map(|t| (fnv1a(t.as_bytes()) % n) as usize).collect())
    }

    /// Encodes and keeps what [`backward`](Self::backward) needs.
    pub fn encode_traced(&self, text: &str) -> Result<(Array1<f64>, HashTrace), FinetuneError> {
        let buckets = self.bucket_ids(text)?;
        let mut pooled = Array1::zeros(self.spec.embedding_dim);
        for &b in &buckets {
            pooled += &self.table.row(b);
        }
        pooled /= buckets.len() as f64;
        let embedding = self.projection.dot(&pooled);
        Ok((embedding, HashTrace { buckets }))
    }

    /// Token-table gradients of a scalar loss, given its gradient w.r.t. the
    /// embedding. The projection is fixed and gets none.
    pub fn backward(&self, trace: &HashTrace, grad_embedding: &Array1<f64>) -> HashGrads {
        let dim = self.spec.embedding_dim;
        let grad_pooled = self.projection.t().dot(grad_embedding);
        let scale = 1.0 / trace.buckets.len() as f64;
        let mut rows: Vec<(usize, Array1<f64>)> = Vec::new();
        let mut sorted = trace.buckets.clone();
        sorted.sort_unstable();
        for chunk in sorted.chunk_by(|a, b| a == b) {
            let mut g = Array1::zeros(dim);
            g.scaled_add(scale * chunk.len() as f64, &grad_pooled);
            rows.push((chunk[0], g));
        }
        HashGrads { rows }
    }
}

impl Encoder for HashEncoder {
    fn spec(&self) -> &EncoderBackendSpec {
        &self.spec
    }

    fn pooling(&self) -> Pooling {
        Pooling::Mean
    }

    fn encode(&self, text: &str) -> Result<Array1<f64>, FinetuneError> {
        self.encode_traced(text).map(|(e, _)| e)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    inputs: &'a str,
    truncate: bool,
}

/// A checkpoint served by an external embedding server.
///
/// The endpoint is not persisted in checkpoints; after loading one, call
/// [`connect`](Self::connect) before encoding.
#[derive(Debug, Clone)]
pub struct RemoteEncoder {
    spec: EncoderBackendSpec,
    endpoint: Option<String>,
    timeout: Duration,
}

impl PartialEq for RemoteEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl RemoteEncoder {
    pub fn new(spec: EncoderBackendSpec, endpoint: Option<String>) -> Self {
        RemoteEncoder {
            spec,
            endpoint,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn connect(&mut self, endpoint: impl Into<String>) {
        self.endpoint = Some(endpoint.into());
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbedResponse {
    Batch(Vec<Vec<f64>>),
    Single(Vec<f64>),
}

impl Encoder for RemoteEncoder {
    fn spec(&self) -> &EncoderBackendSpec {
        &self.spec
    }

    fn pooling(&self) -> Pooling {
        Pooling::BackendPooled
    }

    fn encode(&self, text: &str) -> Result<Array1<f64>, FinetuneError> {
        let Some(base) = &self.endpoint else {
            return Err(FinetuneError::BackendUnavailable(format!(
                "no embedding server configured for `{}`",
                self.spec.model_name
            )));
        };
        if text.trim().is_empty() {
            return Err(FinetuneError::TokenizationFailure("empty text".into()));
        }
        let url = format!("{}/embed", base.trim_end_matches('/'));
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let unavailable = |e: ureq::Error| FinetuneError::BackendUnavailable(format!("{url}: {e}"));
        let response: EmbedResponse = agent
            .post(&url)
            .send_json(EmbedRequest { inputs: text, truncate: true })
            .map_err(unavailable)?
            .body_mut()
            .read_json()
            .map_err(unavailable)?;
        let values = match response {
            EmbedResponse::Batch(mut rows) if rows.len() == 1 => rows.remove(0),
            EmbedResponse::Single(row) => row,
            EmbedResponse::Batch(rows) => {
                return Err(FinetuneError::BackendUnavailable(format!(
                    "expected one embedding, server returned {}",
                    rows.len()
                )))
            }
        };
        if values.len() != self.spec.embedding_dim {
            return Err(FinetuneError::DimensionMismatch {
                expected: self.spec.embedding_dim,
                found: values.len(),
            });
        }
        Ok(Array1::from(values))
    }
}

/// An encoder together with its trainable weights, if any.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Hash(HashEncoder),
    Remote(RemoteEncoder),
}

impl Backend {
    /// Resolves a backend by name. Every name except the hash test backend
    /// needs an embedding server URL to encode.
    pub fn resolve(name: &str, embedding_server: Option<&str>) -> Result<Backend, FinetuneError> {
        if name == HASH_TEST_BACKEND {
            return Ok(Backend::Hash(HashEncoder::test_backend()));
        }
        let spec = known_backend(name)
            .ok_or_else(|| FinetuneError::BackendUnavailable(format!("unknown backend `{name}`")))?;
        Ok(Backend::Remote(RemoteEncoder::new(
            spec,
            embedding_server.map(str::to_string),
        )))
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Backend::Hash(_))
    }
}

impl Encoder for Backend {
    fn spec(&self) -> &EncoderBackendSpec {
        match self {
            Backend::Hash(h) => h.spec(),
            Backend::Remote(r) => r.spec(),
        }
    }

    fn pooling(&self) -> Pooling {
        match self {
            Backend::Hash(h) => h.pooling(),
            Backend::Remote(r) => r.pooling(),
        }
    }

    fn encode(&self, text: &str) -> Result<Array1<f64>, FinetuneError> {
        match self {
            Backend::Hash(h) => h.encode(text),
            Backend::Remote(r) => r.encode(text),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finetune::HASH_TEST_DIM;

    #[test]
    fn tokenizer_lowercases_and_truncates() {
        assert_eq!(tokenize("Side-effects, DEATHS!", 10), vec!["side", "effects", "deaths"]);
        assert_eq!(tokenize("a b c d", 2), vec!["a", "b"]);
        assert!(tokenize("!!! ...", 10).is_empty());
    }

    #[test]
    fn test_backend_shape_and_determinism() {
        let enc = HashEncoder::test_backend();
        assert_eq!(enc.spec().embedding_dim, HASH_TEST_DIM);
        let a = enc.encode("the vaccine was rushed").unwrap();
        let b = HashEncoder::test_backend().encode("the vaccine was rushed").unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, b);
        assert_ne!(a, enc.encode("big pharma profits").unwrap());
    }

    #[test]
    fn long_text_uses_first_512_tokens() {
        let enc = HashEncoder::test_backend();
        let head: Vec<String> = (0..512).map(|i| format!("w{i}")).collect();
        let tail: Vec<String> = (512..10_000).map(|i| format!("w{i}")).collect();
        let full = format!("{} {}", head.join(" "), tail.join(" "));
        let e_full = enc.encode(&full).unwrap();
        let e_head = enc.encode(&head.join(" ")).unwrap();
        assert_eq!(e_full, e_head);
    }

    #[test]
    fn punctuation_only_fails_tokenization() {
        let enc = HashEncoder::test_backend();
        assert!(matches!(enc.encode("?!"), Err(FinetuneError::TokenizationFailure(_))));
    }

    #[test]
    fn remote_without_server_is_unavailable() {
        let backend = Backend::resolve("bert-large-uncased", None).unwrap();
        assert_eq!(backend.spec().embedding_dim, 1024);
        assert!(!backend.is_trainable());
        assert!(matches!(backend.encode("hi"), Err(FinetuneError::BackendUnavailable(_))));
        assert!(matches!(Backend::resolve("nope", None), Err(FinetuneError::BackendUnavailable(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let spec = EncoderBackendSpec::new("tiny", 4, 16).unwrap();
        let enc = HashEncoder::with_shape(spec, 8, 3);
        let text = "alpha beta alpha gamma";
        let w = Array1::from(vec![0.3, -1.2, 0.7, 2.0]);
        // Scalar loss L = w · encode(text)
        let loss = |e: &HashEncoder| w.dot(&e.encode(text).unwrap());
        let (_, trace) = enc.encode_traced(text).unwrap();
        let grads = enc.backward(&trace, &w);
        let h = 1e-6;
        for (row, g) in &grads.rows {
            for k in 0..4 {
                let mut p = enc.clone();
                p.table[(*row, k)] += h;
                let mut m = enc.clone();
                m.table[(*row, k)] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7, "table[{row},{k}] {fd} vs {}", g[k]);
            }
        }
    }
}
