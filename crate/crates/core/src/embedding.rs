//! Text embedding providers and vector helpers.
//!
//! [`HashEmbedder`] is the offline default: lowercase alphanumeric tokens
//! are feature-hashed into `d` buckets. The bucket is FNV-1a (64-bit) of
//! the token bytes modulo `d`; the sign is the low bit of FNV-1a over the
//! byte `0x01` followed by the token bytes. Both are fixed so vectors are
//! identical across runs and platforms.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed vector file line {line}: {reason}")]
    MalformedVectorFile { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0.0)
    }

    /// Unit L2 norm, or unchanged if all-zero.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.0.iter_mut().for_each(|x| *x /= n);
        }
        self
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.iter().map(|x| x * k).collect())
    }
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn deterministic(&self) -> bool;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    /// Output order follows input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Bucket index of a token in a `d`-dimensional hash embedding.
pub fn hash_bucket(token: &str, d: usize) -> usize {
    (fnv1a(token.bytes()) % d as u64) as usize
}

fn hash_sign(token: &str) -> f64 {
    if fnv1a(std::iter::once(1u8).chain(token.bytes())) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn hash_embed(text: &str, d: usize) -> EmbeddingVector {
    let mut v = vec![0.0; d];
    for t in tokens(text) {
        v[hash_bucket(&t, d)] += hash_sign(&t);
    }
    EmbeddingVector(v).normalized()
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    /// Panics if `dim < 8`.
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 8, "hash embedding dimension must be at least 8");
        Self { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        "hash"
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.trim().is_empty() {
            log::warn!("embedding empty text as the zero vector");
        }
        Ok(hash_embed(text, self.dim))
    }
}

/// Precomputed vectors keyed by exact text, from `text<TAB>v1,v2,...` lines.
/// Unknown texts embed as the zero vector.
#[derive(Debug, Clone)]
pub struct VectorFileProvider {
    dim: usize,
    table: HashMap<String, EmbeddingVector>,
}

impl VectorFileProvider {
    pub fn parse(content: &str) -> Result<Self, EmbeddingError> {
        let mut dim = None;
        let mut table = HashMap::new();
        for (i, line) in content.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| EmbeddingError::MalformedVectorFile {
                line: line_no,
                reason: reason.to_string(),
            };
            let (text, values) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let v: Vec<f64> = values
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(bad("non-finite value"));
            }
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: d,
                        got: v.len(),
                    })
                }
                _ => {}
            }
            table.insert(text.to_string(), EmbeddingVector(v).normalized());
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            table,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| EmbeddingError::ProviderUnavailable(format!("{}: {e}", path.display())))?;
        Self::parse(&content)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingProvider for VectorFileProvider {
    fn name(&self) -> &str {
        "vector-file"
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        match self.table.get(text) {
            Some(v) => Ok(v.clone()),
            None => {
                log::warn!("no precomputed vector for {text:?}; using zeros");
                Ok(EmbeddingVector::zeros(self.dim))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub dimension: usize,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub batch_size: usize,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct RemoteResponse {
    vectors: Vec<Vec<f64>>,
}

/// Posts `{model, texts}` and expects `{vectors}` back in input order.
pub struct RemoteProvider {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteProvider {
    pub fn new(cfg: RemoteConfig) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs.max(1)))
            .build()
            .map_err(|e| EmbeddingError::ProviderUnavailable(e.to_string()))?;
        Ok(Self { cfg, client })
    }

    fn post(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let unavailable = |e: String| EmbeddingError::ProviderUnavailable(e);
        let mut req = self.client.post(&self.cfg.endpoint).json(&RemoteRequest {
            model: &self.cfg.model,
            texts,
        });
        if let Some(var) = &self.cfg.api_key_env {
            let key = std::env::var(var).map_err(|_| unavailable(format!("{var} is not set")))?;
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("HTTP {}", resp.status())));
        }
        let body: RemoteResponse = resp.json().map_err(|e| unavailable(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(unavailable(format!(
                "{} vectors for {} texts",
                body.vectors.len(),
                texts.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.cfg.dimension {
                    Err(EmbeddingError::DimensionMismatch {
                        expected: self.cfg.dimension,
                        got: v.len(),
                    })
                } else {
                    Ok(EmbeddingVector(v).normalized())
                }
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn dimension(&self) -> usize {
        self.cfg.dimension
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        Ok(self.post(&[text.to_string()])?.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.cfg.batch_size.max(1)) {
            out.extend(self.post(chunk)?);
        }
        Ok(out)
    }
}
