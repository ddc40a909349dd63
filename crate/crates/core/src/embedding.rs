//! Question encoders and PCA projection to the working dimension.

use std::hash::Hasher;
use std::time::Duration;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{endpoint, HttpError, JsonClient};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding service: {0}")]
    Service(#[from] HttpError),
    #[error("embedding service returned {got} vectors for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
    #[error("vector {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("vector {index} has a non-finite entry")]
    NonFinite { index: usize },
    #[error("all vectors are identical; no variance to project")]
    DegenerateData,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Maps text to fixed-length vectors. Implementations must be deterministic.
pub trait Encoder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

pub fn embed_question(encoder: &dyn Encoder, text: &str) -> Result<Vec<f64>, EmbedError> {
    let mut out = encoder.encode_batch(&[text])?;
    out.pop().ok_or(EmbedError::CountMismatch {
        expected: 1,
        got: 0,
    })
}

/// Embeds many texts, checking dimension and finiteness of every reply.
pub fn embed_all(encoder: &dyn Encoder, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
    let out = encoder.encode_batch(texts)?;
    if out.len() != texts.len() {
        return Err(EmbedError::CountMismatch {
            expected: texts.len(),
            got: out.len(),
        });
    }
    for (index, v) in out.iter().enumerate() {
        if v.len() != encoder.dim() {
            return Err(EmbedError::DimensionMismatch {
                index,
                expected: encoder.dim(),
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite { index });
        }
    }
    Ok(out)
}

/// Hashed bag of words: lowercase whitespace tokens, FNV-1a modulo `dim`,
/// L2-normalised. Needs no model and no network.
#[derive(Debug, Clone)]
pub struct BuiltinEncoder {
    dim: usize,
}

impl BuiltinEncoder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::InvalidArgument("dim must be positive".into()));
        }
        Ok(Self { dim })
    }

    fn encode_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in text.to_lowercase().split_whitespace() {
            let mut h = fnv::FnvHasher::default();
            h.write(token.as_bytes());
            v[(h.finish() % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Default for BuiltinEncoder {
    fn default() -> Self {
        Self {
            dim: Self::DEFAULT_DIM,
        }
    }
}

impl Encoder for BuiltinEncoder {
    fn name(&self) -> &str {
        "builtin-fnv"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.encode_one(t)).collect())
    }
}

/// Client for an external embedding endpoint.
///
/// Sends `POST {base_url}/embeddings` with `{"input": [...]}` and expects
/// `{"embeddings": [[...], ...]}` in input order.
#[derive(Debug, Clone)]
pub struct HttpEncoder {
    base_url: String,
    dim: usize,
    batch_size: usize,
    api_key: Option<String>,
    client: JsonClient,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedReply {
    embeddings: Vec<Vec<f64>>,
}

impl HttpEncoder {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, dim: usize) -> Self {
        Self {
            base_url: base_url.into(),
            dim,
            batch_size: 64,
            client: JsonClient::new(Duration::from_secs(60), api_key.clone()),
            api_key,
        }
    }

    /// Reads `EMBED_BASE_URL` and `EMBED_API_KEY`.
    pub fn from_env(dim: usize) -> Result<Self, EmbedError> {
        let base = std::env::var("EMBED_BASE_URL")
            .map_err(|_| EmbedError::InvalidArgument("EMBED_BASE_URL is not set".into()))?;
        Ok(Self::new(base, std::env::var("EMBED_API_KEY").ok(), dim))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.client = JsonClient::new(timeout, self.api_key.clone());
        self
    }
}

/// Parses an embedding service reply body.
pub fn parse_embedding_reply(body: &str, expected: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    let reply: EmbedReply =
        serde_json::from_str(body).map_err(|e| HttpError::Malformed(e.to_string()))?;
    if reply.embeddings.len() != expected {
        return Err(EmbedError::CountMismatch {
            expected,
            got: reply.embeddings.len(),
        });
    }
    Ok(reply.embeddings)
}

impl Encoder for HttpEncoder {
    fn name(&self) -> &str {
        "http"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let url = endpoint(&self.base_url, "embeddings");
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let value = self.client.post(&url, &EmbedRequest { input: chunk })?;
            out.extend(parse_embedding_reply(&value.to_string(), chunk.len())?);
        }
        Ok(out)
    }
}

/// Principal axes fitted to a set of vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit axes, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each kept axis.
    pub explained: Vec<f64>,
    /// Variance along the dropped axes, summed.
    pub residual: f64,
}

impl Pca {
    /// Fits `target_d` axes by exact eigendecomposition of the sample
    /// covariance. Each axis is oriented to have a non-negative dot product
    /// with a reference direction drawn from `seed`.
    pub fn fit(vectors: &[Vec<f64>], target_d: usize, seed: u64) -> Result<Self, EmbedError> {
        let n = vectors.len();
        if n < 2 {
            return Err(EmbedError::InvalidArgument("need at least 2 vectors".into()));
        }
        let dim = vectors[0].len();
        for (index, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(EmbedError::DimensionMismatch {
                    index,
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite { index });
            }
        }
        if target_d == 0 || target_d > dim {
            return Err(EmbedError::InvalidArgument(format!(
                "target dimension {target_d} outside 1..={dim}"
            )));
        }
        let mut mean = vec![0.0; dim];
        for v in vectors {
            mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let x = DMatrix::from_fn(n, dim, |i, j| vectors[i][j] - mean[j]);
        let cov = (x.transpose() * &x) / (n - 1) as f64;
        let total: f64 = cov.diagonal().sum();
        if total <= 0.0 {
            return Err(EmbedError::DegenerateData);
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut components = Vec::with_capacity(target_d);
        let mut explained = Vec::with_capacity(target_d);
        for &k in &order[..target_d] {
            let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let d: f64 = axis.iter().zip(&reference).map(|(a, r)| a * r).sum();
            if d < 0.0 {
                axis.iter_mut().for_each(|a| *a = -*a);
            }
            components.push(axis);
            explained.push(eig.eigenvalues[k].max(0.0));
        }
        let residual = order[target_d..]
            .iter()
            .map(|&k| eig.eigenvalues[k].max(0.0))
            .sum();
        Ok(Pca {
            mean,
            components,
            explained,
            residual,
        })
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>, EmbedError> {
        if v.len() != self.mean.len() {
            return Err(EmbedError::DimensionMismatch {
                index: 0,
                expected: self.mean.len(),
                got: v.len(),
            });
        }
        let centred = DVector::from_iterator(v.len(), v.iter().zip(&self.mean).map(|(x, m)| x - m));
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(centred.iter()).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Projects `vectors` onto their top `target_d` principal axes.
pub fn reduce_dimension(
    vectors: &[Vec<f64>],
    target_d: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, EmbedError> {
    let pca = Pca::fit(vectors, target_d, seed)?;
    vectors.iter().map(|v| pca.project(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fnv1a(bytes: &[u8]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    #[test]
    fn builtin_matches_hand_hash() {
        let enc = BuiltinEncoder::new(8).unwrap();
        let v = embed_question(&enc, "show all singers").unwrap();
        let mut expected = [0.0f64; 8];
        for t in ["show", "all", "singers"] {
            expected[(fnv1a(t.as_bytes()) % 8) as usize] += 1.0;
        }
        let norm = expected.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, e) in v.iter().zip(expected) {
            assert!((a - e / norm).abs() < 1e-15);
        }
    }

    #[test]
    fn builtin_trivial_cases() {
        let enc = BuiltinEncoder::new(16).unwrap();
        assert_eq!(embed_question(&enc, "").unwrap(), vec![0.0; 16]);
        assert_eq!(
            embed_question(&enc, "a a").unwrap(),
            embed_question(&enc, "A").unwrap()
        );
        assert!(BuiltinEncoder::new(0).is_err());
    }

    fn pairwise(vs: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                out.push(
                    vs[i].iter().zip(&vs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
                );
            }
        }
        out
    }

    #[test]
    fn full_rank_projection_is_rigid() {
        let vs = vec![vec![0.0, 0.0], vec![3.0, 1.0], vec![-1.0, 2.0], vec![0.5, -4.0]];
        let out = reduce_dimension(&vs, 2, 1).unwrap();
        for (a, b) in pairwise(&vs).iter().zip(pairwise(&out)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn collinear_to_one_dimension() {
        let vs: Vec<Vec<f64>> = [0.0, 1.0, 2.5, -3.0]
            .iter()
            .map(|t| vec![1.0 + t, 2.0 - 2.0 * t, 0.5 * t])
            .collect();
        let out = reduce_dimension(&vs, 1, 0).unwrap();
        assert!(out.iter().all(|v| v.len() == 1));
        for (a, b) in pairwise(&vs).iter().zip(pairwise(&out)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    /// Cyclic Jacobi eigenvalue iteration, used as an independent oracle.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-22 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    #[test]
    fn residual_variance_matches_dropped_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let vs: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..16).map(|k| rng.random_range(-1.0..1.0) * (1.0 + k as f64)).collect())
            .collect();
        let n = vs.len() as f64;
        let mean: Vec<f64> = (0..16).map(|j| vs.iter().map(|v| v[j]).sum::<f64>() / n).collect();
        let cov: Vec<Vec<f64>> = (0..16)
            .map(|a| {
                (0..16)
                    .map(|b| vs.iter().map(|v| (v[a] - mean[a]) * (v[b] - mean[b])).sum::<f64>() / (n - 1.0))
                    .collect()
            })
            .collect();
        let ev = jacobi_eigenvalues(cov);
        let dropped: f64 = ev[4..].iter().sum();

        let pca = Pca::fit(&vs, 4, 7).unwrap();
        // Residual variance measured from reconstruction error.
        let mut resid = 0.0;
        for v in &vs {
            let p = pca.project(v).unwrap();
            let mut recon = pca.mean.clone();
            for (c, w) in pca.components.iter().zip(&p) {
                recon.iter_mut().zip(c).for_each(|(r, ci)| *r += w * ci);
            }
            resid += v.iter().zip(&recon).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        resid /= n - 1.0;
        assert!((resid - dropped).abs() < 1e-6, "{resid} vs {dropped}");
        assert!((pca.residual - dropped).abs() < 1e-6);
        for (e, k) in pca.explained.iter().zip(&ev) {
            assert!((e - k).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_and_invalid() {
        let same = vec![vec![1.0, 2.0]; 3];
        assert!(matches!(reduce_dimension(&same, 1, 0), Err(EmbedError::DegenerateData)));
        let vs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(reduce_dimension(&vs, 3, 0).is_err());
        assert!(reduce_dimension(&vs, 0, 0).is_err());
        assert!(reduce_dimension(&vs[..1], 1, 0).is_err());
    }

    #[test]
    fn sign_convention_depends_only_on_seed() {
        let vs = vec![vec![0.0, 0.0, 1.0], vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 1.0]];
        assert_eq!(reduce_dimension(&vs, 2, 5).unwrap(), reduce_dimension(&vs, 2, 5).unwrap());
    }

    #[test]
    fn http_encoder_round_trip() {
        let (url, rx) = crate::http::testserver::serve(vec![(
            200,
            r#"{"embeddings": [[1.0, 0.0], [0.0, 1.0]]}"#.into(),
        )]);
        let enc = HttpEncoder::new(url, Some("k".into()), 2);
        let out = embed_all(&enc, &["a", "b"]).unwrap();
        assert_eq!(out, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let sent: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["input"], serde_json::json!(["a", "b"]));
    }

    #[test]
    fn http_encoder_errors() {
        let (url, _rx) = crate::http::testserver::serve(vec![
            (503, "busy".into()),
            (200, r#"{"vectors": []}"#.into()),
            (200, r#"{"embeddings": [[1.0]]}"#.into()),
        ]);
        let enc = HttpEncoder::new(url, None, 2);
        assert!(matches!(
            embed_question(&enc, "x"),
            Err(EmbedError::Service(HttpError::Status { status: 503, .. }))
        ));
        assert!(matches!(
            embed_question(&enc, "x"),
            Err(EmbedError::Service(HttpError::Malformed(_)))
        ));
        assert!(matches!(
            embed_all(&enc, &["x"]),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }
}
