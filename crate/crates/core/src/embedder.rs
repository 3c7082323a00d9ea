//! Token and span representations.
//!
//! The boundary head consumes one vector per token; the span classifier
//! consumes one vector per candidate span. Both come from an [`Embedder`].
//! Two implementations ship with the crate:
//!
//! * [`HashedEmbedder`] projects each token's surface form and its
//!   neighbours into `dim` dimensions with signed feature hashing. It needs
//!   no external resources and is fully deterministic.
//! * [`FileEmbedder`] serves vectors precomputed by an external encoder and
//!   stored in a [PCXE](crate::pcxe) file, keyed by sentence uid.
//!
//! A span vector is the concatenation `[mean(rows start..=end), row(start),
//! row(end)]`, so its dimension is always `3 * dim`.

use std::collections::HashMap;
use std::fs::File;
use std::hash::Hasher;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::pcxe::{PcxeFile, PcxeRecord};

/// One row per token, `dim` columns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len(),
            });
        }
        Ok(TokenMatrix { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        TokenMatrix::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Summary vector of rows `start..=end`: mean, first row, last row.
    pub fn pool_span(&self, start: usize, end: usize) -> Result<SpanVector> {
        if start > end || end >= self.rows() {
            return Err(Error::SpanOutOfRange {
                start,
                end,
                len: self.rows(),
            });
        }
        let d = self.dim;
        let mut values = vec![0.0; 3 * d];
        for row in self.iter_rows().skip(start).take(end - start + 1) {
            for (acc, v) in values[..d].iter_mut().zip(row) {
                *acc += v;
            }
        }
        let width = (end - start + 1) as f64;
        values[..d].iter_mut().for_each(|v| *v /= width);
        values[d..2 * d].copy_from_slice(self.row(start));
        values[2 * d..].copy_from_slice(self.row(end));
        Ok(SpanVector(values))
    }
}

/// Fixed-length feature vector for one span.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanVector(pub Vec<f64>);

impl SpanVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Source of contextual token representations.
pub trait Embedder: Send + Sync {
    /// Width of each token row.
    fn dim(&self) -> usize;

    fn encode_tokens(&self, sentence: &Sentence) -> Result<TokenMatrix>;

    /// Width of span vectors, `3 * dim()`.
    fn span_dim(&self) -> usize {
        3 * self.dim()
    }

    fn encode_span(&self, sentence: &Sentence, start: usize, end: usize) -> Result<SpanVector> {
        if start > end || end >= sentence.len() {
            return Err(Error::SpanOutOfRange {
                start,
                end,
                len: sentence.len(),
            });
        }
        self.encode_tokens(sentence)?.pool_span(start, end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedConfig {
    pub dim: usize,
    pub seed: u64,
    /// Neighbours on each side folded into a token's row; 0 disables context.
    pub window: usize,
}

impl Default for HashedConfig {
    fn default() -> Self {
        HashedConfig {
            dim: 256,
            seed: 0,
            window: 1,
        }
    }
}

/// Serializable description of an embedder, stored next to trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderConfig {
    Hashed(HashedConfig),
    File { path: PathBuf },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashed(HashedConfig::default())
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        Ok(match self {
            EmbedderConfig::Hashed(c) => Box::new(HashedEmbedder::new(*c)?),
            EmbedderConfig::File { path } => Box::new(FileEmbedder::open(path)?),
        })
    }
}

/// Signed feature hashing over a token and its neighbours.
///
/// Column 0 is reserved for a constant bias feature and every other feature
/// hashes into columns `1..dim`, so no row can cancel to zero and every row
/// has unit L2 norm.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    config: HashedConfig,
}

const CONTEXT_WEIGHT: f64 = 0.5;

impl HashedEmbedder {
    pub fn new(config: HashedConfig) -> Result<Self> {
        if config.dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "hashed embedder needs dim >= 2, got {}",
                config.dim
            )));
        }
        Ok(HashedEmbedder { config })
    }

    pub fn config(&self) -> HashedConfig {
        self.config
    }

    fn add_feature(&self, row: &mut [f64], feature: &str, weight: f64) {
        let mut h = FnvHasher::default();
        h.write_u64(self.config.seed);
        h.write(feature.as_bytes());
        let hash = h.finish();
        let slot = 1 + (hash % (self.config.dim as u64 - 1)) as usize;
        let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
        row[slot] += sign * weight;
    }
}

impl Embedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn encode_tokens(&self, sentence: &Sentence) -> Result<TokenMatrix> {
        let tokens = sentence.tokens();
        let n = tokens.len();
        let d = self.config.dim;
        let mut data = vec![0.0; n * d];
        for (i, row) in data.chunks_exact_mut(d).enumerate() {
            row[0] = 1.0;
            self.add_feature(row, &format!("w={}", tokens[i]), 1.0);
            for k in 1..=self.config.window {
                let left = i.checked_sub(k).map_or("<s>", |j| tokens[j].as_str());
                let right = tokens.get(i + k).map_or("</s>", String::as_str);
                self.add_feature(row, &format!("l{k}={left}"), CONTEXT_WEIGHT);
                self.add_feature(row, &format!("r{k}={right}"), CONTEXT_WEIGHT);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
        }
        TokenMatrix::new(d, data)
    }
}

/// Serves token vectors loaded from a PCXE file.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    dim: usize,
    records: HashMap<String, PcxeRecord>,
}

impl FileEmbedder {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        Self::from_pcxe(PcxeFile::read(BufReader::new(file))?)
    }

    pub fn from_pcxe(file: PcxeFile) -> Result<Self> {
        if file.dim == 0 {
            return Err(Error::InvalidEmbeddingFile("dimension is zero".into()));
        }
        Ok(FileEmbedder {
            dim: file.dim,
            records: file.into_map(),
        })
    }

    /// Raw stored vectors for `uid`, exactly as written.
    pub fn raw(&self, uid: &str) -> Option<&[f32]> {
        self.records.get(uid).map(|r| r.values.as_slice())
    }
}

impl Embedder for FileEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_tokens(&self, sentence: &Sentence) -> Result<TokenMatrix> {
        let record = self
            .records
            .get(sentence.uid())
            .ok_or_else(|| Error::UnknownUid(sentence.uid().to_string()))?;
        if record.tokens != sentence.len() {
            return Err(Error::TokenCountMismatch {
                uid: sentence.uid().to_string(),
                expected: sentence.len(),
                found: record.tokens,
            });
        }
        let data = record.values.iter().map(|&v| f64::from(v)).collect();
        TokenMatrix::new(self.dim, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn sentence(words: &[&str]) -> Sentence {
        Sentence::new("s", words.iter().map(|w| w.to_string()).collect(), vec![]).unwrap()
    }

    fn hashed(dim: usize, window: usize) -> HashedEmbedder {
        HashedEmbedder::new(HashedConfig {
            dim,
            seed: 3,
            window,
        })
        .unwrap()
    }

    #[test]
    fn shape_and_determinism() {
        let e = hashed(64, 1);
        let s = sentence(&["a", "b", "c", "d", "e"]);
        let h1 = e.encode_tokens(&s).unwrap();
        let h2 = e.encode_tokens(&s).unwrap();
        assert_eq!(h1.rows(), 5);
        assert_eq!(h1.dim(), 64);
        assert_eq!(h1, h2);
    }

    #[test]
    fn rows_have_unit_norm() {
        let e = hashed(2, 2);
        let s = sentence(&["x", "y", "x", "y"]);
        for row in e.encode_tokens(&s).unwrap().iter_rows() {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn context_changes_rows_only_when_enabled() {
        let a = sentence(&["p", "x", "q"]);
        let b = sentence(&["r", "x", "t"]);
        let no_ctx = hashed(32, 0);
        assert_eq!(
            no_ctx.encode_tokens(&a).unwrap().row(1),
            no_ctx.encode_tokens(&b).unwrap().row(1)
        );
        let ctx = hashed(32, 1);
        assert_ne!(
            ctx.encode_tokens(&a).unwrap().row(1),
            ctx.encode_tokens(&b).unwrap().row(1)
        );
    }

    #[test]
    fn single_token_span() {
        let e = hashed(16, 1);
        let s = sentence(&["a", "b", "c"]);
        let h = e.encode_tokens(&s).unwrap();
        let v = e.encode_span(&s, 1, 1).unwrap();
        assert_eq!(v.dim(), 48);
        for seg in v.0.chunks_exact(16) {
            assert_eq!(seg, h.row(1));
        }
    }

    #[test]
    fn full_sentence_span_is_sentence_mean() {
        let e = hashed(8, 1);
        let s = sentence(&["a", "b", "c", "d"]);
        let h = e.encode_tokens(&s).unwrap();
        let v = e.encode_span(&s, 0, 3).unwrap();
        for j in 0..8 {
            let mean = (0..4).map(|i| h.row(i)[j]).sum::<f64>() / 4.0;
            assert!((v.0[j] - mean).abs() < 1e-12);
        }
        assert_eq!(&v.0[8..16], h.row(0));
        assert_eq!(&v.0[16..], h.row(3));
    }

    #[test]
    fn span_is_local_without_context() {
        let e = hashed(32, 0);
        let a = sentence(&["u", "v", "a", "b", "w", "x"]);
        let b = sentence(&["x", "w", "a", "b", "v", "u"]);
        assert_eq!(
            e.encode_span(&a, 2, 3).unwrap(),
            e.encode_span(&b, 2, 3).unwrap()
        );
    }

    #[test]
    fn span_out_of_range() {
        let e = hashed(8, 1);
        let s = sentence(&["a", "b"]);
        assert!(matches!(
            e.encode_span(&s, 1, 2),
            Err(Error::SpanOutOfRange { .. })
        ));
        assert!(e.encode_span(&s, 1, 0).is_err());
    }

    #[test]
    fn file_embedder_lookup() {
        let mut f = PcxeFile::new(2);
        f.push("s", 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let e = FileEmbedder::from_pcxe(f).unwrap();
        let s = sentence(&["a", "b"]);
        let h = e.encode_tokens(&s).unwrap();
        assert_eq!(h.row(1), &[f64::from(0.3f32), f64::from(0.4f32)]);

        let other = Sentence::new("missing", vec!["a".into()], vec![]).unwrap();
        let err = e.encode_tokens(&other).unwrap_err();
        assert!(err.to_string().contains("unknown sentence uid"));

        let short = sentence(&["a"]);
        assert!(matches!(
            e.encode_tokens(&short),
            Err(Error::TokenCountMismatch { .. })
        ));
    }

    #[test]
    fn config_serialization() {
        let c = EmbedderConfig::default();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, r#"{"kind":"hashed","dim":256,"seed":0,"window":1}"#);
        let back: EmbedderConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }
}
