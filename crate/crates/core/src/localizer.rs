//! Boundary localization.
//!
//! A linear layer maps every token row to five logits, one per
//! [`PositionLabel`], and a softmax turns them into a distribution. Training
//! minimizes token-level cross-entropy against the gold position labels.
//!
//! Decoding does not take the argmax. A token becomes a start candidate when
//! the probability of `start` or of `both-start-and-end` reaches the
//! threshold `t`, and an end candidate when `end` or `both-start-and-end`
//! does. With `t <= 0.5` a token can be a start even though `inside` is its
//! most likely label, which keeps boundary recall high; the span classifier
//! filters out the extra candidates.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::corpus::PositionLabel;
use crate::embedder::TokenMatrix;
use crate::error::{Error, Result};
use crate::train::{self, LinearLayer, ModelFile, TrainConfig, TrainLog};

pub const NUM_LABELS: usize = 5;
const KIND: &str = "localizer";
const LOG_FLOOR: f64 = 1e-12;

/// Category names in serialization order.
pub fn label_names() -> [&'static str; NUM_LABELS] {
    PositionLabel::ALL.map(PositionLabel::name)
}

/// Per-token distributions over the five position labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryProbMatrix {
    rows: Vec<[f64; NUM_LABELS]>,
}

impl BoundaryProbMatrix {
    /// Wraps precomputed rows; each must be non-negative and sum to 1
    /// within 1e-6.
    pub fn from_rows(rows: Vec<[f64; NUM_LABELS]>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if r.iter().any(|p| p.is_nan() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "row {i} is not a probability distribution: {r:?}"
                )));
            }
        }
        Ok(BoundaryProbMatrix { rows })
    }

    /// One-hot rows at the given labels.
    pub fn one_hot(labels: &[PositionLabel]) -> Self {
        let rows = labels
            .iter()
            .map(|l| {
                let mut r = [0.0; NUM_LABELS];
                r[l.index()] = 1.0;
                r
            })
            .collect();
        BoundaryProbMatrix { rows }
    }

    pub fn rows(&self) -> &[[f64; NUM_LABELS]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn prob(&self, token: usize, label: PositionLabel) -> f64 {
        self.rows[token][label.index()]
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64; NUM_LABELS]) -> [f64; NUM_LABELS] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|z| (z - max).exp());
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Summed cross-entropy, `-log p` at each token's gold label.
pub fn loss(probs: &BoundaryProbMatrix, gold: &[PositionLabel]) -> Result<f64> {
    if probs.len() != gold.len() {
        return Err(Error::LengthMismatch {
            expected: probs.len(),
            found: gold.len(),
        });
    }
    Ok(probs
        .rows
        .iter()
        .zip(gold)
        .map(|(r, g)| -r[g.index()].max(LOG_FLOOR).ln())
        .sum())
}

/// Candidate boundary positions of one sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BoundarySet {
    pub starts: BTreeSet<usize>,
    pub ends: BTreeSet<usize>,
}

/// Selects start and end candidates whose probability reaches `threshold`.
pub fn decode(probs: &BoundaryProbMatrix, threshold: f64) -> Result<BoundarySet> {
    check_threshold(threshold)?;
    let mut set = BoundarySet::default();
    let both = PositionLabel::BothStartAndEnd.index();
    for (i, r) in probs.rows.iter().enumerate() {
        if r[PositionLabel::Start.index()] >= threshold || r[both] >= threshold {
            set.starts.insert(i);
        }
        if r[PositionLabel::End.index()] >= threshold || r[both] >= threshold {
            set.ends.insert(i);
        }
    }
    Ok(set)
}

pub(crate) fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 0.5 {
        Ok(())
    } else {
        Err(Error::ThresholdOutOfRange(t))
    }
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerGradient {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// One training sentence: token rows and gold position labels.
#[derive(Debug, Clone)]
pub struct LocalizerExample {
    pub tokens: TokenMatrix,
    pub labels: Vec<PositionLabel>,
}

/// The five-way boundary head.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerModel {
    layer: LinearLayer,
    config: TrainConfig,
}

impl LocalizerModel {
    pub fn zeros(dim: usize) -> Self {
        LocalizerModel {
            layer: LinearLayer::zeros(NUM_LABELS, dim),
            config: TrainConfig::default(),
        }
    }

    /// Builds a model from explicit parameters, rows ordered as
    /// [`PositionLabel::ALL`].
    pub fn from_parts(weights: &[Vec<f64>], bias: &[f64; NUM_LABELS]) -> Result<Self> {
        Ok(LocalizerModel {
            layer: LinearLayer::from_parts(weights, bias)?,
            config: TrainConfig::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.layer.dim
    }

    pub fn weights(&self) -> Vec<Vec<f64>> {
        self.layer.weight_rows()
    }

    pub fn bias(&self) -> &[f64] {
        self.layer.bias()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn logits(&self, tokens: &TokenMatrix) -> Result<Vec<[f64; NUM_LABELS]>> {
        self.layer.check_input(tokens.dim())?;
        Ok(tokens
            .iter_rows()
            .map(|h| {
                let mut z = [0.0; NUM_LABELS];
                self.layer.logits_into(h, &mut z);
                z
            })
            .collect())
    }

    pub fn forward(&self, tokens: &TokenMatrix) -> Result<BoundaryProbMatrix> {
        let rows = self.logits(tokens)?.iter().map(softmax).collect();
        Ok(BoundaryProbMatrix { rows })
    }

    /// Closed-form gradient of the summed cross-entropy: `P - Y` per token,
    /// back-projected through the linear map.
    pub fn gradient(
        &self,
        tokens: &TokenMatrix,
        gold: &[PositionLabel],
    ) -> Result<LocalizerGradient> {
        self.layer.check_input(tokens.dim())?;
        if tokens.rows() != gold.len() {
            return Err(Error::LengthMismatch {
                expected: tokens.rows(),
                found: gold.len(),
            });
        }
        let mut grad = vec![0.0; self.layer.params.len()];
        accumulate(&self.layer, tokens, gold, &mut grad);
        let d = self.layer.dim;
        let weights = grad[..NUM_LABELS * d]
            .chunks_exact(d.max(1))
            .take(NUM_LABELS)
            .map(<[f64]>::to_vec)
            .collect();
        Ok(LocalizerGradient {
            weights,
            bias: grad[NUM_LABELS * d..].to_vec(),
        })
    }

    /// Fits the head by mini-batch descent, starting from `init` when given
    /// and from zeros otherwise.
    pub fn fit(
        examples: &[LocalizerExample],
        config: &TrainConfig,
        init: Option<&LocalizerModel>,
    ) -> Result<(LocalizerModel, TrainLog)> {
        let first = examples.first().ok_or(Error::EmptyTrainingSet)?;
        let dim = first.tokens.dim();
        let mut layer = match init {
            Some(m) => m.layer.clone(),
            None => LinearLayer::zeros(NUM_LABELS, dim),
        };
        for e in examples {
            layer.check_input(e.tokens.dim())?;
            if e.tokens.rows() != e.labels.len() {
                return Err(Error::LengthMismatch {
                    expected: e.tokens.rows(),
                    found: e.labels.len(),
                });
            }
        }
        let log = train::fit(&mut layer, examples, config, |layer, e, grad| {
            let loss = match grad {
                Some(g) => accumulate(layer, &e.tokens, &e.labels, g),
                None => example_loss(layer, &e.tokens, &e.labels),
            };
            (loss, e.labels.len())
        })?;
        Ok((
            LocalizerModel {
                layer,
                config: *config,
            },
            log,
        ))
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile::new(KIND, &label_names(), &self.layer, self.config);
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(json).map_err(|e| Error::InvalidModel(e.to_string()))?;
        let (layer, config) = file.into_layer(KIND, &label_names())?;
        if layer.outputs != NUM_LABELS {
            return Err(Error::InvalidModel(format!(
                "expected {NUM_LABELS} outputs, found {}",
                layer.outputs
            )));
        }
        Ok(LocalizerModel { layer, config })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn example_loss(layer: &LinearLayer, tokens: &TokenMatrix, gold: &[PositionLabel]) -> f64 {
    let mut z = [0.0; NUM_LABELS];
    tokens
        .iter_rows()
        .zip(gold)
        .map(|(h, g)| {
            layer.logits_into(h, &mut z);
            -softmax(&z)[g.index()].max(LOG_FLOOR).ln()
        })
        .sum()
}

fn accumulate(
    layer: &LinearLayer,
    tokens: &TokenMatrix,
    gold: &[PositionLabel],
    grad: &mut [f64],
) -> f64 {
    let mut z = [0.0; NUM_LABELS];
    let mut total = 0.0;
    for (h, g) in tokens.iter_rows().zip(gold) {
        layer.logits_into(h, &mut z);
        let mut delta = softmax(&z);
        total -= delta[g.index()].max(LOG_FLOOR).ln();
        delta[g.index()] -= 1.0;
        layer.accumulate(h, &delta, grad);
    }
    total
}
