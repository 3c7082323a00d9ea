//! Multi-label span classification.
//!
//! Each category gets an independent sigmoid, so a span may receive several
//! categories at once or none at all. A candidate that clears the decision
//! threshold `tau` in no category is treated as a non-entity and dropped.
//!
//! The objective is full binary cross-entropy, summed over categories:
//! `-[y log p + (1 - y) log(1 - p)]`. The negative term is what lets
//! composite-span negatives (target `(0, 0, 0)`) push scores down.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Category;
use crate::embedder::{SpanVector, TokenMatrix};
use crate::error::{Error, Result};
use crate::train::{self, LinearLayer, ModelFile, TrainConfig, TrainLog};

pub const NUM_CATEGORIES: usize = 3;
const KIND: &str = "spanclass";
const LOG_FLOOR: f64 = 1e-12;

/// Per-category probabilities or targets, indexed by [`Category::index`].
pub type CategoryScores = [f64; NUM_CATEGORIES];

fn category_names() -> [&'static str; NUM_CATEGORIES] {
    Category::ALL.map(Category::as_str)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy summed over the three categories.
pub fn loss(scores: &[f64], gold: &[f64]) -> Result<f64> {
    if scores.len() != NUM_CATEGORIES || gold.len() != NUM_CATEGORIES {
        return Err(Error::LengthMismatch {
            expected: NUM_CATEGORIES,
            found: if scores.len() != NUM_CATEGORIES {
                scores.len()
            } else {
                gold.len()
            },
        });
    }
    Ok(scores.iter().zip(gold).map(|(&p, &y)| bce(p, y)).sum())
}

fn bce(p: f64, y: f64) -> f64 {
    let mut l = 0.0;
    if y != 0.0 {
        l -= y * p.max(LOG_FLOOR).ln();
    }
    if y != 1.0 {
        l -= (1.0 - y) * (1.0 - p).max(LOG_FLOOR).ln();
    }
    l
}

/// A predicted `(span, category)` pair with its score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub category: Category,
    pub score: f64,
}

/// Training example for the classifier.
#[derive(Debug, Clone)]
pub struct SpanExample {
    pub vector: SpanVector,
    /// Multi-hot target; all zeros for a non-entity span.
    pub target: CategoryScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGradient {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// The span classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    layer: LinearLayer,
    config: TrainConfig,
}

impl ClassifierModel {
    pub fn zeros(span_dim: usize) -> Self {
        ClassifierModel {
            layer: LinearLayer::zeros(NUM_CATEGORIES, span_dim),
            config: TrainConfig::default(),
        }
    }

    /// Rows ordered P, I, O.
    pub fn from_parts(weights: &[Vec<f64>], bias: &CategoryScores) -> Result<Self> {
        Ok(ClassifierModel {
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

    pub fn forward(&self, v: &SpanVector) -> Result<CategoryScores> {
        self.layer.check_input(v.dim())?;
        Ok(scores(&self.layer, v.as_slice()))
    }

    /// Closed-form gradient: `p - y` per category, back-projected.
    pub fn gradient(&self, v: &SpanVector, gold: &CategoryScores) -> Result<ClassifierGradient> {
        self.layer.check_input(v.dim())?;
        let mut grad = vec![0.0; self.layer.params.len()];
        accumulate(&self.layer, v.as_slice(), gold, &mut grad);
        let d = self.layer.dim;
        Ok(ClassifierGradient {
            weights: grad[..NUM_CATEGORIES * d]
                .chunks_exact(d.max(1))
                .take(NUM_CATEGORIES)
                .map(<[f64]>::to_vec)
                .collect(),
            bias: grad[NUM_CATEGORIES * d..].to_vec(),
        })
    }

    pub fn fit(
        examples: &[SpanExample],
        config: &TrainConfig,
        init: Option<&ClassifierModel>,
    ) -> Result<(ClassifierModel, TrainLog)> {
        let first = examples.first().ok_or(Error::EmptyTrainingSet)?;
        let mut layer = match init {
            Some(m) => m.layer.clone(),
            None => LinearLayer::zeros(NUM_CATEGORIES, first.vector.dim()),
        };
        for e in examples {
            layer.check_input(e.vector.dim())?;
        }
        let log = train::fit(&mut layer, examples, config, |layer, e, grad| {
            let x = e.vector.as_slice();
            let l = match grad {
                Some(g) => accumulate(layer, x, &e.target, g),
                None => {
                    let p = scores(layer, x);
                    p.iter().zip(&e.target).map(|(&p, &y)| bce(p, y)).sum()
                }
            };
            (l, 1)
        })?;
        Ok((
            ClassifierModel {
                layer,
                config: *config,
            },
            log,
        ))
    }

    /// Scores every candidate and emits one record per category whose score
    /// reaches `tau`. Candidates are `(start, end)` pairs over the rows of
    /// `tokens`.
    pub fn classify(
        &self,
        tokens: &TokenMatrix,
        candidates: &[(usize, usize)],
        tau: f64,
    ) -> Result<Vec<LabeledSpan>> {
        check_tau(tau)?;
        let mut out = Vec::new();
        for &(start, end) in candidates {
            let v = tokens.pool_span(start, end)?;
            let p = self.forward(&v)?;
            for c in Category::ALL {
                if p[c.index()] >= tau {
                    out.push(LabeledSpan {
                        start,
                        end,
                        category: c,
                        score: p[c.index()],
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile::new(KIND, &category_names(), &self.layer, self.config);
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(json).map_err(|e| Error::InvalidModel(e.to_string()))?;
        let (layer, config) = file.into_layer(KIND, &category_names())?;
        Ok(ClassifierModel { layer, config })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::TauOutOfRange(tau))
    }
}

fn scores(layer: &LinearLayer, x: &[f64]) -> CategoryScores {
    let mut z = [0.0; NUM_CATEGORIES];
    layer.logits_into(x, &mut z);
    z.map(sigmoid)
}

fn accumulate(layer: &LinearLayer, x: &[f64], gold: &CategoryScores, grad: &mut [f64]) -> f64 {
    let p = scores(layer, x);
    let l = p.iter().zip(gold).map(|(&p, &y)| bce(p, y)).sum();
    let delta = [p[0] - gold[0], p[1] - gold[1], p[2] - gold[2]];
    layer.accumulate(x, &delta, grad);
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    /// A model that ignores its input and always outputs `p`.
    fn constant(dim: usize, p: CategoryScores) -> ClassifierModel {
        ClassifierModel::from_parts(&vec![vec![0.0; dim]; 3], &p.map(logit)).unwrap()
    }

    #[test]
    fn zero_model_scores_half() {
        let m = ClassifierModel::zeros(4);
        assert_eq!(m.forward(&SpanVector(vec![1.0; 4])).unwrap(), [0.5; 3]);
    }

    #[test]
    fn hand_sigmoid() {
        assert_abs_diff_eq!(sigmoid(3f64.ln()), 0.75, epsilon = 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        let m =
            ClassifierModel::from_parts(&vec![vec![0.0; 2]; 3], &[3f64.ln(), 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(
            m.forward(&SpanVector(vec![0.0; 2])).unwrap()[0],
            0.75,
            epsilon = 1e-15
        );
    }

    #[test]
    fn permuting_rows_permutes_scores() {
        let w = vec![vec![0.3, -0.1], vec![1.0, 0.2], vec![-0.5, 0.4]];
        let b = [0.1, -0.2, 0.3];
        let m = ClassifierModel::from_parts(&w, &b).unwrap();
        let pw = vec![w[2].clone(), w[0].clone(), w[1].clone()];
        let pm = ClassifierModel::from_parts(&pw, &[b[2], b[0], b[1]]).unwrap();
        let v = SpanVector(vec![0.7, -1.3]);
        let s = m.forward(&v).unwrap();
        let ps = pm.forward(&v).unwrap();
        assert_eq!(ps, [s[2], s[0], s[1]]);
    }

    #[test]
    fn loss_values() {
        assert_eq!(loss(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let l = loss(&[0.5; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(l, 3.0 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(l, 2.0794, epsilon = 1e-4);
        let neg = loss(&[0.5; 3], &[0.0; 3]).unwrap();
        assert_abs_diff_eq!(neg, 3.0 * 2f64.ln(), epsilon = 1e-12);
        assert!(loss(&[0.5; 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn gradient_bias_is_p_minus_y() {
        let w = vec![vec![0.3, -0.1], vec![1.0, 0.2], vec![-0.5, 0.4]];
        let m = ClassifierModel::from_parts(&w, &[0.1, -0.2, 0.3]).unwrap();
        let v = SpanVector(vec![0.7, -1.3]);
        let y = [1.0, 0.0, 1.0];
        let p = m.forward(&v).unwrap();
        let g = m.gradient(&v, &y).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(g.bias[c], p[c] - y[c], epsilon = 1e-15);
            for k in 0..2 {
                assert_abs_diff_eq!(g.weights[c][k], (p[c] - y[c]) * v.0[k], epsilon = 1e-15);
            }
        }
        // at p == y the gradient vanishes
        let saturated =
            ClassifierModel::from_parts(&vec![vec![0.0; 2]; 3], &[40.0, -40.0, 40.0]).unwrap();
        let g = saturated.gradient(&v, &y).unwrap();
        assert!(g.bias.iter().all(|b| b.abs() < 1e-15));
    }

    #[test]
    fn classify_multi_label_and_rejection() {
        let tokens = TokenMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let m = constant(3, [0.7, 0.2, 0.6]);
        let out = m.classify(&tokens, &[(0, 1)], 0.5).unwrap();
        let cats: Vec<_> = out.iter().map(|s| s.category).collect();
        assert_eq!(cats, [Category::P, Category::O]);
        assert!(out.iter().all(|s| (s.start, s.end) == (0, 1)));

        let m = constant(3, [0.4, 0.3, 0.2]);
        assert!(m.classify(&tokens, &[(0, 1)], 0.5).unwrap().is_empty());
    }

    #[test]
    fn classify_validates_inputs() {
        let tokens = TokenMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let m = ClassifierModel::zeros(3);
        assert!(matches!(
            m.classify(&tokens, &[(0, 2)], 0.5),
            Err(Error::SpanOutOfRange { .. })
        ));
        for tau in [0.0, 1.0, -0.5] {
            assert!(matches!(
                m.classify(&tokens, &[(0, 1)], tau),
                Err(Error::TauOutOfRange(_))
            ));
        }
        let wrong = ClassifierModel::zeros(5);
        assert!(matches!(
            wrong.classify(&tokens, &[(0, 1)], 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let w = vec![vec![0.3, -0.1 / 7.0], vec![1.0, 0.2], vec![-0.5, 0.4]];
        let m = ClassifierModel::from_parts(&w, &[0.1, -0.2, 1.0 / 3.0]).unwrap();
        assert_eq!(ClassifierModel::from_json(&m.to_json()).unwrap(), m);
        assert!(m.to_json().contains("\"spanclass\""));
    }

    #[test]
    fn fit_rejects_empty() {
        assert!(matches!(
            ClassifierModel::fit(&[], &TrainConfig::default(), None),
            Err(Error::EmptyTrainingSet)
        ));
    }
}
