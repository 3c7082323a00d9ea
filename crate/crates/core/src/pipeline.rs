//! Two-stage prediction, training drivers, and the threshold sweep.
//!
//! Prediction for one sentence runs: token rows from the embedder, boundary
//! probabilities from the localizer, threshold decoding, pairing every start
//! with every end at or after it, and multi-label classification of each
//! pair. Candidate lengths are not capped.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment;
use crate::corpus::{derive_position_labels, Corpus, Sentence};
use crate::embedder::{Embedder, EmbedderConfig};
use crate::error::{Error, Result};
use crate::evaluator::{self, EvalReport, Prf};
use crate::localizer::{self, BoundaryProbMatrix, BoundarySet, LocalizerExample, LocalizerModel};
use crate::predictions::SentencePrediction;
use crate::spanclass::{self, ClassifierModel, LabeledSpan};
use crate::train::{OptimizerKind, TrainConfig, TrainLog};

pub const LOCALIZER_FILE: &str = "localizer.json";
pub const CLASSIFIER_FILE: &str = "spanclass.json";
pub const EMBEDDER_FILE: &str = "embedder.json";
pub const TRAINING_LOG_FILE: &str = "training_log.json";

/// A `(start, end)` pair proposed by boundary pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpanCandidate {
    pub start: usize,
    pub end: usize,
}

/// Pairs every start with every end at or after it, ordered by
/// `(start, end)`.
pub fn enumerate_candidates(bounds: &BoundarySet) -> Vec<SpanCandidate> {
    pair_boundaries(bounds, false)
}

/// As [`enumerate_candidates`]; with `strict` set, single-token pairs
/// (`start == end`) are excluded.
pub fn pair_boundaries(bounds: &BoundarySet, strict: bool) -> Vec<SpanCandidate> {
    let mut out = Vec::new();
    for &start in &bounds.starts {
        let from = if strict { start + 1 } else { start };
        for &end in bounds.ends.range(from..) {
            out.push(SpanCandidate { start, end });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Boundary threshold, in `(0, 0.5]`.
    pub threshold: f64,
    /// Per-category decision threshold, in `(0, 1)`.
    pub tau: f64,
    /// Require `start < end` when pairing boundaries.
    pub strict_pairs: bool,
    pub embedder: EmbedderConfig,
    /// Add composite-span negatives to the classifier's training set.
    pub augment: bool,
    pub localizer: TrainConfig,
    pub classifier: TrainConfig,
    /// Seeds both heads' training runs.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            threshold: 0.25,
            tau: 0.5,
            strict_pairs: false,
            embedder: EmbedderConfig::default(),
            augment: true,
            localizer: TrainConfig::default(),
            classifier: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        localizer::check_threshold(self.threshold)?;
        spanclass::check_tau(self.tau)?;
        self.localizer.validate()?;
        self.classifier.validate()
    }

    /// Settings that fit both heads of a frozen hashed encoder on small
    /// corpora: Adam with a larger step and more epochs than the published
    /// fine-tuning recipe.
    pub fn desk_scale() -> Self {
        let head = TrainConfig {
            lr: 0.02,
            batch_size: 8,
            epochs: 60,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        };
        PipelineConfig {
            localizer: head,
            classifier: head,
            ..PipelineConfig::default()
        }
    }
}

/// Embedder plus both trained heads.
pub struct Models {
    pub embedder_config: EmbedderConfig,
    pub embedder: Box<dyn Embedder>,
    pub localizer: LocalizerModel,
    pub classifier: ClassifierModel,
}

impl std::fmt::Debug for Models {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Models")
            .field("embedder_config", &self.embedder_config)
            .field("localizer_dim", &self.localizer.dim())
            .field("classifier_dim", &self.classifier.dim())
            .finish()
    }
}

impl Models {
    pub fn new(
        embedder_config: EmbedderConfig,
        localizer: LocalizerModel,
        classifier: ClassifierModel,
    ) -> Result<Self> {
        let embedder = embedder_config.build()?;
        Self::with_embedder(embedder_config, embedder, localizer, classifier)
    }

    pub fn with_embedder(
        embedder_config: EmbedderConfig,
        embedder: Box<dyn Embedder>,
        localizer: LocalizerModel,
        classifier: ClassifierModel,
    ) -> Result<Self> {
        if localizer.dim() != embedder.dim() {
            return Err(Error::DimensionMismatch {
                expected: embedder.dim(),
                found: localizer.dim(),
            });
        }
        if classifier.dim() != embedder.span_dim() {
            return Err(Error::DimensionMismatch {
                expected: embedder.span_dim(),
                found: classifier.dim(),
            });
        }
        Ok(Models {
            embedder_config,
            embedder,
            localizer,
            classifier,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.localizer.save(dir.join(LOCALIZER_FILE))?;
        self.classifier.save(dir.join(CLASSIFIER_FILE))?;
        let cfg = serde_json::to_string_pretty(&self.embedder_config)?;
        fs::write(dir.join(EMBEDDER_FILE), cfg + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cfg: EmbedderConfig =
            serde_json::from_str(&fs::read_to_string(dir.join(EMBEDDER_FILE))?)
                .map_err(|e| Error::InvalidModel(format!("{EMBEDDER_FILE}: {e}")))?;
        Self::new(
            cfg,
            LocalizerModel::load(dir.join(LOCALIZER_FILE))?,
            ClassifierModel::load(dir.join(CLASSIFIER_FILE))?,
        )
    }
}

/// Localizer output and boundary decoding for one sentence, kept so that
/// several thresholds can reuse the same forward pass.
struct Scored {
    tokens: crate::embedder::TokenMatrix,
    probs: BoundaryProbMatrix,
}

fn score(sentence: &Sentence, models: &Models) -> Result<Scored> {
    let tokens = models.embedder.encode_tokens(sentence)?;
    let probs = models.localizer.forward(&tokens)?;
    Ok(Scored { tokens, probs })
}

fn classify_scored(
    scored: &Scored,
    models: &Models,
    threshold: f64,
    tau: f64,
    strict: bool,
) -> Result<(Vec<LabeledSpan>, usize)> {
    let bounds = localizer::decode(&scored.probs, threshold)?;
    let candidates: Vec<(usize, usize)> = pair_boundaries(&bounds, strict)
        .into_iter()
        .map(|c| (c.start, c.end))
        .collect();
    let mut spans = models
        .classifier
        .classify(&scored.tokens, &candidates, tau)?;
    spans.sort_by_key(|s| (s.start, s.end, s.category));
    Ok((spans, candidates.len()))
}

/// Extracts labeled spans from one sentence, sorted by
/// `(start, end, category)`.
pub fn predict(
    sentence: &Sentence,
    models: &Models,
    config: &PipelineConfig,
) -> Result<Vec<LabeledSpan>> {
    localizer::check_threshold(config.threshold)?;
    spanclass::check_tau(config.tau)?;
    let scored = score(sentence, models)?;
    Ok(classify_scored(
        &scored,
        models,
        config.threshold,
        config.tau,
        config.strict_pairs,
    )?
    .0)
}

/// Runs [`predict`] over every sentence, in parallel, keeping corpus order.
pub fn predict_corpus(
    corpus: &Corpus,
    models: &Models,
    config: &PipelineConfig,
) -> Result<Vec<SentencePrediction>> {
    let sentences: Vec<&Sentence> = corpus.sentences().collect();
    sentences
        .par_iter()
        .map(|s| {
            Ok(SentencePrediction {
                uid: s.uid().to_string(),
                spans: predict(s, models, config)?,
            })
        })
        .collect()
}

/// One point of a threshold sweep (micro-averaged scores).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    /// Total candidate spans produced across the corpus.
    pub candidates: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Predicts and evaluates `corpus` once per boundary threshold.
pub fn sweep_threshold(
    corpus: &Corpus,
    models: &Models,
    thresholds: &[f64],
    config: &PipelineConfig,
) -> Result<Vec<SweepRow>> {
    for &t in thresholds {
        localizer::check_threshold(t)?;
    }
    spanclass::check_tau(config.tau)?;
    let sentences: Vec<&Sentence> = corpus.sentences().collect();
    let scored: Vec<Scored> = sentences
        .par_iter()
        .map(|s| score(s, models))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let results: Vec<(Vec<LabeledSpan>, usize)> = scored
            .par_iter()
            .map(|sc| classify_scored(sc, models, t, config.tau, config.strict_pairs))
            .collect::<Result<_>>()?;
        let candidates = results.iter().map(|r| r.1).sum();
        let preds: Vec<SentencePrediction> = sentences
            .iter()
            .zip(results)
            .map(|(s, (spans, _))| SentencePrediction {
                uid: s.uid().to_string(),
                spans,
            })
            .collect();
        let Prf {
            precision,
            recall,
            f1,
        } = evaluator::evaluate(&preds, corpus, None)?.overall.micro;
        rows.push(SweepRow {
            threshold: t,
            candidates,
            precision,
            recall,
            f1,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-epoch losses of both training runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub localizer: TrainLog,
    pub classifier: TrainLog,
    pub classifier_examples: usize,
    pub augmented: bool,
}

/// Trains the localizer on gold position labels and, separately, the
/// classifier on gold spans (plus composite negatives when
/// `config.augment`). With `init`, both heads warm-start from the given
/// models and reuse their embedder.
pub fn train_all(
    corpus: &Corpus,
    config: &PipelineConfig,
    init: Option<&Models>,
) -> Result<(Models, TrainingLog)> {
    if corpus.sentence_count() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    config.localizer.validate()?;
    config.classifier.validate()?;
    let embedder_config = match init {
        Some(m) => m.embedder_config.clone(),
        None => config.embedder.clone(),
    };
    let embedder = embedder_config.build()?;

    let loc_examples = corpus
        .sentences()
        .map(|s| {
            Ok(LocalizerExample {
                tokens: embedder.encode_tokens(s)?,
                labels: derive_position_labels(s),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let loc_config = TrainConfig {
        seed: config.seed,
        ..config.localizer
    };
    let (localizer, loc_log) =
        LocalizerModel::fit(&loc_examples, &loc_config, init.map(|m| &m.localizer))?;
    drop(loc_examples);

    let span_examples = augment::build_training_set(corpus, embedder.as_ref(), config.augment)?;
    let cls_config = TrainConfig {
        seed: config.seed,
        ..config.classifier
    };
    let (classifier, cls_log) =
        ClassifierModel::fit(&span_examples, &cls_config, init.map(|m| &m.classifier))?;

    let log = TrainingLog {
        localizer: loc_log,
        classifier: cls_log,
        classifier_examples: span_examples.len(),
        augmented: config.augment,
    };
    let models = Models::with_embedder(embedder_config, embedder, localizer, classifier)?;
    Ok((models, log))
}

/// Convenience wrapper: predict the corpus and score it.
pub fn evaluate_models(
    corpus: &Corpus,
    models: &Models,
    config: &PipelineConfig,
    grouping: Option<evaluator::Grouping>,
) -> Result<EvalReport> {
    let preds = predict_corpus(corpus, models, config)?;
    evaluator::evaluate(&preds, corpus, grouping)
}
