use std::fs;
use std::path::PathBuf;

use picox::corpus::{derive_position_labels, Category, Entity, Sentence};
use picox::embedder::{
    Embedder, EmbedderConfig, FileEmbedder, HashedConfig, HashedEmbedder, SpanVector,
};
use picox::localizer::{LocalizerExample, LocalizerModel};
use picox::pcxe::PcxeFile;
use picox::pipeline::{predict, sweep_threshold, train_all, Models, PipelineConfig};
use picox::spanclass::{ClassifierModel, SpanExample};
use picox::{synth, OptimizerKind, TrainConfig};
use tempfile::TempDir;

fn sgd(lr: f64, epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        lr,
        batch_size,
        epochs,
        seed: 3,
        optimizer: OptimizerKind::Sgd,
    }
}

fn adam(lr: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerKind::Adam,
        ..sgd(lr, epochs, 8)
    }
}

fn localizer_examples(n: usize) -> Vec<LocalizerExample> {
    let embedder = HashedEmbedder::new(HashedConfig::default()).unwrap();
    synth::nested_corpus(n, 21)
        .sentences()
        .map(|s| LocalizerExample {
            tokens: embedder.encode_tokens(s).unwrap(),
            labels: derive_position_labels(s),
        })
        .collect()
}

/// Twenty spans whose category is a function of which of three directions
/// the vector points along.
fn separable_spans() -> Vec<SpanExample> {
    (0..20)
        .map(|i| {
            let c = i % 3;
            let mut v = vec![0.1 * (i as f64 / 20.0); 6];
            v[c] = 1.0;
            v[c + 3] = -0.5;
            let mut target = [0.0; 3];
            target[c] = 1.0;
            SpanExample {
                vector: SpanVector(v),
                target,
            }
        })
        .collect()
}

#[test]
fn localizer_fits_separable_corpus() {
    let examples = localizer_examples(50);
    let (_, log) = LocalizerModel::fit(&examples, &adam(0.1, 200), None).unwrap();
    let last = *log.epoch_losses.last().unwrap();
    assert!(last < 0.05, "final loss {last}");
    assert_eq!(log.epoch_losses.len(), 200);
}

#[test]
fn classifier_fits_separable_toy() {
    let (model, log) = ClassifierModel::fit(&separable_spans(), &sgd(0.5, 500, 4), None).unwrap();
    let last = *log.epoch_losses.last().unwrap();
    assert!(last < 0.05, "final loss {last}");
    for e in separable_spans() {
        let p = model.forward(&e.vector).unwrap();
        for (score, target) in p.iter().zip(e.target) {
            assert_eq!(*score >= 0.5, target == 1.0);
        }
    }
}

#[test]
fn small_step_full_batch_loss_never_rises() {
    let examples = localizer_examples(10);
    let (_, log) = LocalizerModel::fit(&examples, &sgd(0.05, 30, examples.len()), None).unwrap();
    for w in log.epoch_losses.windows(2) {
        assert!(w[1] <= w[0], "{:?}", log.epoch_losses);
    }

    let spans = separable_spans();
    let (_, log) = ClassifierModel::fit(&spans, &sgd(0.05, 30, spans.len()), None).unwrap();
    for w in log.epoch_losses.windows(2) {
        assert!(w[1] <= w[0], "{:?}", log.epoch_losses);
    }
}

#[test]
fn fitting_is_deterministic() {
    let examples = localizer_examples(12);
    let config = sgd(0.1, 4, 3);
    let (a, la) = LocalizerModel::fit(&examples, &config, None).unwrap();
    let (b, lb) = LocalizerModel::fit(&examples, &config, None).unwrap();
    let bits = |m: &LocalizerModel| -> Vec<u64> {
        m.weights()
            .iter()
            .flatten()
            .chain(m.bias())
            .map(|v| v.to_bits())
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(la, lb);

    let reseeded = TrainConfig { seed: 4, ..config };
    let (c, _) = LocalizerModel::fit(&examples, &reseeded, None).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn warm_start_continues_from_init() {
    let examples = localizer_examples(12);
    let (first, log1) = LocalizerModel::fit(&examples, &adam(0.05, 20), None).unwrap();
    let (_, log2) = LocalizerModel::fit(&examples, &adam(0.01, 1), Some(&first)).unwrap();
    assert!(log2.epoch_losses[0] < log1.epoch_losses[0]);
}

#[test]
fn model_files_round_trip() {
    let dir = TempDir::new().unwrap();
    let (loc, _) = LocalizerModel::fit(&localizer_examples(5), &sgd(0.1, 2, 2), None).unwrap();
    let (cls, _) = ClassifierModel::fit(&separable_spans(), &sgd(0.1, 2, 2), None).unwrap();
    loc.save(dir.path().join("l.json")).unwrap();
    cls.save(dir.path().join("c.json")).unwrap();
    assert_eq!(
        LocalizerModel::load(dir.path().join("l.json")).unwrap(),
        loc
    );
    assert_eq!(
        ClassifierModel::load(dir.path().join("c.json")).unwrap(),
        cls
    );

    let err = LocalizerModel::from_json(&cls.to_json()).unwrap_err();
    assert!(!err.is_io());
}

/// Tokens of the two-entity fixture whose embedding rows are one-hot position
/// labels, so a scaled identity localizer reproduces the gold labels.
fn oracle_models() -> (Sentence, Models) {
    let tokens = ["patients", "with", "asthma", "given", "salbutamol"]
        .map(String::from)
        .to_vec();
    let sentence = Sentence::new(
        "fixture",
        tokens,
        vec![
            Entity::new(0, 4, Category::P),
            Entity::new(3, 4, Category::I),
        ],
    )
    .unwrap();

    let labels = derive_position_labels(&sentence);
    let mut values = Vec::new();
    for l in &labels {
        let mut row = [0.0f32; 5];
        row[l.index()] = 1.0;
        values.extend(row);
    }
    let mut file = PcxeFile::new(5);
    file.push("fixture", labels.len(), values).unwrap();
    let embedder = FileEmbedder::from_pcxe(file).unwrap();

    let identity: Vec<Vec<f64>> = (0..5)
        .map(|j| (0..5).map(|k| if j == k { 20.0 } else { 0.0 }).collect())
        .collect();
    let localizer = LocalizerModel::from_parts(&identity, &[0.0; 5]).unwrap();

    // Span vector = [mean | start row | end row]; dimension 0 of the mean is
    // the fraction of inside tokens, which separates the outer span from the
    // inner one.
    let mut w = vec![vec![0.0; 15]; 3];
    w[Category::P.index()][0] = 20.0;
    w[Category::I.index()][0] = -20.0;
    let classifier = ClassifierModel::from_parts(&w, &[-4.0, 4.0, -10.0]).unwrap();

    let models = Models::with_embedder(
        EmbedderConfig::File {
            path: PathBuf::from("fixture.pcxe"),
        },
        Box::new(embedder),
        localizer,
        classifier,
    )
    .unwrap();
    (sentence, models)
}

#[test]
fn oracle_models_recover_nested_fixture() {
    let (sentence, models) = oracle_models();
    let spans = predict(&sentence, &models, &PipelineConfig::default()).unwrap();
    let got: Vec<_> = spans.iter().map(|s| (s.start, s.end, s.category)).collect();
    assert_eq!(got, [(0, 4, Category::P), (3, 4, Category::I)]);
    assert!(spans.iter().all(|s| s.score > 0.9));
}

#[test]
fn train_all_is_reproducible_to_the_byte() {
    let corpus = synth::nested_corpus(15, 2);
    let config = PipelineConfig {
        embedder: EmbedderConfig::Hashed(HashedConfig {
            dim: 64,
            ..HashedConfig::default()
        }),
        localizer: sgd(0.1, 3, 4),
        classifier: sgd(0.1, 3, 4),
        ..PipelineConfig::default()
    };
    let dirs = [TempDir::new().unwrap(), TempDir::new().unwrap()];
    for d in &dirs {
        let (models, _) = train_all(&corpus, &config, None).unwrap();
        models.save(d.path()).unwrap();
    }
    for name in ["localizer.json", "spanclass.json", "embedder.json"] {
        assert_eq!(
            fs::read(dirs[0].path().join(name)).unwrap(),
            fs::read(dirs[1].path().join(name)).unwrap(),
            "{name}"
        );
    }
    let reloaded = Models::load(dirs[0].path()).unwrap();
    assert_eq!(reloaded.embedder.dim(), 64);
}

#[test]
fn augmentation_adds_negatives() {
    let corpus = synth::distractor_corpus(20, 5);
    let mut config = PipelineConfig::desk_scale();
    config.localizer.epochs = 1;
    config.classifier.epochs = 1;
    let (_, with) = train_all(&corpus, &config, None).unwrap();
    config.augment = false;
    let (_, without) = train_all(&corpus, &config, None).unwrap();
    assert!(with.augmented && !without.augmented);
    assert!(with.classifier_examples > without.classifier_examples);
}

#[test]
fn sweep_candidates_fall_as_threshold_rises() {
    let corpus = synth::distractor_corpus(20, 8);
    let mut config = PipelineConfig::desk_scale();
    config.localizer.epochs = 3;
    config.classifier.epochs = 3;
    let (models, _) = train_all(&corpus, &config, None).unwrap();
    let grid = [0.2, 0.25, 0.3, 0.4, 0.5];
    let rows = sweep_threshold(&corpus, &models, &grid, &config).unwrap();
    assert_eq!(rows.len(), 5);
    for (row, t) in rows.iter().zip(grid) {
        assert_eq!(row.threshold, t);
    }
    for w in rows.windows(2) {
        assert!(w[1].candidates <= w[0].candidates);
    }
    assert!(sweep_threshold(&corpus, &models, &[0.6], &config).is_err());
}
