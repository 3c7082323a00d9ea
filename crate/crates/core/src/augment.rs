//! Composite-span negatives for the span classifier.
//!
//! Pairing the start of one entity with the end of another yields spans that
//! look like candidates but are not entities. Training the classifier on them
//! with an all-zero target teaches it to reject such candidates at
//! prediction time.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{Category, Corpus, Entity, Sentence};
use crate::embedder::Embedder;
use crate::error::Result;
use crate::spanclass::{CategoryScores, SpanExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositeSpan {
    pub start: usize,
    pub end: usize,
    /// The entity contributing the start and the one contributing the end.
    pub provenance: (Entity, Entity),
}

/// All composite spans from two entity lists.
///
/// For each cross pair `(a, b)`, `(a.start, b.end)` is kept when
/// `a.start <= b.end` and `(b.start, a.end)` when `b.start <= a.end`. The
/// result is deduplicated on `(start, end)`, keeping the first provenance
/// seen, and sorted.
pub fn composite_spans(l_a: &[Entity], l_b: &[Entity]) -> Vec<CompositeSpan> {
    let mut out: BTreeMap<(usize, usize), (Entity, Entity)> = BTreeMap::new();
    for a in l_a {
        for b in l_b {
            if a.start <= b.end {
                out.entry((a.start, b.end)).or_insert((*a, *b));
            }
            if b.start <= a.end {
                out.entry((b.start, a.end)).or_insert((*b, *a));
            }
        }
    }
    out.into_iter()
        .map(|((start, end), provenance)| CompositeSpan {
            start,
            end,
            provenance,
        })
        .collect()
}

/// Composite negatives of one sentence: the union over every pair of
/// distinct categories, minus spans that coincide with any gold entity.
pub fn sentence_negatives(sentence: &Sentence) -> Vec<CompositeSpan> {
    let by_cat: Vec<Vec<Entity>> = Category::ALL
        .iter()
        .map(|c| {
            sentence
                .entities()
                .iter()
                .filter(|e| e.category == *c)
                .copied()
                .collect()
        })
        .collect();
    let gold: BTreeSet<(usize, usize)> = sentence.entities().iter().map(Entity::span).collect();
    let mut out: BTreeMap<(usize, usize), CompositeSpan> = BTreeMap::new();
    for i in 0..by_cat.len() {
        for j in i + 1..by_cat.len() {
            for c in composite_spans(&by_cat[i], &by_cat[j]) {
                if !gold.contains(&(c.start, c.end)) {
                    out.entry((c.start, c.end)).or_insert(c);
                }
            }
        }
    }
    out.into_values().collect()
}

/// Gold spans of one sentence with multi-hot targets, sorted by span.
pub fn sentence_positives(sentence: &Sentence) -> Vec<((usize, usize), CategoryScores)> {
    let mut spans: BTreeMap<(usize, usize), CategoryScores> = BTreeMap::new();
    for e in sentence.entities() {
        spans.entry(e.span()).or_insert([0.0; 3])[e.category.index()] = 1.0;
    }
    spans.into_iter().collect()
}

/// Classifier training set: every gold span, plus composite negatives when
/// `augment` is set. Sentence order is kept, positives before negatives.
pub fn build_training_set(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    augment: bool,
) -> Result<Vec<SpanExample>> {
    let mut out = Vec::new();
    for s in corpus.sentences() {
        let positives = sentence_positives(s);
        let negatives = if augment {
            sentence_negatives(s)
        } else {
            Vec::new()
        };
        if positives.is_empty() && negatives.is_empty() {
            continue;
        }
        let tokens = embedder.encode_tokens(s)?;
        for ((start, end), target) in positives {
            out.push(SpanExample {
                vector: tokens.pool_span(start, end)?,
                target,
            });
        }
        for n in negatives {
            out.push(SpanExample {
                vector: tokens.pool_span(n.start, n.end)?,
                target: [0.0; 3],
            });
        }
    }
    Ok(out)
}
