//! Tokenized corpora with possibly-overlapping span annotations.
//!
//! Spans are token-indexed and inclusive on both ends, so a single-token
//! entity has `start == end`. Entities inside a sentence may nest or overlap
//! freely; only exact duplicates of `(start, end, category)` are rejected.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entity category. Interventions and comparisons share the `I` class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    P,
    I,
    O,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::P, Category::I, Category::O];

    /// Position of the category in every per-category array (P, I, O).
    pub fn index(self) -> usize {
        match self {
            Category::P => 0,
            Category::I => 1,
            Category::O => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::P => "P",
            Category::I => "I",
            Category::O => "O",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P" => Ok(Category::P),
            "I" => Ok(Category::I),
            "O" => Ok(Category::O),
            other => Err(Error::UnknownCategory(other.to_string())),
        }
    }
}

/// A labeled token span, `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub start: usize,
    pub end: usize,
    pub category: Category,
}

impl Entity {
    pub fn new(start: usize, end: usize, category: Category) -> Self {
        Entity {
            start,
            end,
            category,
        }
    }

    /// Number of tokens covered.
    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn overlaps(&self, other: &Entity) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sentence {
    uid: String,
    tokens: Vec<String>,
    entities: Vec<Entity>,
}

impl Sentence {
    /// Builds a validated sentence.
    ///
    /// Fails when the token list is empty, an entity falls outside the
    /// token range or has `start > end`, or an entity is repeated.
    pub fn new(uid: impl Into<String>, tokens: Vec<String>, entities: Vec<Entity>) -> Result<Self> {
        let uid = uid.into();
        if tokens.is_empty() {
            return Err(Error::EmptySentence(uid));
        }
        let mut seen = HashSet::with_capacity(entities.len());
        for e in &entities {
            if e.start > e.end || e.end >= tokens.len() {
                return Err(Error::EntityOutOfBounds {
                    uid,
                    start: e.start,
                    end: e.end,
                    len: tokens.len(),
                });
            }
            if !seen.insert(*e) {
                return Err(Error::DuplicateEntity {
                    uid,
                    start: e.start,
                    end: e.end,
                    category: e.category.to_string(),
                });
            }
        }
        Ok(Sentence {
            uid,
            tokens,
            entities,
        })
    }

    pub fn uid(&self) -> &str {
        &self.uid
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// True when at least two gold entities share a token.
    pub fn has_overlap(&self) -> bool {
        self.entities
            .iter()
            .enumerate()
            .any(|(i, a)| self.entities[i + 1..].iter().any(|b| a.overlaps(b)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
}

/// A collection of documents; sentence uids are unique across the corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in documents.iter().flat_map(|d| &d.sentences) {
            if !seen.insert(s.uid.as_str()) {
                return Err(Error::DuplicateUid(s.uid.clone()));
            }
        }
        Ok(Corpus { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.documents.iter().flat_map(|d| d.sentences.iter())
    }

    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Reads the JSONL corpus format, one document per line. Blank lines are
    /// skipped; errors carry the 1-based line number.
    pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut documents = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawDocument =
                serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                    line: lineno,
                    message: e.to_string(),
                })?;
            let doc = raw.into_document()?;
            for s in &doc.sentences {
                if !seen.insert(s.uid.clone()) {
                    return Err(Error::DuplicateUid(s.uid.clone()));
                }
            }
            documents.push(doc);
        }
        Ok(Corpus { documents })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            // Serializing plain data structures cannot fail.
            out.push_str(&serde_json::to_string(doc).expect("document serializes"));
            out.push('\n');
        }
        out
    }

    /// Document-level random split. Returns `(train, val)` where `val` holds
    /// `round(val_fraction * docs)` documents; both halves keep the input
    /// document order.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
        if !(0.0..=1.0).contains(&val_fraction) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction {val_fraction} outside [0, 1]"
            )));
        }
        let n = self.documents.len();
        let n_val = (val_fraction * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut is_val = vec![false; n];
        for &i in &order[..n_val] {
            is_val[i] = true;
        }
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (doc, v) in self.documents.iter().zip(is_val) {
            if v {
                val.push(doc.clone());
            } else {
                train.push(doc.clone());
            }
        }
        Ok((Corpus { documents: train }, Corpus { documents: val }))
    }

    /// Splits sentences into those with at least one pair of token-sharing
    /// gold entities and the rest. Both lists keep corpus order.
    pub fn overlap_partition(&self) -> (Vec<&Sentence>, Vec<&Sentence>) {
        self.sentences().partition(|s| s.has_overlap())
    }

    pub fn find(&self, uid: &str) -> Option<&Sentence> {
        self.sentences().find(|s| s.uid == uid)
    }
}

#[derive(Deserialize)]
struct RawDocument {
    doc_id: String,
    sentences: Vec<RawSentence>,
}

#[derive(Deserialize)]
struct RawSentence {
    uid: String,
    tokens: Vec<String>,
    #[serde(default)]
    entities: Vec<RawEntity>,
}

#[derive(Deserialize)]
struct RawEntity {
    start: usize,
    end: usize,
    category: String,
}

impl RawDocument {
    fn into_document(self) -> Result<Document> {
        let sentences = self
            .sentences
            .into_iter()
            .map(|s| {
                let entities = s
                    .entities
                    .into_iter()
                    .map(|e| Ok(Entity::new(e.start, e.end, e.category.parse()?)))
                    .collect::<Result<Vec<_>>>()?;
                Sentence::new(s.uid, s.tokens, entities)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Document {
            doc_id: self.doc_id,
            sentences,
        })
    }
}

/// Relative position of a token with respect to the gold entities.
///
/// The declaration order is the category order used by the boundary head and
/// in every serialized artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionLabel {
    Inside,
    Outside,
    Start,
    End,
    BothStartAndEnd,
}

impl PositionLabel {
    pub const ALL: [PositionLabel; 5] = [
        PositionLabel::Inside,
        PositionLabel::Outside,
        PositionLabel::Start,
        PositionLabel::End,
        PositionLabel::BothStartAndEnd,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PositionLabel::Inside => "inside",
            PositionLabel::Outside => "outside",
            PositionLabel::Start => "start",
            PositionLabel::End => "end",
            PositionLabel::BothStartAndEnd => "both-start-and-end",
        }
    }
}

/// Gold position labels for every token of `sentence`.
///
/// A token that starts any entity and ends any entity (the same one or two
/// different ones) is `BothStartAndEnd`; otherwise starting wins over ending,
/// ending over plain containment, and containment over `Outside`.
pub fn derive_position_labels(sentence: &Sentence) -> Vec<PositionLabel> {
    let n = sentence.len();
    let mut starts = vec![false; n];
    let mut ends = vec![false; n];
    let mut covered = vec![false; n];
    for e in sentence.entities() {
        starts[e.start] = true;
        ends[e.end] = true;
        covered[e.start..=e.end].iter_mut().for_each(|c| *c = true);
    }
    (0..n)
        .map(|i| match (starts[i], ends[i], covered[i]) {
            (true, true, _) => PositionLabel::BothStartAndEnd,
            (true, false, _) => PositionLabel::Start,
            (false, true, _) => PositionLabel::End,
            (false, false, true) => PositionLabel::Inside,
            (false, false, false) => PositionLabel::Outside,
        })
        .collect()
}
