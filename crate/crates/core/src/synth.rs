//! Seeded synthetic corpora with vocabulary-keyed entities.
//!
//! Every word belongs to exactly one role (population head, drug, outcome,
//! filler, ...), so entity boundaries are recoverable from surface forms and
//! a token's neighbours. Two layouts are provided:
//!
//! * [`nested_corpus`]: each sentence has a population span that strictly
//!   contains an intervention span, plus an outcome span elsewhere.
//! * [`distractor_corpus`]: sentences with several disjoint entities of
//!   different categories, so pairing predicted boundaries produces many
//!   composite candidates.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Category, Corpus, Document, Entity, Sentence};

const POP_HEAD: &[&str] = &[
    "patients",
    "adults",
    "children",
    "women",
    "men",
    "infants",
    "smokers",
    "volunteers",
];
const POP_LINK: &[&str] = &["with", "having"];
const CONDITION: &[&str] = &[
    "diabetes",
    "asthma",
    "hypertension",
    "obesity",
    "migraine",
    "depression",
];
const GIVEN: &[&str] = &["receiving", "treated", "given", "using"];
const DRUG_PRE: &[&str] = &["low-dose", "oral", "daily"];
const DRUG: &[&str] = &[
    "metformin",
    "aspirin",
    "insulin",
    "placebo",
    "ibuprofen",
    "statins",
    "exercise",
    "counselling",
];
const OUTCOME: &[&str] = &[
    "mortality",
    "pain",
    "weight",
    "hba1c",
    "symptoms",
    "relapse",
];
const OUTCOME_POST: &[&str] = &["scores", "levels", "rates"];
const FILLER: &[&str] = &[
    "we",
    "studied",
    "the",
    "effect",
    "in",
    "a",
    "trial",
    "and",
    "measured",
    "was",
    "assessed",
    "after",
    "weeks",
    "this",
    "randomized",
    "on",
];

struct Builder {
    tokens: Vec<String>,
    entities: Vec<Entity>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            tokens: Vec::new(),
            entities: Vec::new(),
        }
    }

    fn word(&mut self, rng: &mut ChaCha8Rng, pool: &[&str]) -> usize {
        self.tokens.push(pool.choose(rng).unwrap().to_string());
        self.tokens.len() - 1
    }

    fn fillers(&mut self, rng: &mut ChaCha8Rng, lo: usize, hi: usize) {
        for _ in 0..rng.random_range(lo..=hi) {
            self.word(rng, FILLER);
        }
    }

    fn drug(&mut self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let start = self.tokens.len();
        if rng.random_bool(0.4) {
            self.word(rng, DRUG_PRE);
        }
        let end = self.word(rng, DRUG);
        self.entities.push(Entity::new(start, end, Category::I));
        (start, end)
    }

    fn population(&mut self, rng: &mut ChaCha8Rng, with_condition: bool) -> (usize, usize) {
        let start = self.word(rng, POP_HEAD);
        if with_condition {
            self.word(rng, POP_LINK);
            self.word(rng, CONDITION);
        }
        let end = self.tokens.len() - 1;
        self.entities.push(Entity::new(start, end, Category::P));
        (start, end)
    }

    fn outcome(&mut self, rng: &mut ChaCha8Rng) {
        let start = self.word(rng, OUTCOME);
        if rng.random_bool(0.5) {
            self.word(rng, OUTCOME_POST);
        }
        let end = self.tokens.len() - 1;
        self.entities.push(Entity::new(start, end, Category::O));
    }

    fn finish(self, uid: String) -> Sentence {
        Sentence::new(uid, self.tokens, self.entities).expect("generator emits valid sentences")
    }
}

fn nested_sentence(rng: &mut ChaCha8Rng, uid: String) -> Sentence {
    let mut b = Builder::new();
    b.fillers(rng, 1, 3);
    let p_start = b.word(rng, POP_HEAD);
    if rng.random_bool(0.5) {
        b.word(rng, POP_LINK);
        b.word(rng, CONDITION);
    }
    b.word(rng, GIVEN);
    b.drug(rng);
    if rng.random_bool(0.3) {
        // The intervention sits inside the population span, not at its end.
        b.tokens.push("for".into());
        b.word(rng, CONDITION);
    }
    let p_end = b.tokens.len() - 1;
    b.entities.push(Entity::new(p_start, p_end, Category::P));
    b.fillers(rng, 1, 3);
    b.outcome(rng);
    b.fillers(rng, 0, 2);
    b.finish(uid)
}

fn distractor_sentence(rng: &mut ChaCha8Rng, uid: String) -> Sentence {
    let mut b = Builder::new();
    let mut kinds = vec![Category::P, Category::I, Category::O];
    // Two or three entities in random order, separated by filler.
    let keep = rng.random_range(2..=3);
    for i in (1..kinds.len()).rev() {
        kinds.swap(i, rng.random_range(0..=i));
    }
    kinds.truncate(keep);
    b.fillers(rng, 0, 2);
    for (k, cat) in kinds.iter().enumerate() {
        match cat {
            Category::P => {
                let cond = rng.random_bool(0.5);
                b.population(rng, cond);
            }
            Category::I => {
                b.drug(rng);
            }
            Category::O => b.outcome(rng),
        }
        let lo = usize::from(k + 1 < kinds.len());
        b.fillers(rng, lo, 3);
    }
    b.finish(uid)
}

fn build(
    n: usize,
    seed: u64,
    per_doc: usize,
    f: fn(&mut ChaCha8Rng, String) -> Sentence,
) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    for i in 0..n {
        if i % per_doc == 0 {
            docs.push(Document {
                doc_id: format!("doc{}", i / per_doc),
                sentences: Vec::new(),
            });
        }
        let s = f(&mut rng, format!("s{i}"));
        docs.last_mut().unwrap().sentences.push(s);
    }
    Corpus::new(docs).expect("generated uids are unique")
}

/// `n` sentences, five per document, each with a population span that
/// strictly contains an intervention span.
pub fn nested_corpus(n: usize, seed: u64) -> Corpus {
    build(n, seed, 5, nested_sentence)
}

/// `n` sentences, five per document, each with two or three disjoint
/// entities of distinct categories.
pub fn distractor_corpus(n: usize, seed: u64) -> Corpus {
    build(n, seed, 5, distractor_sentence)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_sentences_nest() {
        let c = nested_corpus(50, 1);
        assert_eq!(c.sentence_count(), 50);
        assert_eq!(c.documents().len(), 10);
        for s in c.sentences() {
            let p = s
                .entities()
                .iter()
                .find(|e| e.category == Category::P)
                .unwrap();
            let i = s
                .entities()
                .iter()
                .find(|e| e.category == Category::I)
                .unwrap();
            assert!(p.start <= i.start && i.end <= p.end && p != i);
            assert!(p.width() > i.width());
        }
    }

    #[test]
    fn distractor_entities_are_disjoint() {
        let c = distractor_corpus(40, 2);
        for s in c.sentences() {
            assert!(!s.has_overlap());
            assert!(s.entities().len() >= 2);
        }
    }

    #[test]
    fn seeded() {
        assert_eq!(nested_corpus(10, 5), nested_corpus(10, 5));
        assert_ne!(nested_corpus(10, 5), nested_corpus(10, 6));
    }
}
