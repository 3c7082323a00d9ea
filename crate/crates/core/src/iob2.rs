//! IOB2 import and export.
//!
//! Lines are `token<TAB>tag` (any whitespace works on import), sentences are
//! separated by blank lines. Two optional marker lines carry structure that
//! plain IOB2 lacks: `-DOCSTART- <doc_id>` opens a document and
//! `# uid = <uid>` names the next sentence. Files without markers import as
//! one document per sentence with generated ids.
//!
//! IOB2 assigns one tag per token, so only corpora without overlapping
//! entities can be exported.

use std::fmt::Write as _;

use crate::corpus::{Category, Corpus, Document, Entity, Sentence};
use crate::error::{Error, Result};

const DOCSTART: &str = "-DOCSTART-";
const UID_MARKER: &str = "# uid = ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Outside,
    Begin(Category),
    Inside(Category),
}

fn parse_tag(tag: &str, line: usize) -> Result<Tag> {
    let unknown = || Error::UnknownTag {
        line,
        tag: tag.to_string(),
    };
    if tag == "O" {
        return Ok(Tag::Outside);
    }
    let (prefix, cat) = tag.split_once('-').ok_or_else(unknown)?;
    let cat: Category = cat.parse().map_err(|_| unknown())?;
    match prefix {
        "B" => Ok(Tag::Begin(cat)),
        "I" => Ok(Tag::Inside(cat)),
        _ => Err(unknown()),
    }
}

#[derive(Default)]
struct PendingSentence {
    uid: Option<String>,
    tokens: Vec<String>,
    entities: Vec<Entity>,
    open: Option<(usize, Category)>,
}

impl PendingSentence {
    fn close_open(&mut self) {
        if let Some((start, cat)) = self.open.take() {
            self.entities
                .push(Entity::new(start, self.tokens.len() - 1, cat));
        }
    }

    fn push(&mut self, token: &str, tag: Tag, line: usize, raw_tag: &str) -> Result<()> {
        match tag {
            Tag::Outside => self.close_open(),
            Tag::Begin(cat) => {
                self.close_open();
                self.open = Some((self.tokens.len(), cat));
            }
            Tag::Inside(cat) => match self.open {
                Some((_, open_cat)) if open_cat == cat => {}
                _ => {
                    return Err(Error::DanglingTag {
                        line,
                        tag: raw_tag.to_string(),
                    })
                }
            },
        }
        self.tokens.push(token.to_string());
        Ok(())
    }

    fn finish(mut self, fallback_uid: String) -> Result<Sentence> {
        self.close_open();
        Sentence::new(self.uid.unwrap_or(fallback_uid), self.tokens, self.entities)
    }
}

/// Parses IOB2 text into a corpus with non-overlapping entities.
pub fn import_iob2(text: &str) -> Result<Corpus> {
    let mut documents: Vec<Document> = Vec::new();
    let mut current: Option<Document> = None;
    let mut pending = PendingSentence::default();
    let mut sentence_no = 0usize;

    let mut flush = |pending: &mut PendingSentence,
                     current: &mut Option<Document>,
                     docs: &mut Vec<Document>|
     -> Result<()> {
        if pending.tokens.is_empty() {
            if pending.uid.is_some() {
                // a uid marker with no tokens after it
                pending.uid = None;
            }
            return Ok(());
        }
        let p = std::mem::take(pending);
        let sentence = p.finish(format!("s{sentence_no}"))?;
        sentence_no += 1;
        match current {
            Some(doc) => doc.sentences.push(sentence),
            None => docs.push(Document {
                doc_id: format!("d{}", docs.len()),
                sentences: vec![sentence],
            }),
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() {
            flush(&mut pending, &mut current, &mut documents)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix(DOCSTART) {
            flush(&mut pending, &mut current, &mut documents)?;
            if let Some(doc) = current.take() {
                documents.push(doc);
            }
            let id = rest.trim();
            current = Some(Document {
                doc_id: if id.is_empty() {
                    format!("d{}", documents.len())
                } else {
                    id.to_string()
                },
                sentences: Vec::new(),
            });
            continue;
        }
        if let Some(uid) = line.strip_prefix(UID_MARKER) {
            flush(&mut pending, &mut current, &mut documents)?;
            pending.uid = Some(uid.trim().to_string());
            continue;
        }
        let mut fields = line.split_whitespace();
        let (token, tag) = match (fields.next(), fields.next(), fields.next()) {
            (Some(tok), Some(tag), None) => (tok, tag),
            _ => {
                return Err(Error::MalformedLine {
                    line: lineno,
                    message: "expected `token<TAB>tag`".into(),
                })
            }
        };
        let parsed = parse_tag(tag, lineno)?;
        pending.push(token, parsed, lineno, tag)?;
    }
    flush(&mut pending, &mut current, &mut documents)?;
    if let Some(doc) = current.take() {
        documents.push(doc);
    }
    Corpus::new(documents)
}

/// Writes `corpus` as IOB2 with document and uid markers.
///
/// Fails on the first sentence whose entities share a token.
pub fn export_iob2(corpus: &Corpus) -> Result<String> {
    let mut out = String::new();
    for doc in corpus.documents() {
        writeln!(out, "{DOCSTART} {}", doc.doc_id).unwrap();
        out.push('\n');
        for s in &doc.sentences {
            if s.has_overlap() {
                return Err(Error::OverlappingExport(s.uid().to_string()));
            }
            let mut tags = vec![String::from("O"); s.len()];
            for e in s.entities() {
                tags[e.start] = format!("B-{}", e.category);
                for t in &mut tags[e.start + 1..=e.end] {
                    *t = format!("I-{}", e.category);
                }
            }
            writeln!(out, "{UID_MARKER}{}", s.uid()).unwrap();
            for (tok, tag) in s.tokens().iter().zip(&tags) {
                writeln!(out, "{tok}\t{tag}").unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}
