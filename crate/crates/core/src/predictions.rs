//! Prediction dump: JSONL, one sentence per line,
//! `{"uid": .., "spans": [{"start", "end", "category", "score"}]}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spanclass::LabeledSpan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePrediction {
    pub uid: String,
    pub spans: Vec<LabeledSpan>,
}

pub fn write_jsonl<W: Write>(mut w: W, preds: &[SentencePrediction]) -> Result<()> {
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<SentencePrediction>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: idx + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Audit record for an augmented negative; `category` is always `"NONE"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeSpan {
    pub start: usize,
    pub end: usize,
    pub category: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceNegatives {
    pub uid: String,
    pub spans: Vec<NegativeSpan>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Category;

    #[test]
    fn schema() {
        let p = SentencePrediction {
            uid: "s1".into(),
            spans: vec![LabeledSpan {
                start: 0,
                end: 4,
                category: Category::P,
                score: 0.5,
            }],
        };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&p)).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"uid\":\"s1\",\"spans\":[{\"start\":0,\"end\":4,\"category\":\"P\",\"score\":0.5}]}\n"
        );
        assert_eq!(read_jsonl(&buf[..]).unwrap(), vec![p]);
        assert!(matches!(
            read_jsonl(&b"{\"uid\":1}\n"[..]),
            Err(Error::MalformedLine { line: 1, .. })
        ));
    }
}
