//! Span-level exact-match evaluation.
//!
//! A prediction counts as a true positive only when its start, end, and
//! category all equal a gold entity of the same sentence. Precision, recall,
//! and F1 are reported per category, micro-averaged (pooled counts), and
//! macro-averaged (unweighted mean of the per-category values, F1 included).
//! Every ratio with a zero denominator is 0.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{Category, Corpus, Entity, Sentence};
use crate::error::{Error, Result};
use crate::predictions::SentencePrediction;
use crate::spanclass::LabeledSpan;

type Triple = (usize, usize, Category);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// True positive, false positive, and false negative counts per category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub per_category: [Counts; 3],
}

impl MatchCounts {
    pub fn get(&self, c: Category) -> Counts {
        self.per_category[c.index()]
    }

    pub fn micro(&self) -> Counts {
        let mut total = Counts::default();
        self.per_category.iter().for_each(|c| total.add(*c));
        total
    }

    pub fn add(&mut self, other: &MatchCounts) {
        for (a, b) in self.per_category.iter_mut().zip(&other.per_category) {
            a.add(*b);
        }
    }

    fn bump(&mut self, cat: Category, field: impl Fn(&mut Counts) -> &mut usize) {
        *field(&mut self.per_category[cat.index()]) += 1;
    }
}

impl Serialize for MatchCounts {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let map: BTreeMap<Category, Counts> =
            Category::ALL.iter().map(|c| (*c, self.get(*c))).collect();
        map.serialize(s)
    }
}

/// Precision, recall, F1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(c: Counts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        Prf {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }

    /// Component-wise mean of per-category values.
    pub fn macro_average(items: &[Prf]) -> Self {
        if items.is_empty() {
            return Prf::default();
        }
        let n = items.len() as f64;
        Prf {
            precision: items.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: items.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: items.iter().map(|p| p.f1).sum::<f64>() / n,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn pred_triples(pred: &[LabeledSpan]) -> HashSet<Triple> {
    pred.iter().map(|s| (s.start, s.end, s.category)).collect()
}

fn gold_triples(gold: &[Entity]) -> HashSet<Triple> {
    gold.iter().map(|e| (e.start, e.end, e.category)).collect()
}

/// Exact-match counts for one sentence. Duplicate triples count once.
pub fn match_spans(pred: &[LabeledSpan], gold: &[Entity]) -> MatchCounts {
    let p = pred_triples(pred);
    let g = gold_triples(gold);
    let mut counts = MatchCounts::default();
    for t in &p {
        if g.contains(t) {
            counts.bump(t.2, |c| &mut c.tp);
        } else {
            counts.bump(t.2, |c| &mut c.fp);
        }
    }
    for t in g.difference(&p) {
        counts.bump(t.2, |c| &mut c.fn_);
    }
    counts
}

/// Per-category, micro, and macro scores for one set of counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub counts: MatchCounts,
    pub per_category: BTreeMap<Category, Prf>,
    pub micro: Prf,
    #[serde(rename = "macro")]
    pub macro_: Prf,
}

pub fn metrics(counts: &MatchCounts) -> Summary {
    let per: Vec<Prf> = counts
        .per_category
        .iter()
        .map(|c| Prf::from_counts(*c))
        .collect();
    Summary {
        counts: *counts,
        per_category: Category::ALL
            .iter()
            .copied()
            .zip(per.iter().copied())
            .collect(),
        micro: Prf::from_counts(counts.micro()),
        macro_: Prf::macro_average(&per),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// Sentences with token-sharing gold entities vs. the rest.
    Overlap,
    /// Entity length buckets: 1, 2-5, more than 5 tokens.
    Length(LengthConvention),
}

/// How predictions are assigned to length buckets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthConvention {
    /// Gold entities by their own length (recall side), predictions by their
    /// own length (precision side).
    #[default]
    Split,
    /// False positives take the bucket of the gold entity they overlap most,
    /// falling back to their own length.
    NearestGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LengthBucket {
    One,
    TwoToFive,
    MoreThanFive,
}

impl LengthBucket {
    pub const ALL: [LengthBucket; 3] = [
        LengthBucket::One,
        LengthBucket::TwoToFive,
        LengthBucket::MoreThanFive,
    ];

    pub fn of(width: usize) -> Self {
        match width {
            0 | 1 => LengthBucket::One,
            2..=5 => LengthBucket::TwoToFive,
            _ => LengthBucket::MoreThanFive,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LengthBucket::One => "1",
            LengthBucket::TwoToFive => "2-5",
            LengthBucket::MoreThanFive => ">5",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: String,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: Summary,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupReport>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    group: &'a str,
    category: &'a str,
    tp: Option<usize>,
    fp: Option<usize>,
    #[serde(rename = "fn")]
    fn_: Option<usize>,
    precision: f64,
    recall: f64,
    f1: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat table, one row per group and category plus micro and macro rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let all = std::iter::once(("all", &self.overall))
            .chain(self.groups.iter().map(|g| (g.group.as_str(), &g.summary)));
        for (group, s) in all {
            for c in Category::ALL {
                let counts = s.counts.get(c);
                let prf = s.per_category[&c];
                out.serialize(CsvRow {
                    group,
                    category: c.as_str(),
                    tp: Some(counts.tp),
                    fp: Some(counts.fp),
                    fn_: Some(counts.fn_),
                    precision: prf.precision,
                    recall: prf.recall,
                    f1: prf.f1,
                })?;
            }
            let micro = s.counts.micro();
            out.serialize(CsvRow {
                group,
                category: "micro",
                tp: Some(micro.tp),
                fp: Some(micro.fp),
                fn_: Some(micro.fn_),
                precision: s.micro.precision,
                recall: s.micro.recall,
                f1: s.micro.f1,
            })?;
            out.serialize(CsvRow {
                group,
                category: "macro",
                tp: None,
                fp: None,
                fn_: None,
                precision: s.macro_.precision,
                recall: s.macro_.recall,
                f1: s.macro_.f1,
            })?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Pairs every gold sentence with its predictions. Both sides must cover
/// exactly the same uids.
fn align<'a>(
    pred: &'a [SentencePrediction],
    gold: &'a Corpus,
) -> Result<Vec<(&'a Sentence, &'a [LabeledSpan])>> {
    let mut by_uid: HashMap<&str, &[LabeledSpan]> = HashMap::with_capacity(pred.len());
    for p in pred {
        if by_uid.insert(p.uid.as_str(), &p.spans).is_some() {
            return Err(Error::UidMismatch(format!(
                "uid {:?} predicted twice",
                p.uid
            )));
        }
    }
    let mut out = Vec::with_capacity(by_uid.len());
    for s in gold.sentences() {
        let spans = by_uid
            .remove(s.uid())
            .ok_or_else(|| Error::UidMismatch(format!("no prediction for {:?}", s.uid())))?;
        out.push((s, spans));
    }
    if let Some(uid) = by_uid.keys().min() {
        return Err(Error::UidMismatch(format!(
            "prediction for unknown uid {uid:?}"
        )));
    }
    Ok(out)
}

/// Scores predictions against the gold corpus, optionally with a breakdown.
pub fn evaluate(
    pred: &[SentencePrediction],
    gold: &Corpus,
    grouping: Option<Grouping>,
) -> Result<EvalReport> {
    let aligned = align(pred, gold)?;
    let mut total = MatchCounts::default();
    for (s, spans) in &aligned {
        total.add(&match_spans(spans, s.entities()));
    }
    let groups = match grouping {
        None => Vec::new(),
        Some(Grouping::Overlap) => overlap_groups(&aligned),
        Some(Grouping::Length(conv)) => length_groups(&aligned, conv),
    };
    Ok(EvalReport {
        overall: metrics(&total),
        groups,
    })
}

fn overlap_groups(aligned: &[(&Sentence, &[LabeledSpan])]) -> Vec<GroupReport> {
    let mut over = MatchCounts::default();
    let mut non = MatchCounts::default();
    for (s, spans) in aligned {
        let c = match_spans(spans, s.entities());
        if s.has_overlap() {
            over.add(&c);
        } else {
            non.add(&c);
        }
    }
    vec![
        GroupReport {
            group: "overlapped".into(),
            summary: metrics(&over),
        },
        GroupReport {
            group: "non-overlapped".into(),
            summary: metrics(&non),
        },
    ]
}

fn length_groups(
    aligned: &[(&Sentence, &[LabeledSpan])],
    conv: LengthConvention,
) -> Vec<GroupReport> {
    let mut buckets: BTreeMap<LengthBucket, MatchCounts> = LengthBucket::ALL
        .iter()
        .map(|b| (*b, MatchCounts::default()))
        .collect();
    for (s, spans) in aligned {
        let p = pred_triples(spans);
        let g = gold_triples(s.entities());
        for t in &p {
            let width = t.1 + 1 - t.0;
            if g.contains(t) {
                buckets
                    .get_mut(&LengthBucket::of(width))
                    .unwrap()
                    .bump(t.2, |c| &mut c.tp);
            } else {
                let bucket = match conv {
                    LengthConvention::Split => LengthBucket::of(width),
                    LengthConvention::NearestGold => nearest_gold_width(t, s.entities())
                        .map_or(LengthBucket::of(width), LengthBucket::of),
                };
                buckets.get_mut(&bucket).unwrap().bump(t.2, |c| &mut c.fp);
            }
        }
        for t in g.difference(&p) {
            let width = t.1 + 1 - t.0;
            buckets
                .get_mut(&LengthBucket::of(width))
                .unwrap()
                .bump(t.2, |c| &mut c.fn_);
        }
    }
    buckets
        .into_iter()
        .map(|(b, c)| GroupReport {
            group: b.name().into(),
            summary: metrics(&c),
        })
        .collect()
}

/// Width of the gold entity sharing the most tokens with `t`; ties go to
/// the earliest entity in (start, end) order.
fn nearest_gold_width(t: &Triple, gold: &[Entity]) -> Option<usize> {
    let mut sorted: Vec<&Entity> = gold.iter().collect();
    sorted.sort();
    let mut best: Option<(usize, usize)> = None;
    for e in sorted {
        let lo = e.start.max(t.0);
        let hi = e.end.min(t.1);
        if lo > hi {
            continue;
        }
        let shared = hi - lo + 1;
        if best.is_none_or(|(s, _)| shared > s) {
            best = Some((shared, e.width()));
        }
    }
    best.map(|(_, w)| w)
}

/// Micro F1 of each document, in corpus order.
pub fn per_document_f1(pred: &[SentencePrediction], gold: &Corpus) -> Result<Vec<(String, f64)>> {
    let aligned = align(pred, gold)?;
    let mut by_uid: HashMap<&str, &[LabeledSpan]> =
        aligned.iter().map(|(s, p)| (s.uid(), *p)).collect();
    Ok(gold
        .documents()
        .iter()
        .map(|d| {
            let mut c = MatchCounts::default();
            for s in &d.sentences {
                let spans = by_uid.remove(s.uid()).unwrap_or(&[]);
                c.add(&match_spans(spans, s.entities()));
            }
            (d.doc_id.clone(), Prf::from_counts(c.micro()).f1)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t_statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    /// Set when every difference is identical, so the t statistic is
    /// undefined; `t` is then 0 (no difference) or infinite.
    pub zero_variance: bool,
}

/// Paired t-test on `a[i] - b[i]`.
pub fn paired_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewUnits(n));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    // Differences equal up to rounding (0.6 - 0.5 vs 0.7 - 0.6) count as
    // constant.
    if sd <= 1e-12 * mean.abs().max(1.0) {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok(PairedTest {
            n,
            mean_difference: mean,
            t_statistic: t,
            p_value: p,
            zero_variance: true,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(PairedTest {
        n,
        mean_difference: mean,
        t_statistic: t,
        p_value: p,
        zero_variance: false,
    })
}
