//! Extraction metrics: first-span token F1, exact-match entity micro F1 and
//! multi-span recall.

mod predictions;
pub mod synthetic;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregatedExtraction;
use crate::data::{FieldSchema, LabeledExample, Span};
use crate::error::{Error, Result};
use crate::model::DocumentPrediction;

pub use predictions::{predictions_from_json, predictions_to_json, FieldOutput, PredictionFile};

/// The aggregated output of one document, as scored by the metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub extraction: AggregatedExtraction,
}

impl From<&DocumentPrediction> for PredictionRecord {
    fn from(p: &DocumentPrediction) -> Self {
        Self {
            doc_id: p.doc_id.clone(),
            extraction: p.aggregated.clone(),
        }
    }
}

/// Token-index F1 between two spans.
pub fn span_f1(pred: Span, gold: Span) -> f64 {
    let overlap = pred.intersection_len(&gold) as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / pred.len() as f64;
    let r = overlap / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Score of one (document, field) pair: both empty is 1, one empty is 0,
/// otherwise the best F1 against any gold span.
pub fn first_span_f1(pred: Option<Span>, gold: &[Span]) -> f64 {
    match (pred, gold.is_empty()) {
        (None, true) => 1.0,
        (None, false) | (Some(_), true) => 0.0,
        (Some(p), false) => gold.iter().map(|&g| span_f1(p, g)).fold(0.0, f64::max),
    }
}

/// Exact-match counts of one field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn between(pred: &[Span], gold: &[Span]) -> Self {
        let pred: BTreeSet<Span> = pred.iter().copied().collect();
        let gold: BTreeSet<Span> = gold.iter().copied().collect();
        let tp = pred.intersection(&gold).count();
        Self {
            tp,
            fp: pred.len() - tp,
            fn_: gold.len() - tp,
        }
    }

    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2TP / (2TP + FP + FN)`; 1 when there is nothing to find and nothing found.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Which gold fields enter multi-span recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallScope {
    /// Only fields with two or more gold spans.
    #[default]
    MultiSpan,
    /// Every gold span.
    AllSpans,
}

/// Pairs every gold example with its prediction by `doc_id`.
fn align<'a>(
    preds: &'a [PredictionRecord],
    gold: &'a [LabeledExample],
) -> Result<Vec<(&'a AggregatedExtraction, &'a LabeledExample)>> {
    if preds.len() != gold.len() {
        return Err(Error::Format {
            context: "predictions".into(),
            message: format!("{} predictions for {} gold documents", preds.len(), gold.len()),
        });
    }
    let by_id: HashMap<&str, &AggregatedExtraction> =
        preds.iter().map(|p| (p.doc_id.as_str(), &p.extraction)).collect();
    gold.iter()
        .map(|g| {
            by_id
                .get(g.document.doc_id.as_str())
                .map(|p| (*p, g))
                .ok_or_else(|| Error::Format {
                    context: "predictions".into(),
                    message: format!("no prediction for document {:?}", g.document.doc_id),
                })
        })
        .collect()
}

fn check_width(pred: &AggregatedExtraction, m: usize, doc_id: &str) -> Result<()> {
    if pred.fields.len() != m {
        return Err(Error::SchemaMismatch(format!(
            "prediction for {doc_id:?} has {} fields, expected m = {m}",
            pred.fields.len()
        )));
    }
    Ok(())
}

/// Mean first-span F1 over every (document, field) pair.
pub fn squad_f1(preds: &[PredictionRecord], gold: &[LabeledExample], m: usize) -> Result<f64> {
    let pairs = align(preds, gold)?;
    if pairs.is_empty() {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for (p, g) in &pairs {
        check_width(p, m, &g.document.doc_id)?;
        for field in 0..m {
            total += first_span_f1(p.first_span(field), g.spans_for(field));
        }
    }
    Ok(total / (pairs.len() * m) as f64)
}

/// Per-field exact-match counts over every aggregated span.
pub fn conll_counts(preds: &[PredictionRecord], gold: &[LabeledExample], m: usize) -> Result<Vec<Counts>> {
    let mut counts = vec![Counts::default(); m];
    for (p, g) in align(preds, gold)? {
        check_width(p, m, &g.document.doc_id)?;
        for (field, c) in counts.iter_mut().enumerate() {
            let pred: Vec<Span> = p.spans(field).collect();
            c.add(Counts::between(&pred, g.spans_for(field)));
        }
    }
    Ok(counts)
}

/// Micro-averaged exact-match F1.
pub fn conll_f1(preds: &[PredictionRecord], gold: &[LabeledExample], m: usize) -> Result<f64> {
    let mut total = Counts::default();
    for c in conll_counts(preds, gold, m)? {
        total.add(c);
    }
    Ok(total.f1())
}

/// Share of in-scope gold spans predicted exactly; `None` with no gold span in scope.
pub fn multispan_recall(
    preds: &[PredictionRecord],
    gold: &[LabeledExample],
    m: usize,
    scope: RecallScope,
) -> Result<Option<f64>> {
    let (mut found, mut total) = (0usize, 0usize);
    for (p, g) in align(preds, gold)? {
        check_width(p, m, &g.document.doc_id)?;
        for field in 0..m {
            let spans = g.spans_for(field);
            let in_scope = match scope {
                RecallScope::MultiSpan => spans.len() >= 2,
                RecallScope::AllSpans => !spans.is_empty(),
            };
            if in_scope {
                let pred: BTreeSet<Span> = p.spans(field).collect();
                total += spans.len();
                found += spans.iter().filter(|s| pred.contains(s)).count();
            }
        }
    }
    Ok((total > 0).then(|| found as f64 / total as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub name: String,
    /// Number of gold spans.
    pub support: usize,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub documents: usize,
    pub squad_f1: f64,
    pub conll_micro_f1: f64,
    pub conll_fields: Vec<FieldReport>,
    pub multispan_recall: Option<f64>,
    pub recall_scope: RecallScope,
}

impl MetricReport {
    pub fn compute(
        preds: &[PredictionRecord],
        gold: &[LabeledExample],
        schema: &FieldSchema,
        scope: RecallScope,
    ) -> Result<Self> {
        let m = schema.len();
        let counts = conll_counts(preds, gold, m)?;
        let mut total = Counts::default();
        let conll_fields = counts
            .iter()
            .zip(schema.fields())
            .map(|(c, f)| {
                total.add(*c);
                FieldReport {
                    name: f.name.clone(),
                    support: c.tp + c.fn_,
                    counts: *c,
                    precision: c.precision(),
                    recall: c.recall(),
                    f1: c.f1(),
                }
            })
            .collect();
        Ok(Self {
            documents: gold.len(),
            squad_f1: squad_f1(preds, gold, m)?,
            conll_micro_f1: total.f1(),
            conll_fields,
            multispan_recall: multispan_recall(preds, gold, m, scope)?,
            recall_scope: scope,
        })
    }

    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let width = self
            .conll_fields
            .iter()
            .map(|f| f.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>9}  {:>6}  {:>6}",
            "field", "support", "precision", "recall", "f1"
        );
        for f in &self.conll_fields {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>9.4}  {:>6.4}  {:>6.4}",
                f.name, f.support, f.precision, f.recall, f.f1
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "documents          {}", self.documents);
        let _ = writeln!(out, "first-span F1      {:.4}", self.squad_f1);
        let _ = writeln!(out, "entity micro F1    {:.4}", self.conll_micro_f1);
        match self.multispan_recall {
            Some(r) => {
                let _ = writeln!(out, "multi-span recall  {r:.4}");
            }
            None => {
                let _ = writeln!(out, "multi-span recall  n/a");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{SourcedSpan, Source};
    use crate::data::{Document, SpanAnnotation};

    fn sp(s: usize, e: usize) -> Span {
        Span::new(s, e)
    }

    fn gold(id: &str, fields: Vec<Vec<Span>>) -> LabeledExample {
        LabeledExample {
            document: Document::new(id, (0..20).map(|i| format!("w{i}")).collect()).unwrap(),
            annotations: fields
                .into_iter()
                .enumerate()
                .filter(|(_, s)| !s.is_empty())
                .map(|(field_index, spans)| SpanAnnotation { field_index, spans })
                .collect(),
        }
    }

    fn pred(id: &str, fields: Vec<Vec<Span>>) -> PredictionRecord {
        PredictionRecord {
            doc_id: id.into(),
            extraction: AggregatedExtraction {
                fields: fields
                    .into_iter()
                    .map(|f| {
                        f.into_iter()
                            .map(|span| SourcedSpan { span, source: Source::NerHead })
                            .collect()
                    })
                    .collect(),
            },
        }
    }

    #[test]
    fn first_span_cases() {
        assert_eq!(first_span_f1(Some(sp(2, 4)), &[sp(2, 4)]), 1.0);
        assert!((first_span_f1(Some(sp(2, 4)), &[sp(3, 5)]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(first_span_f1(Some(sp(0, 1)), &[sp(5, 6)]), 0.0);
        assert_eq!(first_span_f1(Some(sp(0, 1)), &[]), 0.0);
        assert_eq!(first_span_f1(None, &[sp(0, 1)]), 0.0);
        assert_eq!(first_span_f1(None, &[]), 1.0);
        assert_eq!(first_span_f1(Some(sp(3, 5)), &[sp(0, 0), sp(3, 5)]), 1.0);
    }

    #[test]
    fn one_of_two_entities() {
        let g = [gold("a", vec![vec![sp(1, 2), sp(6, 7)]])];
        let p = [pred("a", vec![vec![sp(1, 2)]])];
        assert!((conll_f1(&p, &g, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(multispan_recall(&p, &g, 1, RecallScope::MultiSpan).unwrap(), Some(0.5));
    }

    #[test]
    fn off_by_one_is_fp_and_fn() {
        let c = Counts::between(&[sp(1, 3)], &[sp(1, 2)]);
        assert_eq!(c, Counts { tp: 0, fp: 1, fn_: 1 });
    }

    #[test]
    fn identical_and_disjoint() {
        let fields = vec![vec![sp(1, 2)], vec![sp(4, 4), sp(8, 9)]];
        let g = [gold("a", fields.clone())];
        let same = [pred("a", fields)];
        assert_eq!(squad_f1(&same, &g, 2).unwrap(), 1.0);
        assert_eq!(conll_f1(&same, &g, 2).unwrap(), 1.0);
        let disjoint = [pred("a", vec![vec![sp(10, 11)], vec![sp(15, 15)]])];
        assert_eq!(squad_f1(&disjoint, &g, 2).unwrap(), 0.0);
        assert_eq!(conll_f1(&disjoint, &g, 2).unwrap(), 0.0);
    }

    #[test]
    fn no_multispan_fields_is_undefined() {
        let g = [gold("a", vec![vec![sp(1, 2)]])];
        let p = [pred("a", vec![vec![sp(1, 2)]])];
        assert_eq!(multispan_recall(&p, &g, 1, RecallScope::MultiSpan).unwrap(), None);
        assert_eq!(multispan_recall(&p, &g, 1, RecallScope::AllSpans).unwrap(), Some(1.0));
    }

    #[test]
    fn mismatched_documents_error() {
        let g = [gold("a", vec![vec![]])];
        assert!(squad_f1(&[pred("b", vec![vec![]])], &g, 1).is_err());
        assert!(squad_f1(&[], &g, 1).is_err());
        assert!(squad_f1(&[pred("a", vec![vec![], vec![]])], &g, 1).is_err());
    }

    #[test]
    fn report_is_consistent() {
        let schema = FieldSchema::from_names(&["x", "y"]).unwrap();
        let g = [
            gold("a", vec![vec![sp(1, 2), sp(5, 5)], vec![]]),
            gold("b", vec![vec![], vec![sp(3, 3)]]),
        ];
        let p = [
            pred("b", vec![vec![], vec![sp(3, 3), sp(9, 9)]]),
            pred("a", vec![vec![sp(1, 2)], vec![]]),
        ];
        let r = MetricReport::compute(&p, &g, &schema, RecallScope::MultiSpan).unwrap();
        let tp: usize = r.conll_fields.iter().map(|f| f.counts.tp).sum();
        let fp: usize = r.conll_fields.iter().map(|f| f.counts.fp).sum();
        let fn_: usize = r.conll_fields.iter().map(|f| f.counts.fn_).sum();
        assert_eq!((tp, fp, fn_), (2, 1, 1));
        assert!((r.conll_micro_f1 - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.squad_f1, 1.0);
        assert_eq!(r.multispan_recall, Some(0.5));
        assert!(r.to_table().contains("multi-span recall  0.5000"));
    }
}
