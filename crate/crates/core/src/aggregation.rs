//! Span-priority merge of span-head and sequence-labeling outputs.

use serde::{Deserialize, Serialize};

use crate::data::{Span, SpanAnnotation};

/// Which head produced a span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "span")]
    SpanHead,
    #[serde(rename = "ner")]
    NerHead,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::SpanHead => "span",
            Source::NerHead => "ner",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcedSpan {
    pub span: Span,
    pub source: Source,
}

/// Final spans of every field, ordered by start with span-head spans first on
/// ties.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AggregatedExtraction {
    pub fields: Vec<Vec<SourcedSpan>>,
}

impl AggregatedExtraction {
    pub fn empty(m: usize) -> Self {
        Self {
            fields: vec![Vec::new(); m],
        }
    }

    /// The span with the lowest start, if any.
    pub fn first_span(&self, field: usize) -> Option<Span> {
        self.fields[field].first().map(|s| s.span)
    }

    pub fn spans(&self, field: usize) -> impl Iterator<Item = Span> + '_ {
        self.fields[field].iter().map(|s| s.span)
    }

    /// Keeps only spans from `source`.
    pub fn filter_source(&self, source: Source) -> Self {
        Self {
            fields: self
                .fields
                .iter()
                .map(|f| f.iter().copied().filter(|s| s.source == source).collect())
                .collect(),
        }
    }
}

/// For every field: keep the span-head span when there is one, plus every
/// sequence-labeling span of the same field that does not intersect it.
/// Spans of different fields never suppress each other.
pub fn aggregate(span_pred: &[Option<Span>], ner_spans: &[SpanAnnotation]) -> AggregatedExtraction {
    let m = span_pred.len();
    let mut fields: Vec<Vec<SourcedSpan>> = span_pred
        .iter()
        .map(|s| {
            s.map(|span| SourcedSpan {
                span,
                source: Source::SpanHead,
            })
            .into_iter()
            .collect()
        })
        .collect();
    for ann in ner_spans.iter().filter(|a| a.field_index < m) {
        let anchor = span_pred[ann.field_index];
        let out = &mut fields[ann.field_index];
        for &span in &ann.spans {
            if anchor.is_some_and(|a| a.overlaps(&span)) {
                continue;
            }
            out.push(SourcedSpan {
                span,
                source: Source::NerHead,
            });
        }
    }
    for f in &mut fields {
        f.sort_by_key(|s| (s.span.start, s.source, s.span.end));
        f.dedup();
    }
    AggregatedExtraction { fields }
}
