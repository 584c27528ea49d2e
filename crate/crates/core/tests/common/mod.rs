//! Reference implementations shared by the integration tests. They are
//! deliberately naive and written without the library's helpers.

#![allow(dead_code)]

use std::collections::BTreeSet;

use jointie::aggregation::Source;
use jointie::data::{Document, FieldSchema, LabeledExample, Span, SpanAnnotation};
use jointie::encoder::{ToyTransformerConfig, Vocabulary};
use jointie::model::{build_vocabulary, ExtractionModel, JointConfig, JointModel, PreparedExample};
use jointie::loss::LossMode;
use jointie::tape::ParamId;
use ndarray::Array2;
use rand::Rng;

/// Window starts: 0, s, 2s, ... until a window reaches the last position.
pub fn brute_window_starts(n: usize, lw: usize, sw: usize) -> Vec<usize> {
    let mut starts = vec![0];
    while starts.last().unwrap() + lw < n {
        starts.push(starts.last().unwrap() + sw);
    }
    starts
}

/// Per-position mean of the window encodings that contain the position.
pub fn brute_window_average(
    n: usize,
    lw: usize,
    sw: usize,
    encode: impl Fn(usize, usize) -> Array2<f64>,
) -> Array2<f64> {
    let mut sums: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut counts = vec![0usize; n];
    for start in brute_window_starts(n, lw, sw) {
        let end = (start + lw).min(n);
        let enc = encode(start, end);
        for pos in start..end {
            let row = enc.row(pos - start);
            let acc = sums[pos].get_or_insert_with(|| vec![0.0; row.len()]);
            for (a, v) in acc.iter_mut().zip(row.iter()) {
                *a += v;
            }
            counts[pos] += 1;
        }
    }
    let c = sums[0].as_ref().unwrap().len();
    let mut out = Array2::zeros((n, c));
    for pos in 0..n {
        for j in 0..c {
            out[[pos, j]] = sums[pos].as_ref().unwrap()[j] / counts[pos] as f64;
        }
    }
    out
}

/// Span-priority merge, by token sets.
pub fn brute_aggregate(span: Option<Span>, ner: &[Span]) -> Vec<(usize, usize, Source)> {
    let anchor: BTreeSet<usize> = span.map(|s| (s.start..=s.end).collect()).unwrap_or_default();
    let mut out: Vec<(usize, usize, Source)> = Vec::new();
    if let Some(s) = span {
        out.push((s.start, s.end, Source::SpanHead));
    }
    for s in ner {
        let tokens: BTreeSet<usize> = (s.start..=s.end).collect();
        if tokens.is_disjoint(&anchor) && !out.contains(&(s.start, s.end, Source::NerHead)) {
            out.push((s.start, s.end, Source::NerHead));
        }
    }
    out.sort_by(|a, b| {
        let rank = |s: Source| if s == Source::SpanHead { 0 } else { 1 };
        (a.0, rank(a.2), a.1).cmp(&(b.0, rank(b.2), b.1))
    });
    out
}

/// Tag strings in the classic `B-X` / `I-X` / `O` form.
pub fn tags_from_spans(n: usize, spans: &[(usize, Span)], names: &[&str]) -> Vec<String> {
    let mut tags = vec!["O".to_string(); n];
    for (field, s) in spans {
        tags[s.start] = format!("B-{}", names[*field]);
        for t in tags.iter_mut().take(s.end + 1).skip(s.start + 1) {
            *t = format!("I-{}", names[*field]);
        }
    }
    tags
}

fn split_tag(tag: &str) -> (char, &str) {
    match tag.split_once('-') {
        Some((p, t)) => (p.chars().next().unwrap(), t),
        None => ('O', ""),
    }
}

fn chunk_end(prev: (char, &str), cur: (char, &str)) -> bool {
    match (prev.0, cur.0) {
        ('B', 'B') | ('B', 'O') | ('I', 'B') | ('I', 'O') => true,
        ('B', 'I') | ('I', 'I') => prev.1 != cur.1,
        _ => false,
    }
}

fn chunk_start(prev: (char, &str), cur: (char, &str)) -> bool {
    match (prev.0, cur.0) {
        (_, 'B') => true,
        ('O', 'I') => true,
        ('B', 'I') | ('I', 'I') => prev.1 != cur.1,
        _ => false,
    }
}

/// Chunks of a tag sequence as `(type, start, end)`, following the classic
/// chunk-boundary rules.
pub fn chunks(tags: &[String]) -> BTreeSet<(String, usize, usize)> {
    let mut out = BTreeSet::new();
    let mut open: Option<(String, usize)> = None;
    let mut prev = ('O', "");
    for (i, tag) in tags.iter().enumerate() {
        let cur = split_tag(tag);
        if let Some((ty, s)) = &open {
            if chunk_end(prev, cur) {
                out.insert((ty.clone(), *s, i - 1));
                open = None;
            }
        }
        if chunk_start(prev, cur) {
            open = Some((cur.1.to_string(), i));
        }
        prev = cur;
    }
    if let Some((ty, s)) = open {
        out.insert((ty, s, tags.len() - 1));
    }
    out
}

/// Micro F1 from gold and guessed tag sequences of many sentences.
pub fn reference_conll_f1(cases: &[(Vec<String>, Vec<String>)]) -> f64 {
    let (mut correct, mut guessed, mut gold) = (0usize, 0usize, 0usize);
    for (g, p) in cases {
        let gc = chunks(g);
        let pc = chunks(p);
        correct += gc.intersection(&pc).count();
        guessed += pc.len();
        gold += gc.len();
    }
    if guessed + gold == 0 {
        return 1.0;
    }
    let precision = if guessed == 0 { 0.0 } else { correct as f64 / guessed as f64 };
    let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Random non-overlapping spans over `n` tokens, each tagged with a field.
pub fn random_spans<R: Rng>(rng: &mut R, n: usize, m: usize) -> Vec<(usize, Span)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < n {
        pos += rng.random_range(0..4);
        if pos >= n {
            break;
        }
        let len = rng.random_range(1..=3).min(n - pos);
        out.push((rng.random_range(0..m), Span::new(pos, pos + len - 1)));
        pos += len + rng.random_range(0..2);
    }
    out
}

pub fn annotations(spans: &[(usize, Span)], m: usize) -> Vec<SpanAnnotation> {
    (0..m)
        .filter_map(|f| {
            let s: Vec<Span> = spans.iter().filter(|(g, _)| *g == f).map(|(_, s)| *s).collect();
            (!s.is_empty()).then_some(SpanAnnotation { field_index: f, spans: s })
        })
        .collect()
}

/// A small labeled example with two fields.
pub fn toy_example() -> (FieldSchema, LabeledExample) {
    let schema = FieldSchema::from_names(&["fee", "start date"]).unwrap();
    let tokens = "the fee is 40 usd and another fee : 90 usd while the start date is may 3"
        .split(' ')
        .map(String::from)
        .collect();
    let ex = LabeledExample {
        document: Document::new("toy", tokens).unwrap(),
        annotations: vec![
            SpanAnnotation { field_index: 0, spans: vec![Span::new(3, 4), Span::new(9, 10)] },
            SpanAnnotation { field_index: 1, spans: vec![Span::new(16, 17)] },
        ],
    };
    (schema, ex)
}

/// Joint model with encoder width `c`, two layers and the given windows.
pub fn toy_joint(schema: &FieldSchema, docs: &[&Document], c: usize, window: usize, stride: usize, seed: u64) -> JointModel {
    let vocab: Vocabulary = build_vocabulary(docs.iter().copied(), schema, 1);
    let cfg = JointConfig {
        encoder: ToyTransformerConfig {
            vocab_size: vocab.len(),
            embed_dim: c,
            num_layers: 2,
            num_heads: 2,
            feedforward_dim: 2 * c,
            max_position: window,
            dropout: 0.0,
            init_seed: seed,
        },
        query_dim: c,
        span_depth: 1,
        window_length: window,
        stride,
    };
    JointModel::new(cfg, schema.clone(), vocab).unwrap()
}

#[derive(Debug, Clone)]
pub struct FdSample {
    pub param: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl FdSample {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn rel_error(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

/// Central differences of the total loss at the given coordinates.
pub fn finite_differences<M: ExtractionModel>(
    model: &mut M,
    ex: &PreparedExample,
    mode: LossMode,
    coords: &[(ParamId, usize, usize)],
    eps: f64,
) -> Vec<FdSample> {
    let (_, grads) = model.loss_and_grads(ex, mode, None).unwrap();
    coords
        .iter()
        .map(|&(id, r, c)| {
            let analytic = grads.get(id).map_or(0.0, |g| g[[r, c]]);
            let orig = model.params().get(id)[[r, c]];
            model.params_mut().get_mut(id)[[r, c]] = orig + eps;
            let plus = model.loss(ex, mode).unwrap().total;
            model.params_mut().get_mut(id)[[r, c]] = orig - eps;
            let minus = model.loss(ex, mode).unwrap().total;
            model.params_mut().get_mut(id)[[r, c]] = orig;
            FdSample {
                param: model.params().name(id).to_string(),
                analytic,
                numeric: (plus - minus) / (2.0 * eps),
            }
        })
        .collect()
}
