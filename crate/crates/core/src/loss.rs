//! Cross-entropy objectives of both heads and their combination.

use serde::{Deserialize, Serialize};

use crate::data::{BioSequence, LabeledExample};
use crate::error::{Error, Result};
use crate::span_head::SpanLogits;
use crate::tape::{sigmoid, ParamId, Tape, Var};

/// How the span and sequence-labeling losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `L = L_span + L_ner`.
    #[default]
    Sum,
    /// `L = α·L_span + (1 − α)·L_ner` with `α = sigmoid(raw)` learned.
    LearnableAlpha,
}

/// Component losses of one forward pass (or a batch mean).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub span: f64,
    pub ner: f64,
    /// Current α; 0.5 in sum mode.
    pub alpha: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.span.is_finite() && self.ner.is_finite()
    }
}

/// Start/end targets per field in sentinel coordinates: position 0 for a
/// field without gold spans, otherwise the first gold span shifted by one.
pub fn span_targets(example: &LabeledExample, m: usize) -> Result<Vec<(usize, usize)>> {
    let n = example.document.len();
    (0..m)
        .map(|field| match example.spans_for(field).first() {
            None => Ok((0, 0)),
            Some(s) if s.start <= s.end && s.end < n => Ok((s.start + 1, s.end + 1)),
            Some(s) => Err(Error::validation(
                &example.document.doc_id,
                format!("#{field}"),
                format!("gold span {s} out of range for {n} tokens"),
            )),
        })
        .collect()
}

/// Mean over fields of `CE(start) + CE(end)`.
pub fn span_loss(tape: &mut Tape, logits: SpanLogits, targets: &[(usize, usize)]) -> Result<Var> {
    let (m, positions) = tape.value(logits.start).dim();
    if targets.len() != m {
        return Err(Error::Dimension(format!(
            "{} span targets for {m} fields",
            targets.len()
        )));
    }
    if let Some(&(s, e)) = targets.iter().find(|(s, e)| *s >= positions || *e >= positions) {
        return Err(Error::Dimension(format!(
            "span target ({s}, {e}) outside {positions} positions"
        )));
    }
    let starts: Vec<usize> = targets.iter().map(|t| t.0).collect();
    let ends: Vec<usize> = targets.iter().map(|t| t.1).collect();
    let ls = tape.cross_entropy(logits.start, &starts);
    let le = tape.cross_entropy(logits.end, &ends);
    Ok(tape.add(ls, le))
}

/// Mean over tokens of the label cross-entropy.
pub fn ner_loss(tape: &mut Tape, logits: Var, gold: &BioSequence) -> Result<Var> {
    let (n, labels) = tape.value(logits).dim();
    if gold.labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} gold labels for {n} tokens",
            gold.labels.len()
        )));
    }
    if let Some(&l) = gold.labels.iter().find(|&&l| l >= labels) {
        return Err(Error::Dimension(format!("gold label {l} outside {labels} labels")));
    }
    Ok(tape.cross_entropy(logits, &gold.labels))
}

/// Combines both losses; returns the total node and the α in effect.
pub fn combine_losses(
    tape: &mut Tape,
    span: Var,
    ner: Var,
    mode: LossMode,
    alpha_raw: Option<ParamId>,
) -> Result<(Var, f64)> {
    match mode {
        LossMode::Sum => Ok((tape.add(span, ner), 0.5)),
        LossMode::LearnableAlpha => {
            let raw = alpha_raw.ok_or_else(|| {
                Error::Config("learnable_alpha loss needs an alpha parameter".into())
            })?;
            let raw = tape.param(raw);
            let alpha = tape.sigmoid(raw);
            let one_minus = tape.affine(alpha, -1.0, 1.0);
            let a = tape.mul(alpha, span);
            let b = tape.mul(one_minus, ner);
            let value = tape.scalar(alpha);
            Ok((tape.add(a, b), value))
        }
    }
}

/// Inverse of the α squash.
pub fn alpha_logit(alpha: f64) -> f64 {
    (alpha / (1.0 - alpha)).ln()
}

pub fn alpha_from_raw(raw: f64) -> f64 {
    sigmoid(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Document, Span, SpanAnnotation};
    use crate::tape::ParamStore;
    use ndarray::{array, Array2};

    fn example(n: usize, anns: Vec<SpanAnnotation>) -> LabeledExample {
        LabeledExample {
            document: Document::new("d", (0..n).map(|i| format!("t{i}")).collect()).unwrap(),
            annotations: anns,
        }
    }

    #[test]
    fn targets_use_sentinel_and_first_span() {
        let ex = example(
            6,
            vec![SpanAnnotation {
                field_index: 0,
                spans: vec![Span::new(1, 2), Span::new(4, 5)],
            }],
        );
        assert_eq!(span_targets(&ex, 2).unwrap(), vec![(2, 3), (0, 0)]);
        let bad = example(
            3,
            vec![SpanAnnotation {
                field_index: 0,
                spans: vec![Span::new(1, 5)],
            }],
        );
        assert!(span_targets(&bad, 1).is_err());
    }

    #[test]
    fn uniform_span_scores_give_log_positions() {
        let params = ParamStore::new();
        let mut tape = Tape::new(&params);
        let start = tape.input(Array2::zeros((2, 4)));
        let end = tape.input(Array2::zeros((2, 4)));
        let l = span_loss(&mut tape, SpanLogits { start, end }, &[(1, 2), (0, 0)]).unwrap();
        // Two terms of ln 4 each.
        assert!((tape.scalar(l) - 2.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_span_scores_give_zero() {
        let params = ParamStore::new();
        let mut tape = Tape::new(&params);
        let mut s = Array2::zeros((1, 4));
        s[[0, 2]] = 800.0;
        let start = tape.input(s.clone());
        let end = tape.input(s);
        let l = span_loss(&mut tape, SpanLogits { start, end }, &[(2, 2)]).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
    }

    #[test]
    fn ner_loss_hand_case() {
        let params = ParamStore::new();
        let mut tape = Tape::new(&params);
        let logits = tape.input(array![[1.0, 0.0, 0.0], [0.0, 2.0, -1.0]]);
        let l = ner_loss(&mut tape, logits, &BioSequence { labels: vec![0, 2] }).unwrap();
        let row0 = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        let z1 = 1.0 + 2f64.exp() + (-1f64).exp();
        let row1 = -((-1f64).exp() / z1).ln();
        assert!((tape.scalar(l) - 0.5 * (row0 + row1)).abs() < 1e-12);

        let uniform = tape.input(Array2::zeros((4, 3)));
        let l = ner_loss(&mut tape, uniform, &BioSequence { labels: vec![0, 1, 2, 0] }).unwrap();
        assert!((tape.scalar(l) - 3f64.ln()).abs() < 1e-12);
        assert!(ner_loss(&mut tape, uniform, &BioSequence { labels: vec![0] }).is_err());
    }

    #[test]
    fn combination_modes() {
        let mut params = ParamStore::new();
        let raw = params.add("alpha.raw", array![[0.0]]);
        let mut tape = Tape::new(&params);
        let s = tape.input(array![[0.5]]);
        let n = tape.input(array![[0.3]]);
        let (sum, a) = combine_losses(&mut tape, s, n, LossMode::Sum, None).unwrap();
        assert!((tape.scalar(sum) - 0.8).abs() < 1e-15);
        assert_eq!(a, 0.5);
        let (lin, a) = combine_losses(&mut tape, s, n, LossMode::LearnableAlpha, Some(raw)).unwrap();
        assert!((tape.scalar(lin) - 0.4).abs() < 1e-15);
        assert_eq!(a, 0.5);
        assert!(combine_losses(&mut tape, s, n, LossMode::LearnableAlpha, None).is_err());
    }

    #[test]
    fn alpha_gradient_is_loss_difference_times_squash_slope() {
        let mut params = ParamStore::new();
        let raw = params.add("alpha.raw", array![[0.3]]);
        let f = |p: &ParamStore| {
            let mut tape = Tape::new(p);
            let s = tape.input(array![[0.9]]);
            let n = tape.input(array![[0.2]]);
            let (l, _) = combine_losses(&mut tape, s, n, LossMode::LearnableAlpha, Some(raw)).unwrap();
            (tape.scalar(l), tape.backward(l))
        };
        let (_, grads) = f(&params);
        let analytic = grads.get(raw).unwrap()[[0, 0]];
        let eps = 1e-6;
        let mut plus = params.clone();
        plus.get_mut(raw)[[0, 0]] += eps;
        let mut minus = params.clone();
        minus.get_mut(raw)[[0, 0]] -= eps;
        let numeric = (f(&plus).0 - f(&minus).0) / (2.0 * eps);
        assert!((analytic - numeric).abs() < 1e-8);
        // dL/dα = L_span − L_ner, chained through the sigmoid slope.
        let a = sigmoid(0.3);
        assert!((analytic - (0.9 - 0.2) * a * (1.0 - a)).abs() < 1e-12);
        assert!((alpha_from_raw(alpha_logit(0.3)) - 0.3).abs() < 1e-12);
    }
}
