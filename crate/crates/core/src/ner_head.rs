//! Token classification into BIO labels: a dense layer and a per-token softmax
//! over the `2m + 1` labels.

use ndarray::Array2;
use rand::Rng;

use crate::data::{bio_decode, BioSequence, SpanAnnotation};
use crate::encoder::init_normal;
use crate::error::{Error, Result};
use crate::span_head::argmax;
use crate::tape::{softmax_rows, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct NerHead {
    num_labels: usize,
    encoder_dim: usize,
    weight: ParamId,
    bias: ParamId,
}

impl NerHead {
    /// Registers `ner.W` (`c x n_e`) and a zero `ner.bias`.
    pub fn new<R: Rng + ?Sized>(
        num_fields: usize,
        encoder_dim: usize,
        params: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let num_labels = 2 * num_fields + 1;
        let weight = params.add("ner.W", init_normal(encoder_dim, num_labels, rng));
        let bias = params.add("ner.bias", Array2::zeros((1, num_labels)));
        Self {
            num_labels,
            encoder_dim,
            weight,
            bias,
        }
    }

    pub fn bind(num_fields: usize, encoder_dim: usize, params: &ParamStore) -> Result<Self> {
        let num_labels = 2 * num_fields + 1;
        let weight = params
            .id("ner.W")
            .ok_or_else(|| Error::Checkpoint("missing parameter ner.W".into()))?;
        let bias = params
            .id("ner.bias")
            .ok_or_else(|| Error::Checkpoint("missing parameter ner.bias".into()))?;
        if params.get(weight).dim() != (encoder_dim, num_labels) {
            return Err(Error::Checkpoint(format!(
                "ner.W has shape {:?}, expected ({encoder_dim}, {num_labels})",
                params.get(weight).dim()
            )));
        }
        Ok(Self {
            num_labels,
            encoder_dim,
            weight,
            bias,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn weight_param(&self) -> ParamId {
        self.weight
    }

    pub fn bias_param(&self) -> ParamId {
        self.bias
    }

    /// `n x n_e` label logits for the document rows (sentinel excluded).
    pub fn logits(&self, tape: &mut Tape, encoded: Var) -> Result<Var> {
        let cols = tape.value(encoded).ncols();
        if cols != self.encoder_dim {
            return Err(Error::Dimension(format!(
                "NER head expects {}-wide encodings, got {cols}",
                self.encoder_dim
            )));
        }
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let x = tape.matmul(encoded, w);
        Ok(tape.add_row(x, b))
    }

    pub fn ner_scores(&self, params: &ParamStore, encoded: &Array2<f64>) -> Result<TokenLabelDistribution> {
        let mut tape = Tape::new(params);
        let h = tape.input(encoded.clone());
        let logits = self.logits(&mut tape, h)?;
        Ok(TokenLabelDistribution::from_logits(tape.value(logits)))
    }
}

/// Per-token label probabilities and their argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLabelDistribution {
    pub probs: Array2<f64>,
    pub argmax_labels: BioSequence,
}

impl TokenLabelDistribution {
    pub fn from_logits(logits: &Array2<f64>) -> Self {
        let probs = softmax_rows(logits);
        let labels = probs
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("softmax rows are contiguous")))
            .collect();
        Self {
            probs,
            argmax_labels: BioSequence { labels },
        }
    }
}

/// Decodes the argmax labels into spans.
pub fn ner_predict(dist: &TokenLabelDistribution, m: usize) -> Vec<SpanAnnotation> {
    bio_decode(&dist.argmax_labels, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Span;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(m: usize, c: usize) -> (NerHead, ParamStore) {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = NerHead::new(m, c, &mut params, &mut rng);
        (h, params)
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let (h, mut params) = head(2, 3);
        params.get_mut(h.weight_param()).fill(0.0);
        let dist = h.ner_scores(&params, &array![[1.0, 2.0, 3.0], [0.0, -1.0, 4.0]]).unwrap();
        assert!(dist.probs.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn three_label_softmax() {
        let d = TokenLabelDistribution::from_logits(&array![[2.0, 0.0, 0.0]]);
        let e2 = 2f64.exp();
        let expect = [e2 / (e2 + 2.0), 1.0 / (e2 + 2.0), 1.0 / (e2 + 2.0)];
        for (a, b) in d.probs.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((d.probs[[0, 0]] - 0.7870).abs() < 1e-4);
        assert!((d.probs[[0, 1]] - 0.1065).abs() < 1e-4);
    }

    #[test]
    fn rows_are_independent() {
        let (h, params) = head(2, 3);
        let a = h.ner_scores(&params, &array![[1.0, 2.0, 3.0], [0.0, -1.0, 4.0]]).unwrap();
        let b = h.ner_scores(&params, &array![[0.0, -1.0, 4.0], [1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(a.probs.row(0), b.probs.row(1));
        assert_eq!(a.probs.row(1), b.probs.row(0));
    }

    #[test]
    fn predict_decodes_argmax() {
        let one_hot = |labels: &[usize], ne: usize| {
            let mut l = Array2::zeros((labels.len(), ne));
            for (r, &k) in labels.iter().enumerate() {
                l[[r, k]] = 5.0;
            }
            TokenLabelDistribution::from_logits(&l)
        };
        let spans = ner_predict(&one_hot(&[0, 1, 2, 0], 3), 1);
        assert_eq!(spans[0].spans, vec![Span::new(1, 2)]);
        assert!(ner_predict(&one_hot(&[0, 0, 0], 5), 2).is_empty());
        let spans = ner_predict(&one_hot(&[3, 4, 3], 5), 2);
        assert_eq!(spans[0].field_index, 1);
        assert_eq!(spans[0].spans, vec![Span::new(0, 1), Span::new(2, 2)]);
    }

    #[test]
    fn wrong_width_is_an_error() {
        let (h, params) = head(1, 3);
        assert!(h.ner_scores(&params, &array![[1.0, 2.0]]).is_err());
    }
}
