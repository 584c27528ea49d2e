//! Pairwise extraction baseline: one encoder pass per (field, window), with
//! the field's name tokens as a query in front of the window.

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::aggregate;
use crate::data::{Document, FieldSchema, LabeledExample, Span};
use crate::encoder::{init_normal, reborrow, ContextualEncoder, ToyTransformer, ToyTransformerConfig, Vocabulary, NULL};
use crate::error::{Error, Result};
use crate::loss::{span_loss, span_targets, LossMode};
use crate::model::{Checkpoint, DocumentPrediction, ExtractionModel, LossVars, ModelKind, PreparedExample};
use crate::span_head::{SpanLogits, SpanPrediction};
use crate::tape::{ParamId, ParamStore, Tape, Var};
use crate::windowing::{plan_windows, WindowPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseConfig {
    pub encoder: ToyTransformerConfig,
    pub window_length: usize,
    pub stride: usize,
}

impl PairwiseConfig {
    /// Encoder sized to hold the longest field query, a separator and a full
    /// document window.
    pub fn new(encoder: ToyTransformerConfig, schema: &FieldSchema, window_length: usize, stride: usize) -> Self {
        let mut encoder = encoder;
        encoder.max_position = window_length + max_query_len(schema) + 1;
        Self {
            encoder,
            window_length,
            stride,
        }
    }
}

fn max_query_len(schema: &FieldSchema) -> usize {
    schema.fields().iter().map(|f| f.name_tokens.len()).max().unwrap_or(0)
}

#[derive(Debug)]
pub struct PairwiseModel {
    config: PairwiseConfig,
    schema: FieldSchema,
    vocab: Vocabulary,
    params: ParamStore,
    encoder: ToyTransformer,
    start: ParamId,
    end: ParamId,
    queries: Vec<Vec<usize>>,
}

impl PairwiseModel {
    pub fn new(config: PairwiseConfig, schema: FieldSchema, vocab: Vocabulary) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.encoder.init_seed);
        let mut params = ParamStore::new();
        Self::check(&config, &schema, &vocab)?;
        ToyTransformer::new(config.encoder.clone(), &mut params, &mut rng)?;
        let c = config.encoder.embed_dim;
        params.add("pair.start", init_normal(1, c, &mut rng));
        params.add("pair.end", init_normal(1, c, &mut rng));
        Self::from_parts(config, schema, vocab, params)
    }

    pub(crate) fn from_parts(
        config: PairwiseConfig,
        schema: FieldSchema,
        vocab: Vocabulary,
        params: ParamStore,
    ) -> Result<Self> {
        Self::check(&config, &schema, &vocab)?;
        let encoder = ToyTransformer::bind(config.encoder.clone(), &params)?;
        let get = |name: &str| {
            params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let start = get("pair.start")?;
        let end = get("pair.end")?;
        let queries = schema
            .fields()
            .iter()
            .map(|f| vocab.ids(&f.name_tokens))
            .collect();
        Ok(Self {
            config,
            schema,
            vocab,
            params,
            encoder,
            start,
            end,
            queries,
        })
    }

    fn check(config: &PairwiseConfig, schema: &FieldSchema, vocab: &Vocabulary) -> Result<()> {
        plan_windows(1, config.window_length, config.stride)?;
        let need = config.window_length + max_query_len(schema) + 1;
        if config.encoder.max_position < need {
            return Err(Error::Config(format!(
                "encoder.max_position {} cannot hold query + separator + window ({need})",
                config.encoder.max_position
            )));
        }
        if config.encoder.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "encoder.vocab_size {} differs from vocabulary size {}",
                config.encoder.vocab_size,
                vocab.len()
            )));
        }
        Ok(())
    }

    pub fn config(&self) -> &PairwiseConfig {
        &self.config
    }

    /// Contextual rows of the sentinel-prefixed document under field `field`'s
    /// query, averaged across windows.
    fn encode_field(
        &self,
        tape: &mut Tape,
        field: usize,
        ids: &[usize],
        plan: &WindowPlan,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let query = &self.queries[field];
        let mut parts = Vec::with_capacity(plan.len());
        for (k, w) in plan.windows.iter().enumerate() {
            let mut input = query.clone();
            // Window 0 begins with the sentinel, which doubles as separator.
            if w.start > 0 {
                input.push(NULL);
            }
            let skip = input.len();
            input.extend_from_slice(&ids[w.start..=w.end]);
            let encoded = self
                .encoder
                .encode(tape, &input, reborrow(&mut rng))
                .map_err(|e| Error::Window {
                    window: k,
                    source: Box::new(e),
                })?;
            let rows = tape.slice_rows(encoded, skip, w.len());
            parts.push((rows, w.start));
        }
        if parts.len() == 1 {
            return Ok(parts[0].0);
        }
        Ok(tape.window_average(&parts, ids.len()))
    }

    fn field_logits(
        &self,
        tape: &mut Tape,
        field: usize,
        ids: &[usize],
        plan: &WindowPlan,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Var, Var)> {
        let h = self.encode_field(tape, field, ids, plan, rng)?;
        let s = tape.param(self.start);
        let e = tape.param(self.end);
        Ok((tape.matmul_t(s, h), tape.matmul_t(e, h)))
    }

    fn logits(
        &self,
        tape: &mut Tape,
        ids: &[usize],
        plan: &WindowPlan,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<SpanLogits> {
        let mut starts = Vec::with_capacity(self.queries.len());
        let mut ends = Vec::with_capacity(self.queries.len());
        for field in 0..self.queries.len() {
            let (s, e) = self.field_logits(tape, field, ids, plan, reborrow(&mut rng))?;
            starts.push(s);
            ends.push(e);
        }
        Ok(SpanLogits {
            start: tape.concat_rows(&starts),
            end: tape.concat_rows(&ends),
        })
    }

    /// Prediction for a single field, independent of every other field.
    pub fn predict_field(&self, doc: &Document, field: usize) -> Result<Option<Span>> {
        if field >= self.queries.len() {
            return Err(Error::Dimension(format!(
                "field {field} outside schema of {}",
                self.queries.len()
            )));
        }
        let ids = self.vocab.ids_with_sentinel(doc);
        let plan = plan_windows(ids.len(), self.config.window_length, self.config.stride)?;
        let mut tape = Tape::new(&self.params);
        let (s, e) = self.field_logits(&mut tape, field, &ids, &plan, None)?;
        let pred = SpanPrediction::from_logits(tape.value(s), tape.value(e));
        Ok(pred.fields[0].span)
    }
}

impl ExtractionModel for PairwiseModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Pairwise
    }

    fn schema(&self) -> &FieldSchema {
        &self.schema
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn encoder(&self) -> &ToyTransformer {
        &self.encoder
    }

    fn window_length(&self) -> usize {
        self.config.window_length
    }

    fn stride(&self) -> usize {
        self.config.stride
    }

    fn prepare(&self, example: &LabeledExample) -> Result<PreparedExample> {
        example.validate(&self.schema)?;
        let ids = self.vocab.ids_with_sentinel(&example.document);
        let plan = plan_windows(ids.len(), self.config.window_length, self.config.stride)?;
        Ok(PreparedExample {
            doc_id: example.document.doc_id.clone(),
            span_targets: span_targets(example, self.schema.len())?,
            ids,
            plan,
            bio: None,
        })
    }

    fn forward(
        &self,
        tape: &mut Tape<'_>,
        example: &PreparedExample,
        _mode: LossMode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<LossVars> {
        let logits = self.logits(tape, &example.ids, &example.plan, rng)?;
        let span = span_loss(tape, logits, &example.span_targets)?;
        Ok(LossVars {
            total: span,
            span,
            ner: None,
            alpha: 1.0,
        })
    }

    fn predict(&self, doc: &Document) -> Result<DocumentPrediction> {
        let ids = self.vocab.ids_with_sentinel(doc);
        let plan = plan_windows(ids.len(), self.config.window_length, self.config.stride)?;
        let mut tape = Tape::new(&self.params);
        let logits = self.logits(&mut tape, &ids, &plan, None)?;
        let span = SpanPrediction::from_logits(tape.value(logits.start), tape.value(logits.end));
        let aggregated = aggregate(&span.spans(), &[]);
        Ok(DocumentPrediction {
            doc_id: doc.doc_id.clone(),
            span,
            ner: Vec::new(),
            aggregated,
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Pairwise,
            config: serde_json::to_value(&self.config).expect("config serializes"),
            schema: self.schema.clone(),
            vocab: self.vocab.user_tokens().to_vec(),
            params: self.params.clone(),
        }
    }
}

/// Zero-initialised start/end vectors, handy for tests that need flat scores.
pub fn zero_scorers(model: &mut PairwiseModel) {
    let (s, e) = (model.start, model.end);
    *model.params.get_mut(s) = Array2::zeros((1, model.config.encoder.embed_dim));
    *model.params.get_mut(e) = Array2::zeros((1, model.config.encoder.embed_dim));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_vocabulary;

    fn model(window: usize, stride: usize) -> (PairwiseModel, Document) {
        let schema = FieldSchema::from_names(&["start date", "fee", "landlord"]).unwrap();
        let doc = Document::new(
            "p0",
            "lease from may 3 fee 40 usd paid to acme corp by the tenant"
                .split(' ')
                .map(String::from)
                .collect(),
        )
        .unwrap();
        let vocab = build_vocabulary([&doc], &schema, 1);
        let enc = ToyTransformerConfig {
            vocab_size: vocab.len(),
            embed_dim: 8,
            num_layers: 1,
            num_heads: 2,
            feedforward_dim: 16,
            max_position: 0,
            dropout: 0.0,
            init_seed: 5,
        };
        let cfg = PairwiseConfig::new(enc, &schema, window, stride);
        (PairwiseModel::new(cfg, schema, vocab).unwrap(), doc)
    }

    #[test]
    fn one_pass_per_field_and_window() {
        let (m, doc) = model(6, 3);
        // 14 positions with windows of 6, stride 3: 4 windows, 3 fields.
        m.reset_encoder_calls();
        m.predict(&doc).unwrap();
        assert_eq!(m.encoder_calls(), 12);
    }

    #[test]
    fn fields_are_independent_of_order() {
        let (m, doc) = model(6, 3);
        let joint = m.predict(&doc).unwrap().span.spans();
        for f in [2, 0, 1] {
            assert_eq!(m.predict_field(&doc, f).unwrap(), joint[f]);
        }
    }

    #[test]
    fn flat_scores_mean_no_answer() {
        let (mut m, doc) = model(20, 8);
        zero_scorers(&mut m);
        assert!(m.predict(&doc).unwrap().span.spans().iter().all(Option::is_none));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (m, doc) = model(6, 3);
        let restored = Checkpoint::from_bytes(&m.checkpoint().to_bytes())
            .unwrap()
            .into_model()
            .unwrap();
        assert_eq!(restored.kind(), ModelKind::Pairwise);
        assert_eq!(restored.predict(&doc).unwrap(), m.predict(&doc).unwrap());
    }

    #[test]
    fn short_encoder_is_rejected() {
        let (m, _) = model(6, 3);
        let mut cfg = m.config().clone();
        cfg.encoder.max_position = 6;
        let err = PairwiseModel::new(cfg, m.schema().clone(), m.vocab().clone()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
