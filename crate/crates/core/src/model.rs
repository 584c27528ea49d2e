//! The joint span + sequence-labeling model, the shared model interface and
//! the checkpoint format.
//!
//! # Checkpoint layout
//!
//! All integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `JOINTIE\0` |
//! | 4 | format version (`u32`, currently 1) |
//! | 8 | header length `h` (`u64`) |
//! | h | UTF-8 JSON header: `kind`, `config`, `schema`, `vocab`, `params` (`[{name, rows, cols}]`) |
//! | … | every parameter as row-major `f64`, in header order |

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregatedExtraction};
use crate::baseline::{PairwiseConfig, PairwiseModel};
use crate::data::{bio_encode, BioSequence, Document, FieldSchema, LabeledExample, SpanAnnotation};
use crate::encoder::{ToyTransformer, ToyTransformerConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::loss::{combine_losses, ner_loss, span_loss, span_targets, LossMode, LossReport};
use crate::ner_head::{ner_predict, NerHead, TokenLabelDistribution};
use crate::span_head::{SpanHead, SpanHeadConfig, SpanPrediction};
use crate::tape::{Gradients, ParamId, ParamStore, Tape, Var};
use crate::windowing::{encode_windows, plan_windows, WindowPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Joint,
    Pairwise,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(ModelKind::Joint),
            "pairwise" => Ok(ModelKind::Pairwise),
            other => Err(Error::Config(format!(
                "unknown model {other:?}, expected \"joint\" or \"pairwise\""
            ))),
        }
    }
}

/// A labeled example turned into model inputs and targets.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub doc_id: String,
    /// `[NULL]` followed by the document's token ids.
    pub ids: Vec<usize>,
    pub plan: WindowPlan,
    pub span_targets: Vec<(usize, usize)>,
    /// BIO targets; absent for models without a labeling head.
    pub bio: Option<BioSequence>,
}

/// Loss nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub span: Var,
    pub ner: Option<Var>,
    pub alpha: f64,
}

impl LossVars {
    pub fn report(&self, tape: &Tape) -> LossReport {
        LossReport {
            total: tape.scalar(self.total),
            span: tape.scalar(self.span),
            ner: self.ner.map_or(0.0, |v| tape.scalar(v)),
            alpha: self.alpha,
        }
    }
}

/// Everything a model predicts for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentPrediction {
    pub doc_id: String,
    pub span: SpanPrediction,
    pub ner: Vec<SpanAnnotation>,
    pub aggregated: AggregatedExtraction,
}

/// Interface shared by the joint model and the pairwise baseline.
pub trait ExtractionModel: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn schema(&self) -> &FieldSchema;
    fn vocab(&self) -> &Vocabulary;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn encoder(&self) -> &ToyTransformer;
    fn window_length(&self) -> usize;
    fn stride(&self) -> usize;

    /// The learnable loss weight, if the model has one.
    fn alpha_param(&self) -> Option<ParamId> {
        None
    }

    fn prepare(&self, example: &LabeledExample) -> Result<PreparedExample>;

    /// Records the forward pass and losses on `tape`, which must be built on
    /// `self.params()`.
    fn forward(
        &self,
        tape: &mut Tape<'_>,
        example: &PreparedExample,
        mode: LossMode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<LossVars>;

    fn predict(&self, doc: &Document) -> Result<DocumentPrediction>;

    fn checkpoint(&self) -> Checkpoint;

    fn loss(&self, example: &PreparedExample, mode: LossMode) -> Result<LossReport> {
        let mut tape = Tape::new(self.params());
        let vars = self.forward(&mut tape, example, mode, None)?;
        Ok(vars.report(&tape))
    }

    fn loss_and_grads(
        &self,
        example: &PreparedExample,
        mode: LossMode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(LossReport, Gradients)> {
        let mut tape = Tape::new(self.params());
        let vars = self.forward(&mut tape, example, mode, rng)?;
        let report = vars.report(&tape);
        Ok((report, tape.backward(vars.total)))
    }

    fn encoder_calls(&self) -> u64 {
        self.encoder().calls()
    }

    fn reset_encoder_calls(&self) {
        self.encoder().reset_calls()
    }
}

/// Predicts every document, using at most `workers` threads. Output order
/// follows input order.
pub fn predict_all<M: ExtractionModel + ?Sized>(
    model: &M,
    docs: &[Document],
    workers: usize,
) -> Result<Vec<DocumentPrediction>> {
    if workers <= 1 {
        return docs.iter().map(|d| model.predict(d)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| docs.par_iter().map(|d| model.predict(d)).collect())
}

/// Caps the process-wide thread pool used for per-document gradients. Only
/// the first call takes effect.
pub fn configure_workers(workers: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub encoder: ToyTransformerConfig,
    /// Query embedding size `d`.
    pub query_dim: usize,
    pub span_depth: usize,
    pub window_length: usize,
    pub stride: usize,
}

impl JointConfig {
    /// Desk-scale defaults: c = d = 64, two layers, four heads.
    pub fn new(vocab_size: usize, window_length: usize, stride: usize) -> Self {
        Self {
            encoder: ToyTransformerConfig {
                vocab_size,
                embed_dim: 64,
                num_layers: 2,
                num_heads: 4,
                feedforward_dim: 128,
                max_position: window_length,
                dropout: 0.0,
                init_seed: 0,
            },
            query_dim: 64,
            span_depth: 1,
            window_length,
            stride,
        }
    }

    fn span_config(&self, m: usize) -> SpanHeadConfig {
        SpanHeadConfig {
            num_fields: m,
            query_dim: self.query_dim,
            encoder_dim: self.encoder.embed_dim,
            depth: self.span_depth,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.encoder.max_position < self.window_length {
            return Err(Error::Config(format!(
                "encoder.max_position {} is shorter than window_length {}",
                self.encoder.max_position, self.window_length
            )));
        }
        plan_windows(1, self.window_length, self.stride).map(|_| ())
    }
}

/// Shared encoder, per-field span heads, a BIO head and the α weight.
#[derive(Debug)]
pub struct JointModel {
    config: JointConfig,
    schema: FieldSchema,
    vocab: Vocabulary,
    params: ParamStore,
    encoder: ToyTransformer,
    span: SpanHead,
    ner: NerHead,
    alpha: ParamId,
}

impl JointModel {
    /// Fresh parameters drawn from `config.encoder.init_seed`.
    pub fn new(config: JointConfig, schema: FieldSchema, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if config.encoder.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "encoder.vocab_size {} differs from vocabulary size {}",
                config.encoder.vocab_size,
                vocab.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.encoder.init_seed);
        let mut params = ParamStore::new();
        let encoder = ToyTransformer::new(config.encoder.clone(), &mut params, &mut rng)?;
        let span = SpanHead::new(config.span_config(schema.len()), &mut params, &mut rng)?;
        let ner = NerHead::new(schema.len(), config.encoder.embed_dim, &mut params, &mut rng);
        let alpha = params.add("alpha.raw", Array2::zeros((1, 1)));
        Ok(Self {
            config,
            schema,
            vocab,
            params,
            encoder,
            span,
            ner,
            alpha,
        })
    }

    fn from_parts(
        config: JointConfig,
        schema: FieldSchema,
        vocab: Vocabulary,
        params: ParamStore,
    ) -> Result<Self> {
        config.validate()?;
        let encoder = ToyTransformer::bind(config.encoder.clone(), &params)?;
        let span = SpanHead::bind(config.span_config(schema.len()), &params)?;
        let ner = NerHead::bind(schema.len(), config.encoder.embed_dim, &params)?;
        let alpha = params
            .id("alpha.raw")
            .ok_or_else(|| Error::Checkpoint("missing parameter alpha.raw".into()))?;
        Ok(Self {
            config,
            schema,
            vocab,
            params,
            encoder,
            span,
            ner,
            alpha,
        })
    }

    pub fn config(&self) -> &JointConfig {
        &self.config
    }

    pub fn span_head(&self) -> &SpanHead {
        &self.span
    }

    pub fn ner_head(&self) -> &NerHead {
        &self.ner
    }

    fn encode(&self, tape: &mut Tape, ids: &[usize], plan: &WindowPlan, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        encode_windows(tape, ids, plan, &self.encoder, rng)
    }

    /// Span distributions and token label distributions from one encoding.
    pub fn predict_heads(&self, doc: &Document) -> Result<(SpanPrediction, TokenLabelDistribution)> {
        let ids = self.vocab.ids_with_sentinel(doc);
        let plan = plan_windows(ids.len(), self.config.window_length, self.config.stride)?;
        let mut tape = Tape::new(&self.params);
        let h = self.encode(&mut tape, &ids, &plan, None)?;
        let logits = self.span.logits(&mut tape, h)?;
        let rows = tape.slice_rows(h, 1, doc.len());
        let ner_logits = self.ner.logits(&mut tape, rows)?;
        Ok((
            SpanPrediction::from_logits(tape.value(logits.start), tape.value(logits.end)),
            TokenLabelDistribution::from_logits(tape.value(ner_logits)),
        ))
    }
}

impl ExtractionModel for JointModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Joint
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

    fn alpha_param(&self) -> Option<ParamId> {
        Some(self.alpha)
    }

    fn prepare(&self, example: &LabeledExample) -> Result<PreparedExample> {
        let m = self.schema.len();
        example.validate(&self.schema)?;
        let ids = self.vocab.ids_with_sentinel(&example.document);
        let plan = plan_windows(ids.len(), self.config.window_length, self.config.stride)?;
        let bio = bio_encode(&example.annotations, example.document.len(), m).map_err(|e| {
            Error::validation(&example.document.doc_id, "-", e.to_string())
        })?;
        Ok(PreparedExample {
            doc_id: example.document.doc_id.clone(),
            span_targets: span_targets(example, m)?,
            ids,
            plan,
            bio: Some(bio),
        })
    }

    fn forward(
        &self,
        tape: &mut Tape<'_>,
        example: &PreparedExample,
        mode: LossMode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<LossVars> {
        let bio = example
            .bio
            .as_ref()
            .ok_or_else(|| Error::Config("joint model needs BIO targets".into()))?;
        let h = self.encode(tape, &example.ids, &example.plan, rng)?;
        let logits = self.span.logits(tape, h)?;
        let span = span_loss(tape, logits, &example.span_targets)?;
        let rows = tape.slice_rows(h, 1, example.ids.len() - 1);
        let ner_logits = self.ner.logits(tape, rows)?;
        let ner = ner_loss(tape, ner_logits, bio)?;
        let (total, alpha) = combine_losses(tape, span, ner, mode, Some(self.alpha))?;
        Ok(LossVars {
            total,
            span,
            ner: Some(ner),
            alpha,
        })
    }

    fn predict(&self, doc: &Document) -> Result<DocumentPrediction> {
        let (span, dist) = self.predict_heads(doc)?;
        let ner = ner_predict(&dist, self.schema.len());
        let aggregated = aggregate(&span.spans(), &ner);
        Ok(DocumentPrediction {
            doc_id: doc.doc_id.clone(),
            span,
            ner,
            aggregated,
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Joint,
            config: serde_json::to_value(&self.config).expect("config serializes"),
            schema: self.schema.clone(),
            vocab: self.vocab.user_tokens().to_vec(),
            params: self.params.clone(),
        }
    }
}

const MAGIC: &[u8; 8] = b"JOINTIE\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: serde_json::Value,
    schema: FieldSchema,
    vocab: Vec<String>,
    params: Vec<ParamEntry>,
}

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub schema: FieldSchema,
    /// Non-reserved vocabulary tokens in id order.
    pub vocab: Vec<String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            config: self.config.clone(),
            schema: self.schema.clone(),
            vocab: self.vocab.clone(),
            params: self
                .params
                .iter()
                .map(|(name, v)| ParamEntry {
                    name: name.to_string(),
                    rows: v.nrows(),
                    cols: v.ncols(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, v) in self.params.iter() {
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a jointie checkpoint".into()));
        }
        let mut word = [0u8; 4];
        read_exact(&mut r, &mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut len = [0u8; 8];
        read_exact(&mut r, &mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&r[..len])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        r = &r[len..];
        let mut params = ParamStore::new();
        for entry in header.params {
            let count = entry.rows * entry.cols;
            if r.len() < 8 * count {
                return Err(Error::Checkpoint(format!("truncated data for {}", entry.name)));
            }
            let data: Vec<f64> = r[..8 * count]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            r = &r[8 * count..];
            let arr = Array2::from_shape_vec((entry.rows, entry.cols), data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            params.add(entry.name, arr);
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            schema: header.schema,
            vocab: header.vocab,
            params,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model this checkpoint was taken from.
    pub fn into_model(self) -> Result<Box<dyn ExtractionModel>> {
        let vocab = Vocabulary::from_tokens(self.vocab);
        let bad = |e: serde_json::Error| Error::Checkpoint(format!("bad config: {e}"));
        match self.kind {
            ModelKind::Joint => {
                let config: JointConfig = serde_json::from_value(self.config).map_err(bad)?;
                Ok(Box::new(JointModel::from_parts(
                    config,
                    self.schema,
                    vocab,
                    self.params,
                )?))
            }
            ModelKind::Pairwise => {
                let config: PairwiseConfig = serde_json::from_value(self.config).map_err(bad)?;
                Ok(Box::new(PairwiseModel::from_parts(
                    config,
                    self.schema,
                    vocab,
                    self.params,
                )?))
            }
        }
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))
}

/// Vocabulary over `docs` that also covers every field-name token.
pub fn build_vocabulary<'a, I>(docs: I, schema: &FieldSchema, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut vocab = Vocabulary::build(docs, min_count);
    for f in schema.fields() {
        for t in &f.name_tokens {
            vocab.insert(t);
        }
    }
    vocab
}
