//! Contextual token encoders and the token vocabulary.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Document;
use crate::error::{Error, Result};
use crate::tape::{ParamId, ParamStore, Tape, Var};

/// Maps a window of token ids to one contextual vector per token.
pub trait ContextualEncoder: Send + Sync {
    /// Width `c` of every output row.
    fn output_dim(&self) -> usize;

    /// Longest accepted input.
    fn max_input_length(&self) -> usize;

    /// Records the encoding of `ids` on `tape` and returns a `len x c` node.
    /// Dropout is active only when `rng` is given.
    fn encode(&self, tape: &mut Tape, ids: &[usize], rng: Option<&mut dyn RngCore>) -> Result<Var>;
}

/// Reborrows an optional RNG for one more call.
pub(crate) fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Sentinel prepended to every document; the span head's "no answer" slot.
pub const NULL: usize = 2;
const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[NULL]"];

/// Token to id map with reserved `PAD`, `UNK` and `NULL` ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Ids are assigned in order of first appearance to every token seen at
    /// least `min_count` times.
    pub fn build<'a, I>(corpus: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for doc in corpus {
            for tok in doc.tokens() {
                let c = counts.entry(tok.as_str()).or_insert_with(|| {
                    order.push(tok.as_str());
                    0
                });
                *c += 1;
            }
        }
        let mut vocab = Self::from_tokens(Vec::new());
        for tok in order {
            if counts[tok] >= min_count.max(1) {
                vocab.insert(tok);
            }
        }
        vocab
    }

    /// Rebuilds a vocabulary from its non-reserved tokens in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut vocab = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            vocab.tokens.push(r.to_string());
        }
        for t in tokens {
            vocab.insert(&t);
        }
        vocab
    }

    /// Adds `token` if missing and returns its id.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn user_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// `[NULL]` followed by the document's ids.
    pub fn ids_with_sentinel(&self, doc: &Document) -> Vec<usize> {
        std::iter::once(NULL)
            .chain(doc.tokens().iter().map(|t| self.id(t)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTransformerConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub max_position: usize,
    pub dropout: f64,
    pub init_seed: u64,
}

impl ToyTransformerConfig {
    /// Two layers, two heads, `ff = 2c`, no dropout.
    pub fn small(vocab_size: usize, embed_dim: usize, max_position: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            num_layers: 2,
            num_heads: 2,
            feedforward_dim: 2 * embed_dim,
            max_position,
            dropout: 0.0,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("feedforward_dim", self.feedforward_dim),
            ("max_position", self.max_position),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder.{name} must be >= 1")));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "encoder.embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("encoder.dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    ln1_gamma: ParamId,
    ln1_beta: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_gamma: ParamId,
    ln2_beta: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
}

/// Pre-norm transformer encoder with learned token and position embeddings.
#[derive(Debug)]
pub struct ToyTransformer {
    config: ToyTransformerConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerParams>,
    lnf_gamma: ParamId,
    lnf_beta: ParamId,
    calls: AtomicU64,
}

/// Draws a `rows x cols` matrix from N(0, 0.02²).
pub(crate) fn init_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let normal = Normal::new(0.0, 0.02).expect("valid normal");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl ToyTransformer {
    /// Registers freshly initialised parameters under `encoder.*`.
    pub fn new<R: Rng + ?Sized>(
        config: ToyTransformerConfig,
        params: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.embed_dim;
        let ff = config.feedforward_dim;
        let tok_emb = params.add("encoder.tok_emb", init_normal(config.vocab_size, c, rng));
        let pos_emb = params.add("encoder.pos_emb", init_normal(config.max_position, c, rng));
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let p = |name: &str| format!("encoder.layer{l}.{name}");
            let mut add = |name: &str, value: Array2<f64>| params.add(p(name), value);
            let ln1_gamma = add("ln1.gamma", Array2::ones((1, c)));
            let ln1_beta = add("ln1.beta", Array2::zeros((1, c)));
            let wq = add("attn.wq", init_normal(c, c, rng));
            let bq = add("attn.bq", Array2::zeros((1, c)));
            let wk = add("attn.wk", init_normal(c, c, rng));
            let bk = add("attn.bk", Array2::zeros((1, c)));
            let wv = add("attn.wv", init_normal(c, c, rng));
            let bv = add("attn.bv", Array2::zeros((1, c)));
            let wo = add("attn.wo", init_normal(c, c, rng));
            let bo = add("attn.bo", Array2::zeros((1, c)));
            let ln2_gamma = add("ln2.gamma", Array2::ones((1, c)));
            let ln2_beta = add("ln2.beta", Array2::zeros((1, c)));
            let ff_w1 = add("ff.w1", init_normal(c, ff, rng));
            let ff_b1 = add("ff.b1", Array2::zeros((1, ff)));
            let ff_w2 = add("ff.w2", init_normal(ff, c, rng));
            let ff_b2 = add("ff.b2", Array2::zeros((1, c)));
            layers.push(LayerParams {
                ln1_gamma,
                ln1_beta,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln2_gamma,
                ln2_beta,
                ff_w1,
                ff_b1,
                ff_w2,
                ff_b2,
            });
        }
        let lnf_gamma = params.add("encoder.ln_f.gamma", Array2::ones((1, c)));
        let lnf_beta = params.add("encoder.ln_f.beta", Array2::zeros((1, c)));
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            layers,
            lnf_gamma,
            lnf_beta,
            calls: AtomicU64::new(0),
        })
    }

    /// Re-binds to parameters already present in `params` (e.g. a checkpoint).
    pub fn bind(config: ToyTransformerConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let get = |name: String| {
            params
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let layers = (0..config.num_layers)
            .map(|l| {
                let p = |name: &str| get(format!("encoder.layer{l}.{name}"));
                Ok(LayerParams {
                    ln1_gamma: p("ln1.gamma")?,
                    ln1_beta: p("ln1.beta")?,
                    wq: p("attn.wq")?,
                    bq: p("attn.bq")?,
                    wk: p("attn.wk")?,
                    bk: p("attn.bk")?,
                    wv: p("attn.wv")?,
                    bv: p("attn.bv")?,
                    wo: p("attn.wo")?,
                    bo: p("attn.bo")?,
                    ln2_gamma: p("ln2.gamma")?,
                    ln2_beta: p("ln2.beta")?,
                    ff_w1: p("ff.w1")?,
                    ff_b1: p("ff.b1")?,
                    ff_w2: p("ff.w2")?,
                    ff_b2: p("ff.b2")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let enc = Self {
            tok_emb: get("encoder.tok_emb".into())?,
            pos_emb: get("encoder.pos_emb".into())?,
            lnf_gamma: get("encoder.ln_f.gamma".into())?,
            lnf_beta: get("encoder.ln_f.beta".into())?,
            layers,
            config,
            calls: AtomicU64::new(0),
        };
        let (v, c) = params.get(enc.tok_emb).dim();
        if v != enc.config.vocab_size || c != enc.config.embed_dim {
            return Err(Error::Checkpoint(format!(
                "token embedding is {v} x {c}, config says {} x {}",
                enc.config.vocab_size, enc.config.embed_dim
            )));
        }
        Ok(enc)
    }

    pub fn config(&self) -> &ToyTransformerConfig {
        &self.config
    }

    /// Number of `encode` calls since construction or the last reset.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    /// Inference helper: encodes one window without dropout.
    pub fn encode_ids(&self, params: &ParamStore, ids: &[usize]) -> Result<Array2<f64>> {
        let mut tape = Tape::new(params);
        let v = self.encode(&mut tape, ids, None)?;
        Ok(tape.value(v).clone())
    }

    fn attention(&self, tape: &mut Tape, h: Var, p: &LayerParams, mut rng: Option<&mut dyn RngCore>) -> Var {
        let heads = self.config.num_heads;
        let head_dim = self.config.embed_dim / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let proj = |tape: &mut Tape, w: ParamId, b: ParamId| {
            let w = tape.param(w);
            let b = tape.param(b);
            let x = tape.matmul(h, w);
            tape.add_row(x, b)
        };
        let q = proj(tape, p.wq, p.bq);
        let k = proj(tape, p.wk, p.bk);
        let v = proj(tape, p.wv, p.bv);
        let mut outs = Vec::with_capacity(heads);
        for head in 0..heads {
            let start = head * head_dim;
            let qh = tape.slice_cols(q, start, head_dim);
            let kh = tape.slice_cols(k, start, head_dim);
            let vh = tape.slice_cols(v, start, head_dim);
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.affine(scores, scale, 0.0);
            let mut weights = tape.softmax_rows(scores);
            if let Some(r) = reborrow(&mut rng) {
                weights = tape.dropout(weights, self.config.dropout, r);
            }
            outs.push(tape.matmul(weights, vh));
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        let wo = tape.param(p.wo);
        let bo = tape.param(p.bo);
        let o = tape.matmul(joined, wo);
        tape.add_row(o, bo)
    }
}

impl ContextualEncoder for ToyTransformer {
    fn output_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn max_input_length(&self) -> usize {
        self.config.max_position
    }

    fn encode(&self, tape: &mut Tape, ids: &[usize], mut rng: Option<&mut dyn RngCore>) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Dimension("cannot encode an empty window".into()));
        }
        if ids.len() > self.config.max_position {
            return Err(Error::InputTooLong {
                len: ids.len(),
                max: self.config.max_position,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::UnknownToken {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let dropout = self.config.dropout;

        let tok_table = tape.param(self.tok_emb);
        let pos_table = tape.param(self.pos_emb);
        let tok = tape.gather(tok_table, ids);
        let pos = tape.slice_rows(pos_table, 0, ids.len());
        let mut x = tape.add(tok, pos);
        if let Some(r) = reborrow(&mut rng) {
            x = tape.dropout(x, dropout, r);
        }
        for p in &self.layers {
            let g = tape.param(p.ln1_gamma);
            let b = tape.param(p.ln1_beta);
            let h = tape.layer_norm(x, g, b);
            let mut a = self.attention(tape, h, p, reborrow(&mut rng));
            if let Some(r) = reborrow(&mut rng) {
                a = tape.dropout(a, dropout, r);
            }
            x = tape.add(x, a);

            let g = tape.param(p.ln2_gamma);
            let b = tape.param(p.ln2_beta);
            let h = tape.layer_norm(x, g, b);
            let w1 = tape.param(p.ff_w1);
            let b1 = tape.param(p.ff_b1);
            let w2 = tape.param(p.ff_w2);
            let b2 = tape.param(p.ff_b2);
            let f = tape.matmul(h, w1);
            let f = tape.add_row(f, b1);
            let f = tape.gelu(f);
            let f = tape.matmul(f, w2);
            let mut f = tape.add_row(f, b2);
            if let Some(r) = reborrow(&mut rng) {
                f = tape.dropout(f, dropout, r);
            }
            x = tape.add(x, f);
        }
        let g = tape.param(self.lnf_gamma);
        let b = tape.param(self.lnf_beta);
        Ok(tape.layer_norm(x, g, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::from_text(format!("d{i}"), t).unwrap())
            .collect()
    }

    fn model(cfg: ToyTransformerConfig) -> (ToyTransformer, ParamStore) {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let enc = ToyTransformer::new(cfg, &mut params, &mut rng).unwrap();
        (enc, params)
    }

    #[test]
    fn vocab_thresholds() {
        let corpus = docs(&["a b", "a"]);
        let v1 = Vocabulary::build(&corpus, 1);
        assert_eq!(v1.len(), 5);
        assert_ne!(v1.id("a"), v1.id("b"));
        assert!(v1.id("a") >= 3 && v1.id("b") >= 3);
        let v2 = Vocabulary::build(&corpus, 2);
        assert_eq!(v2.len(), 4);
        assert_eq!(v2.id("b"), UNK);
        assert_eq!(v2.ids_with_sentinel(&corpus[0]), vec![NULL, v2.id("a"), UNK]);
        assert_eq!(Vocabulary::from_tokens(v1.user_tokens().to_vec()), v1);
    }

    #[test]
    fn single_token_shape() {
        let (enc, params) = model(ToyTransformerConfig::small(10, 8, 4));
        let out = enc.encode_ids(&params, &[5]).unwrap();
        assert_eq!(out.dim(), (1, 8));
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_without_dropout() {
        let (enc, params) = model(ToyTransformerConfig::small(10, 8, 6));
        let a = enc.encode_ids(&params, &[3, 4, 5, 6]).unwrap();
        let b = enc.encode_ids(&params, &[3, 4, 5, 6]).unwrap();
        assert_eq!(a, b);
        let (enc2, params2) = model(ToyTransformerConfig::small(10, 8, 6));
        assert_eq!(a, enc2.encode_ids(&params2, &[3, 4, 5, 6]).unwrap());
        assert_eq!(enc.calls(), 2);
    }

    #[test]
    fn order_sensitive() {
        let mut cfg = ToyTransformerConfig::small(10, 16, 6);
        cfg.init_seed = 11;
        let (enc, params) = model(cfg);
        let a = enc.encode_ids(&params, &[3, 4, 5, 6]).unwrap();
        let b = enc.encode_ids(&params, &[4, 3, 5, 6]).unwrap();
        // Swapped tokens do not simply swap rows.
        let swapped_equal = (0..16).all(|c| (a[[0, c]] - b[[1, c]]).abs() < 1e-12);
        assert!(!swapped_equal);
        assert!((0..16).any(|c| (a[[2, c]] - b[[2, c]]).abs() > 1e-9));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (enc, params) = model(ToyTransformerConfig::small(10, 8, 3));
        assert!(matches!(
            enc.encode_ids(&params, &[1, 2, 3, 4]),
            Err(Error::InputTooLong { len: 4, max: 3 })
        ));
        assert!(matches!(
            enc.encode_ids(&params, &[1, 10]),
            Err(Error::UnknownToken { id: 10, .. })
        ));
        let mut bad = ToyTransformerConfig::small(10, 9, 3);
        bad.num_heads = 2;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bind_reuses_parameters() {
        let cfg = ToyTransformerConfig::small(10, 8, 5);
        let (enc, params) = model(cfg.clone());
        let bound = ToyTransformer::bind(cfg, &params).unwrap();
        assert_eq!(
            enc.encode_ids(&params, &[1, 2, 3]).unwrap(),
            bound.encode_ids(&params, &[1, 2, 3]).unwrap()
        );
    }
}
