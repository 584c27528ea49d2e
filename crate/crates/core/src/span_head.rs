//! Per-field general attention over a shared document encoding.
//!
//! Every field `i` owns a query row `v_i` of `V` plus independent start and end
//! projection stacks. The start score of position `j` is `v_iᵀ W_s^i h_j`, the
//! distribution over positions is its softmax. Row 0 of the encoding is the
//! `[NULL]` sentinel, so a field with no answer can put its mass there.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Span;
use crate::encoder::init_normal;
use crate::error::{Error, Result};
use crate::tape::{softmax_rows, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanHeadConfig {
    pub num_fields: usize,
    /// Query embedding size `d`.
    pub query_dim: usize,
    /// Encoder output size `c`.
    pub encoder_dim: usize,
    /// Linear maps per start/end stack, 1 to 3.
    pub depth: usize,
}

impl SpanHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_fields == 0 || self.query_dim == 0 || self.encoder_dim == 0 {
            return Err(Error::Config("span head dimensions must be >= 1".into()));
        }
        if !(1..=3).contains(&self.depth) {
            return Err(Error::Config(format!(
                "span head depth must be 1..=3, got {}",
                self.depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SpanHead {
    config: SpanHeadConfig,
    query: ParamId,
    start: Vec<Vec<ParamId>>,
    end: Vec<Vec<ParamId>>,
}

/// Start and end logits, each `m x (n + 1)`.
#[derive(Debug, Clone, Copy)]
pub struct SpanLogits {
    pub start: Var,
    pub end: Var,
}

fn stack_shape(config: &SpanHeadConfig, layer: usize) -> (usize, usize) {
    if layer == 0 {
        (config.query_dim, config.encoder_dim)
    } else {
        (config.query_dim, config.query_dim)
    }
}

impl SpanHead {
    pub fn new<R: Rng + ?Sized>(
        config: SpanHeadConfig,
        params: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let query = params.add(
            "span.V",
            init_normal(config.num_fields, config.query_dim, rng),
        );
        let stacks = |side: &str, params: &mut ParamStore, rng: &mut R| {
            (0..config.num_fields)
                .map(|i| {
                    (0..config.depth)
                        .map(|k| {
                            let (r, c) = stack_shape(&config, k);
                            params.add(format!("span.{side}.{i}.{k}"), init_normal(r, c, rng))
                        })
                        .collect()
                })
                .collect::<Vec<Vec<ParamId>>>()
        };
        let start = stacks("start", params, rng);
        let end = stacks("end", params, rng);
        Ok(Self {
            config,
            query,
            start,
            end,
        })
    }

    pub fn bind(config: SpanHeadConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let get = |name: String, shape: (usize, usize)| {
            let id = params
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if params.get(id).dim() != shape {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    params.get(id).dim()
                )));
            }
            Ok(id)
        };
        let query = get("span.V".into(), (config.num_fields, config.query_dim))?;
        let stacks = |side: &str| {
            (0..config.num_fields)
                .map(|i| {
                    (0..config.depth)
                        .map(|k| get(format!("span.{side}.{i}.{k}"), stack_shape(&config, k)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        };
        let start = stacks("start")?;
        let end = stacks("end")?;
        Ok(Self {
            config,
            query,
            start,
            end,
        })
    }

    pub fn config(&self) -> &SpanHeadConfig {
        &self.config
    }

    pub fn query_param(&self) -> ParamId {
        self.query
    }

    /// Parameter ids of field `field`'s start stack.
    pub fn start_params(&self, field: usize) -> &[ParamId] {
        &self.start[field]
    }

    pub fn end_params(&self, field: usize) -> &[ParamId] {
        &self.end[field]
    }

    fn field_scores(&self, tape: &mut Tape, encoded: Var, query: Var, field: usize, stack: &[ParamId]) -> Var {
        let q = tape.slice_rows(query, field, 1);
        if stack.len() == 1 {
            // v_iᵀ W h_j for all j: fold the query into W first.
            let w = tape.param(stack[0]);
            let u = tape.matmul(q, w);
            return tape.matmul_t(u, encoded);
        }
        let projected = self.project(tape, encoded, stack);
        tape.matmul_t(q, projected)
    }

    /// Applies the stack to every token vector: `W_k gelu(… gelu(W_1 h))`.
    fn project(&self, tape: &mut Tape, encoded: Var, stack: &[ParamId]) -> Var {
        let mut x = encoded;
        for (k, &id) in stack.iter().enumerate() {
            if k > 0 {
                x = tape.gelu(x);
            }
            let w = tape.param(id);
            x = tape.matmul_t(x, w);
        }
        x
    }

    /// Scores every position for every field from one shared encoding.
    /// `encoded` is `(n + 1) x c` with the sentinel in row 0.
    pub fn logits(&self, tape: &mut Tape, encoded: Var) -> Result<SpanLogits> {
        let (rows, cols) = tape.value(encoded).dim();
        if cols != self.config.encoder_dim {
            return Err(Error::Dimension(format!(
                "span head expects {}-wide encodings, got {cols}",
                self.config.encoder_dim
            )));
        }
        if rows < 2 {
            return Err(Error::Dimension(
                "span head needs the sentinel plus at least one token".into(),
            ));
        }
        let query = tape.param(self.query);
        let mut starts = Vec::with_capacity(self.config.num_fields);
        let mut ends = Vec::with_capacity(self.config.num_fields);
        for i in 0..self.config.num_fields {
            starts.push(self.field_scores(tape, encoded, query, i, &self.start[i]));
            ends.push(self.field_scores(tape, encoded, query, i, &self.end[i]));
        }
        Ok(SpanLogits {
            start: tape.concat_rows(&starts),
            end: tape.concat_rows(&ends),
        })
    }

    /// Same scores via the explicit token projection, for every depth.
    #[cfg(test)]
    fn logits_projected(&self, tape: &mut Tape, encoded: Var) -> SpanLogits {
        let query = tape.param(self.query);
        let mut starts = Vec::new();
        let mut ends = Vec::new();
        for i in 0..self.config.num_fields {
            let q = tape.slice_rows(query, i, 1);
            let p = self.project(tape, encoded, &self.start[i]);
            starts.push(tape.matmul_t(q, p));
            let p = self.project(tape, encoded, &self.end[i]);
            ends.push(tape.matmul_t(q, p));
        }
        SpanLogits {
            start: tape.concat_rows(&starts),
            end: tape.concat_rows(&ends),
        }
    }

    /// Inference on a finished encoding.
    pub fn predict(&self, params: &ParamStore, encoded: &Array2<f64>) -> Result<SpanPrediction> {
        let mut tape = Tape::new(params);
        let h = tape.input(encoded.clone());
        let logits = self.logits(&mut tape, h)?;
        Ok(SpanPrediction::from_logits(
            tape.value(logits.start),
            tape.value(logits.end),
        ))
    }
}

/// Output of the span head for one field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpanPrediction {
    /// Distribution over the sentinel plus `n` token positions.
    pub start_probs: Vec<f64>,
    pub end_probs: Vec<f64>,
    pub start_argmax: usize,
    pub end_argmax: usize,
    /// Document-coordinate span, `None` for no answer.
    pub span: Option<Span>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanPrediction {
    pub fields: Vec<FieldSpanPrediction>,
}

impl SpanPrediction {
    /// Softmaxes `m x (n + 1)` logits and resolves every field.
    pub fn from_logits(start: &Array2<f64>, end: &Array2<f64>) -> Self {
        let ps = softmax_rows(start);
        let pe = softmax_rows(end);
        let fields = ps
            .axis_iter(Axis(0))
            .zip(pe.axis_iter(Axis(0)))
            .map(|(s, e)| {
                let start_probs = s.to_vec();
                let end_probs = e.to_vec();
                FieldSpanPrediction {
                    start_argmax: argmax(&start_probs),
                    end_argmax: argmax(&end_probs),
                    span: resolve_span(&start_probs, &end_probs),
                    start_probs,
                    end_probs,
                }
            })
            .collect();
        Self { fields }
    }

    /// Every field resolved to no answer.
    pub fn no_answer(m: usize) -> Self {
        Self {
            fields: (0..m)
                .map(|_| FieldSpanPrediction {
                    start_probs: vec![1.0],
                    end_probs: vec![1.0],
                    start_argmax: 0,
                    end_argmax: 0,
                    span: None,
                })
                .collect(),
        }
    }

    pub fn spans(&self) -> Vec<Option<Span>> {
        self.fields.iter().map(|f| f.span).collect()
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Independent start/end argmax. A peak on the sentinel (position 0) or a
/// start after the end means no answer; otherwise the span is shifted into
/// document coordinates.
pub fn resolve_span(start_probs: &[f64], end_probs: &[f64]) -> Option<Span> {
    let s = argmax(start_probs);
    let e = argmax(end_probs);
    if s == 0 || e == 0 || s > e {
        return None;
    }
    Some(Span::new(s - 1, e - 1))
}
