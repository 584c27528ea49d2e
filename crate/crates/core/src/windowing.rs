//! Stride windows over long token sequences and overlap averaging of their
//! encodings.

use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::encoder::{reborrow, ContextualEncoder};
use crate::error::{Error, Result};
use crate::tape::{ParamStore, Tape, Var};

pub const DEFAULT_WINDOW_LENGTH: usize = 384;
pub const DEFAULT_STRIDE: usize = 128;

/// Inclusive interval of sequence positions covered by one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_length: usize,
    pub stride: usize,
    pub windows: Vec<Window>,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Number of positions covered.
    pub fn sequence_len(&self) -> usize {
        self.windows.last().map_or(0, |w| w.end + 1)
    }
}

/// Windows start at `0, stride, 2·stride, …`; the last window is the first one
/// that reaches position `n - 1`.
pub fn plan_windows(n: usize, window_length: usize, stride: usize) -> Result<WindowPlan> {
    if window_length == 0 || stride == 0 || stride > window_length {
        return Err(Error::Config(format!(
            "need 1 <= stride <= window_length, got stride {stride}, window_length {window_length}"
        )));
    }
    if n == 0 {
        return Err(Error::Config("cannot window an empty sequence".into()));
    }
    let mut windows = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window_length - 1).min(n - 1);
        windows.push(Window { start, end });
        if end == n - 1 {
            break;
        }
        start += stride;
    }
    Ok(WindowPlan {
        window_length,
        stride,
        windows,
    })
}

/// `ceil(max(n - window_length, 0) / stride) + 1`.
pub fn window_count(n: usize, window_length: usize, stride: usize) -> usize {
    n.saturating_sub(window_length).div_ceil(stride) + 1
}

/// Per-token contextual vectors of a whole sequence, one row per position.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDocument {
    pub vectors: Array2<f64>,
}

impl EncodedDocument {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Encodes every window of `ids` on the tape and averages overlapping rows.
///
/// The result has one row per element of `ids`; gradients flow back into each
/// contributing window.
pub fn encode_windows<E: ContextualEncoder + ?Sized>(
    tape: &mut Tape,
    ids: &[usize],
    plan: &WindowPlan,
    encoder: &E,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    if plan.sequence_len() != ids.len() {
        return Err(Error::Dimension(format!(
            "window plan covers {} positions, sequence has {}",
            plan.sequence_len(),
            ids.len()
        )));
    }
    let mut parts = Vec::with_capacity(plan.len());
    for (k, w) in plan.windows.iter().enumerate() {
        let encoded = encoder
            .encode(tape, &ids[w.start..=w.end], reborrow(&mut rng))
            .map_err(|e| Error::Window {
                window: k,
                source: Box::new(e),
            })?;
        parts.push((encoded, w.start));
    }
    if parts.len() == 1 {
        return Ok(parts[0].0);
    }
    Ok(tape.window_average(&parts, ids.len()))
}

/// Inference-mode windowed encoding.
pub fn encode_with_averaging<E: ContextualEncoder + ?Sized>(
    ids: &[usize],
    plan: &WindowPlan,
    encoder: &E,
    params: &ParamStore,
) -> Result<EncodedDocument> {
    let mut tape = Tape::new(params);
    let v = encode_windows(&mut tape, ids, plan, encoder, None)?;
    Ok(EncodedDocument {
        vectors: tape.value(v).clone(),
    })
}
