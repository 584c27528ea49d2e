//! Documents, field schemas, span annotations and the BIO tag scheme.
//!
//! Token positions are 0-based and span ends are inclusive everywhere.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One extraction field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub index: usize,
    pub name: String,
    pub name_tokens: Vec<String>,
}

/// The fixed, ordered set of fields a model extracts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    fields: Vec<FieldDef>,
}

impl FieldSchema {
    /// Builds a schema whose name tokens come from [`tokenize`].
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let defs = names
            .iter()
            .map(|n| {
                let name = n.as_ref().to_string();
                let name_tokens = tokenize(&name).into_iter().map(|t| t.text).collect();
                (name, name_tokens)
            })
            .collect();
        Self::new(defs)
    }

    pub fn new(fields: Vec<(String, Vec<String>)>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::Config("schema must declare at least one field".into()));
        }
        let mut seen = HashSet::new();
        let mut defs = Vec::with_capacity(fields.len());
        for (index, (name, name_tokens)) in fields.into_iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Config(format!("field {index} has an empty name")));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("duplicate field name {name:?}")));
            }
            let name_tokens = if name_tokens.is_empty() {
                vec![name.clone()]
            } else {
                name_tokens
            };
            defs.push(FieldDef {
                index,
                name,
                name_tokens,
            });
        }
        Ok(Self { fields: defs })
    }

    /// Number of fields, `m`.
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[FieldDef] {
        &self.fields
    }

    pub fn field(&self, index: usize) -> &FieldDef {
        &self.fields[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Number of BIO labels, `2m + 1`.
    pub fn num_labels(&self) -> usize {
        2 * self.len() + 1
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }
}

/// A pre-tokenized document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_text: Option<String>,
    /// Character offsets `[start, end)` of each token in `raw_text`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offsets: Option<Vec<(usize, usize)>>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        let doc_id = doc_id.into();
        if tokens.is_empty() {
            return Err(Error::validation(&doc_id, "-", "document has no tokens"));
        }
        if let Some(pos) = tokens.iter().position(String::is_empty) {
            return Err(Error::validation(
                &doc_id,
                "-",
                format!("token {pos} is empty"),
            ));
        }
        Ok(Self {
            doc_id,
            tokens,
            raw_text: None,
            offsets: None,
        })
    }

    /// Tokenizes `text` with the bundled tokenizer and keeps character offsets.
    pub fn from_text(doc_id: impl Into<String>, text: &str) -> Result<Self> {
        let toks = tokenize(text);
        let offsets = toks.iter().map(|t| (t.start, t.end)).collect();
        let mut doc = Self::new(doc_id, toks.into_iter().map(|t| t.text).collect())?;
        doc.raw_text = Some(text.to_string());
        doc.offsets = Some(offsets);
        Ok(doc)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Document length `n`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn raw_text(&self) -> Option<&str> {
        self.raw_text.as_deref()
    }

    pub fn offsets(&self) -> Option<&[(usize, usize)]> {
        self.offsets.as_deref()
    }

    /// Surface text of a span: a slice of the raw text when offsets are known,
    /// otherwise the tokens joined by single spaces.
    pub fn span_text(&self, span: Span) -> String {
        if let (Some(text), Some(offsets)) = (&self.raw_text, &self.offsets) {
            let start = offsets[span.start].0;
            let end = offsets[span.end].1;
            return text.chars().skip(start).take(end - start).collect();
        }
        self.tokens[span.start..=span.end].join(" ")
    }
}

/// An inclusive token interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    /// Number of shared token positions.
    pub fn intersection_len(&self, other: &Span) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo <= hi {
            hi - lo + 1
        } else {
            0
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.start, self.end)
    }
}

/// Gold or predicted spans of one field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub field_index: usize,
    pub spans: Vec<Span>,
}

/// A document together with its gold annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub document: Document,
    pub annotations: Vec<SpanAnnotation>,
}

impl LabeledExample {
    /// Gold spans of `field`, empty when the field is absent.
    pub fn spans_for(&self, field: usize) -> &[Span] {
        self.annotations
            .iter()
            .find(|a| a.field_index == field)
            .map(|a| a.spans.as_slice())
            .unwrap_or(&[])
    }

    /// Checks span bounds, per-field ordering and overlap, and field indices.
    pub fn validate(&self, schema: &FieldSchema) -> Result<()> {
        let n = self.document.len();
        let doc_id = &self.document.doc_id;
        let mut seen = HashSet::new();
        for ann in &self.annotations {
            if ann.field_index >= schema.len() {
                return Err(Error::validation(
                    doc_id,
                    format!("#{}", ann.field_index),
                    "field index not in schema",
                ));
            }
            let field = &schema.field(ann.field_index).name;
            if !seen.insert(ann.field_index) {
                return Err(Error::validation(doc_id, field, "field annotated twice"));
            }
            for (k, s) in ann.spans.iter().enumerate() {
                if s.start > s.end || s.end >= n {
                    return Err(Error::validation(
                        doc_id,
                        field,
                        format!("span {s} out of range for document of {n} tokens"),
                    ));
                }
                if k > 0 {
                    let prev = ann.spans[k - 1];
                    if prev.start > s.start {
                        return Err(Error::validation(doc_id, field, "spans not sorted"));
                    }
                    if prev.overlaps(s) {
                        return Err(Error::validation(
                            doc_id,
                            field,
                            format!("spans {prev} and {s} overlap"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// BIO label ids: `0` is `O`, `2i + 1` is `B-field_i`, `2i + 2` is `I-field_i`.
pub mod label {
    pub const OUTSIDE: usize = 0;

    pub fn begin(field: usize) -> usize {
        2 * field + 1
    }

    pub fn inside(field: usize) -> usize {
        2 * field + 2
    }

    /// Field of a non-`O` label.
    pub fn field(label: usize) -> Option<usize> {
        (label > 0).then(|| (label - 1) / 2)
    }

    pub fn is_begin(label: usize) -> bool {
        label > 0 && label % 2 == 1
    }
}

/// One BIO label per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioSequence {
    pub labels: Vec<usize>,
}

/// Tags every annotated span with BIO labels. Spans of different fields must
/// not share a token.
pub fn bio_encode(annotations: &[SpanAnnotation], n: usize, m: usize) -> Result<BioSequence> {
    let mut labels = vec![label::OUTSIDE; n];
    let mut owner: Vec<Option<(usize, Span)>> = vec![None; n];
    for ann in annotations {
        if ann.field_index >= m {
            return Err(Error::EncodingConflict(format!(
                "field index {} outside schema of {m} fields",
                ann.field_index
            )));
        }
        for &span in &ann.spans {
            if span.start > span.end || span.end >= n {
                return Err(Error::EncodingConflict(format!(
                    "span {span} outside document of {n} tokens"
                )));
            }
            for t in span.start..=span.end {
                if let Some((f, other)) = owner[t] {
                    return Err(Error::EncodingConflict(format!(
                        "field {f} span {other} collides with field {} span {span}",
                        ann.field_index
                    )));
                }
                owner[t] = Some((ann.field_index, span));
                labels[t] = if t == span.start {
                    label::begin(ann.field_index)
                } else {
                    label::inside(ann.field_index)
                };
            }
        }
    }
    Ok(BioSequence { labels })
}

/// Decodes BIO labels into per-field spans.
///
/// A `B` label, or an `I` label whose predecessor belongs to another field (or
/// is `O`), opens a new entity; `I` labels of the same field extend it. Labels
/// at or above `2m + 1` are read as `O`. Fields without spans are omitted and
/// the result is ordered by field index.
pub fn bio_decode(seq: &BioSequence, m: usize) -> Vec<SpanAnnotation> {
    let mut per_field: Vec<Vec<Span>> = vec![Vec::new(); m];
    let mut open: Option<(usize, usize)> = None; // (field, start)
    let close = |open: &mut Option<(usize, usize)>, end: usize, per_field: &mut Vec<Vec<Span>>| {
        if let Some((f, start)) = open.take() {
            per_field[f].push(Span::new(start, end));
        }
    };
    for (t, &l) in seq.labels.iter().enumerate() {
        let field = label::field(l).filter(|&f| f < m);
        match field {
            None => close(&mut open, t.wrapping_sub(1), &mut per_field),
            Some(f) => {
                let continues = !label::is_begin(l) && matches!(open, Some((of, _)) if of == f);
                if !continues {
                    close(&mut open, t.wrapping_sub(1), &mut per_field);
                    open = Some((f, t));
                }
            }
        }
    }
    close(&mut open, seq.labels.len().wrapping_sub(1), &mut per_field);
    per_field
        .into_iter()
        .enumerate()
        .filter(|(_, spans)| !spans.is_empty())
        .map(|(field_index, spans)| SpanAnnotation { field_index, spans })
        .collect()
}

/// A token produced by [`tokenize`] with character offsets `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace and emits every ASCII punctuation character as its
/// own token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    for (pos, ch) in text.chars().enumerate() {
        if ch.is_whitespace() || ch.is_ascii_punctuation() {
            if !current.is_empty() {
                out.push(Token {
                    text: std::mem::take(&mut current),
                    start,
                    end: pos,
                });
            }
            if ch.is_ascii_punctuation() {
                out.push(Token {
                    text: ch.to_string(),
                    start: pos,
                    end: pos + 1,
                });
            }
        } else {
            if current.is_empty() {
                start = pos;
            }
            current.push(ch);
        }
    }
    if !current.is_empty() {
        let end = start + current.chars().count();
        out.push(Token {
            text: current,
            start,
            end,
        });
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDataset {
    schema: RawSchema,
    examples: Vec<RawExample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSchema {
    fields: Vec<RawField>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawField {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawExample {
    doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawAnnotation {
    field: String,
    spans: Vec<[usize; 2]>,
}

/// A schema plus its labeled examples, as stored in a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub schema: FieldSchema,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_bytes(&bytes, &path.display().to_string())
    }

    /// Parses and validates the dataset JSON. `context` names the source in
    /// error messages.
    pub fn from_json_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let raw: RawDataset = serde_json::from_slice(bytes).map_err(|e| Error::Format {
            context: context.to_string(),
            message: format!("line {} column {}: {e}", e.line(), e.column()),
        })?;
        let schema = FieldSchema::new(
            raw.schema
                .fields
                .into_iter()
                .map(|f| {
                    let toks = f
                        .tokens
                        .unwrap_or_else(|| tokenize(&f.name).into_iter().map(|t| t.text).collect());
                    (f.name, toks)
                })
                .collect(),
        )?;
        let mut examples = Vec::with_capacity(raw.examples.len());
        for (record, ex) in raw.examples.into_iter().enumerate() {
            let document = match (ex.tokens, ex.text) {
                (Some(tokens), _) => Document::new(&ex.doc_id, tokens)?,
                (None, Some(text)) => Document::from_text(&ex.doc_id, &text)?,
                (None, None) => {
                    return Err(Error::Format {
                        context: format!("{context}, record {record} ({:?})", ex.doc_id),
                        message: "example needs \"tokens\" or \"text\"".into(),
                    })
                }
            };
            let mut annotations = Vec::with_capacity(ex.annotations.len());
            for ann in ex.annotations {
                let field_index = schema.index_of(&ann.field).ok_or_else(|| {
                    Error::validation(&ex.doc_id, &ann.field, "field not declared in schema")
                })?;
                let mut spans = Vec::with_capacity(ann.spans.len());
                for [start, end] in ann.spans {
                    if start > end || end >= document.len() {
                        return Err(Error::validation(
                            &ex.doc_id,
                            &ann.field,
                            format!(
                                "span ({start}, {end}) out of range for document of {} tokens",
                                document.len()
                            ),
                        ));
                    }
                    spans.push(Span::new(start, end));
                }
                spans.sort();
                annotations.push(SpanAnnotation { field_index, spans });
            }
            annotations.sort_by_key(|a| a.field_index);
            let example = LabeledExample {
                document,
                annotations,
            };
            example.validate(&schema)?;
            examples.push(example);
        }
        Ok(Self { schema, examples })
    }

    pub fn to_json_string(&self) -> String {
        let raw = RawDataset {
            schema: RawSchema {
                fields: self
                    .schema
                    .fields()
                    .iter()
                    .map(|f| RawField {
                        name: f.name.clone(),
                        tokens: Some(f.name_tokens.clone()),
                    })
                    .collect(),
            },
            examples: self
                .examples
                .iter()
                .map(|ex| RawExample {
                    doc_id: ex.document.doc_id.clone(),
                    tokens: Some(ex.document.tokens().to_vec()),
                    text: None,
                    annotations: ex
                        .annotations
                        .iter()
                        .map(|a| RawAnnotation {
                            field: self.schema.field(a.field_index).name.clone(),
                            spans: a.spans.iter().map(|s| [s.start, s.end]).collect(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("dataset serialization cannot fail")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    /// Runs the extra checks needed for sequence-labeling targets: no token may
    /// belong to spans of two different fields.
    pub fn validate_bio(&self) -> Result<()> {
        for ex in &self.examples {
            bio_encode(&ex.annotations, ex.document.len(), self.schema.len()).map_err(|e| {
                Error::validation(&ex.document.doc_id, "-", e.to_string())
            })?;
        }
        Ok(())
    }
}

/// Loads a dataset file and checks that its schema equals `schema`.
pub fn load_dataset(path: &Path, schema: &FieldSchema) -> Result<Vec<LabeledExample>> {
    let dataset = Dataset::read(path)?;
    check_schema(schema, &dataset.schema)?;
    Ok(dataset.examples)
}

/// Errors unless both schemas declare the same field names in the same order.
pub fn check_schema(expected: &FieldSchema, found: &FieldSchema) -> Result<()> {
    if expected.len() != found.len() {
        return Err(Error::SchemaMismatch(format!(
            "expected m = {} fields, found m = {}",
            expected.len(),
            found.len()
        )));
    }
    for (a, b) in expected.fields().iter().zip(found.fields()) {
        if a.name != b.name {
            return Err(Error::SchemaMismatch(format!(
                "field {} is {:?}, expected {:?}",
                a.index, b.name, a.name
            )));
        }
    }
    Ok(())
}
