use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregatedExtraction, Source, SourcedSpan};
use crate::data::{Document, FieldSchema, Span};
use crate::error::{Error, Result};

use super::PredictionRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldOutput {
    pub start: usize,
    pub end: usize,
    pub source: Source,
    #[serde(default)]
    pub text: String,
}

/// One record of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub doc_id: String,
    pub fields: IndexMap<String, Vec<FieldOutput>>,
}

/// Serializes predictions in input order, fields in schema order, one record
/// per line inside a JSON array.
pub fn predictions_to_json(records: &[PredictionRecord], docs: &[Document], schema: &FieldSchema) -> Result<String> {
    if records.len() != docs.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} documents",
            records.len(),
            docs.len()
        )));
    }
    let mut out = String::from("[");
    for (i, (rec, doc)) in records.iter().zip(docs).enumerate() {
        if rec.doc_id != doc.doc_id {
            return Err(Error::Dimension(format!(
                "prediction {i} is for {:?}, document is {:?}",
                rec.doc_id, doc.doc_id
            )));
        }
        let fields = schema
            .fields()
            .iter()
            .zip(&rec.extraction.fields)
            .map(|(f, spans)| {
                let outs = spans
                    .iter()
                    .map(|s| FieldOutput {
                        start: s.span.start,
                        end: s.span.end,
                        source: s.source,
                        text: doc.span_text(s.span),
                    })
                    .collect();
                (f.name.clone(), outs)
            })
            .collect();
        let file = PredictionFile {
            doc_id: rec.doc_id.clone(),
            fields,
        };
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        out.push_str(&serde_json::to_string(&file).expect("prediction serializes"));
    }
    out.push_str(if records.is_empty() { "]\n" } else { "\n]\n" });
    Ok(out)
}

/// Parses a prediction file; every record must name exactly the schema's fields.
pub fn predictions_from_json(bytes: &[u8], schema: &FieldSchema, context: &str) -> Result<Vec<PredictionRecord>> {
    let files: Vec<PredictionFile> = serde_json::from_slice(bytes).map_err(|e| Error::Format {
        context: context.to_string(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })?;
    files
        .into_iter()
        .map(|f| {
            let mut fields = vec![Vec::new(); schema.len()];
            for (name, outs) in f.fields {
                let idx = schema.index_of(&name).ok_or_else(|| {
                    Error::SchemaMismatch(format!(
                        "prediction for {:?} names unknown field {name:?}",
                        f.doc_id
                    ))
                })?;
                fields[idx] = outs
                    .into_iter()
                    .map(|o| SourcedSpan {
                        span: Span::new(o.start, o.end),
                        source: o.source,
                    })
                    .collect();
            }
            Ok(PredictionRecord {
                doc_id: f.doc_id,
                extraction: AggregatedExtraction { fields },
            })
        })
        .collect()
}
