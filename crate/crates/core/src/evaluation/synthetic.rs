//! Seeded template corpus: filler sentences with cued field mentions.
//!
//! A field's first mention reads `the <name> is <answer> .`; any further
//! mention of the same field reads `another <name> : <answer> .`. Answers come
//! from per-kind pools whose tokens never occur in the filler.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Document, FieldSchema, LabeledExample, Span, SpanAnnotation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub size: usize,
    pub num_fields: usize,
    /// Probability that an answered field carries two or more spans.
    pub multispan_rate: f64,
    pub min_length: usize,
    pub max_length: usize,
    /// Probability that a field has no answer in a document.
    pub absent_rate: f64,
    /// Prefix of every generated `doc_id`.
    pub id_prefix: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            size: 50,
            num_fields: 4,
            multispan_rate: 0.27,
            min_length: 450,
            max_length: 750,
            absent_rate: 0.1,
            id_prefix: "doc".into(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config("synthetic corpus size must be at least 1".into()));
        }
        if self.num_fields == 0 || self.num_fields > FIELDS.len() {
            return Err(Error::Config(format!(
                "synthetic corpora support 1..={} fields, got {}",
                FIELDS.len(),
                self.num_fields
            )));
        }
        if !(0.0..=1.0).contains(&self.multispan_rate) || !(0.0..=1.0).contains(&self.absent_rate) {
            return Err(Error::Config("rates must lie in [0, 1]".into()));
        }
        if self.min_length > self.max_length || self.min_length < 20 {
            return Err(Error::Config(format!(
                "length range {}..={} is invalid (minimum 20)",
                self.min_length, self.max_length
            )));
        }
        Ok(())
    }
}

/// Realized statistics of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub fields: usize,
    pub mean_length: f64,
    /// Share of answered (document, field) pairs with two or more spans.
    pub multispan_fraction: f64,
    /// Share of tokens inside a gold span.
    pub answer_token_fraction: f64,
    pub answered_pairs: usize,
    pub multispan_pairs: usize,
}

impl CorpusStats {
    pub fn of(examples: &[LabeledExample], m: usize) -> Self {
        let mut tokens = 0usize;
        let mut answer_tokens = 0usize;
        let mut answered = 0usize;
        let mut multi = 0usize;
        for ex in examples {
            tokens += ex.document.len();
            for field in 0..m {
                let spans = ex.spans_for(field);
                answer_tokens += spans.iter().map(Span::len).sum::<usize>();
                answered += usize::from(!spans.is_empty());
                multi += usize::from(spans.len() >= 2);
            }
        }
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            documents: examples.len(),
            fields: m,
            mean_length: div(tokens, examples.len()),
            multispan_fraction: div(multi, answered),
            answer_token_fraction: div(answer_tokens, tokens),
            answered_pairs: answered,
            multispan_pairs: multi,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Date,
    Amount,
    Organization,
    Location,
    Person,
    Duration,
    Percentage,
    Phone,
}

const FIELDS: [(&str, Kind); 16] = [
    ("contract date", Kind::Date),
    ("contract fee", Kind::Amount),
    ("client name", Kind::Organization),
    ("work location", Kind::Location),
    ("contact person", Kind::Person),
    ("contract term", Kind::Duration),
    ("late interest", Kind::Percentage),
    ("contact number", Kind::Phone),
    ("delivery date", Kind::Date),
    ("deposit amount", Kind::Amount),
    ("vendor name", Kind::Organization),
    ("delivery site", Kind::Location),
    ("project manager", Kind::Person),
    ("notice period", Kind::Duration),
    ("discount rate", Kind::Percentage),
    ("support line", Kind::Phone),
];

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];
const CURRENCIES: [&str; 3] = ["usd", "eur", "jpy"];
const ORG_HEADS: [&str; 10] = [
    "acme", "nova", "orbit", "kestrel", "summit", "harbor", "zenith", "cobalt", "lumen", "vertex",
];
const ORG_TAILS: [&str; 5] = ["corp", "holdings", "industries", "partners", "systems"];
const CITIES: [&str; 12] = [
    "osaka", "berlin", "toronto", "lyon", "madrid", "nagoya", "dublin", "oslo", "sydney",
    "denver", "kyoto", "porto",
];
const GIVEN: [&str; 8] = ["alice", "hiro", "maria", "omar", "lena", "kenji", "sara", "tom"];
const FAMILY: [&str; 8] = ["tanaka", "novak", "garcia", "weber", "silva", "ito", "khan", "moore"];
const UNITS: [&str; 3] = ["days", "weeks", "months"];
const COUNTS: [&str; 6] = ["three", "six", "nine", "twelve", "eighteen", "thirty"];

const FILLER: [&str; 60] = [
    "agreement", "party", "parties", "shall", "under", "terms", "herein", "provided", "that",
    "services", "obligations", "any", "all", "such", "without", "prior", "written", "consent",
    "each", "other", "including", "limited", "to", "with", "respect", "subject", "conditions",
    "hereof", "notwithstanding", "foregoing", "in", "accordance", "applicable", "law", "hereby",
    "not", "be", "assigned", "or", "transferred", "by", "either", "of", "this", "section",
    "confidential", "information", "disclosed", "receiving", "disclosing", "reasonable",
    "efforts", "perform", "work", "described", "schedule", "attached", "and", "for", "on",
];

fn answer<R: Rng>(kind: Kind, rng: &mut R) -> Vec<String> {
    let pick = |xs: &[&str], rng: &mut R| xs.choose(rng).expect("non-empty pool").to_string();
    match kind {
        Kind::Date => vec![
            pick(&MONTHS, rng),
            rng.random_range(1..=28u32).to_string(),
            rng.random_range(2015..=2024u32).to_string(),
        ],
        Kind::Amount => vec![
            format!("{}00", rng.random_range(1..=99u32)),
            pick(&CURRENCIES, rng),
        ],
        Kind::Organization => vec![pick(&ORG_HEADS, rng), pick(&ORG_TAILS, rng)],
        Kind::Location => {
            let mut v = vec![pick(&CITIES, rng)];
            if rng.random_bool(0.3) {
                v.push("office".into());
            }
            v
        }
        Kind::Person => vec![pick(&GIVEN, rng), pick(&FAMILY, rng)],
        Kind::Duration => vec![pick(&COUNTS, rng), pick(&UNITS, rng)],
        Kind::Percentage => vec![format!("{}.{}", rng.random_range(1..=9u32), rng.random_range(0..=9u32)), "percent".into()],
        Kind::Phone => vec![format!("555-{:04}", rng.random_range(0..10_000u32))],
    }
}

/// Schema of the first `m` template fields.
pub fn synthetic_schema(m: usize) -> Result<FieldSchema> {
    if m == 0 || m > FIELDS.len() {
        return Err(Error::Config(format!("synthetic schemas support 1..={} fields", FIELDS.len())));
    }
    FieldSchema::from_names(&FIELDS[..m].iter().map(|f| f.0).collect::<Vec<_>>())
}

fn filler_sentence<R: Rng>(rng: &mut R, out: &mut Vec<String>) {
    let len = rng.random_range(6..=14);
    for _ in 0..len {
        out.push(FILLER.choose(rng).expect("non-empty filler").to_string());
    }
    out.push(".".into());
}

/// Generates `config.size` documents; identical configs give identical corpora.
pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let schema = synthetic_schema(config.num_fields)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut examples = Vec::with_capacity(config.size);
    for d in 0..config.size {
        let target = rng.random_range(config.min_length..=config.max_length);
        // Mentions in document order: (field, is_first).
        let mut mentions: Vec<(usize, bool)> = Vec::new();
        for field in 0..config.num_fields {
            if rng.random_bool(config.absent_rate) {
                continue;
            }
            let count = if rng.random_bool(config.multispan_rate) {
                if rng.random_bool(0.8) {
                    2
                } else {
                    3
                }
            } else {
                1
            };
            mentions.extend((0..count).map(|k| (field, k == 0)));
        }
        // Shuffle while keeping each field's first mention ahead of its others.
        let keys: Vec<f64> = mentions.iter().map(|_| rng.random::<f64>()).collect();
        let mut order: Vec<usize> = (0..mentions.len()).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        let mut seen = vec![false; config.num_fields];
        let ordered: Vec<(usize, bool)> = order
            .into_iter()
            .map(|i| {
                let field = mentions[i].0;
                let first = !seen[field];
                seen[field] = true;
                (field, first)
            })
            .collect();

        let mut tokens: Vec<String> = Vec::with_capacity(target + 32);
        let mut spans: Vec<Vec<Span>> = vec![Vec::new(); config.num_fields];
        let slots = ordered.len() + 1;
        let per_slot = target.saturating_sub(ordered.len() * 8) / slots;
        for (field, first) in ordered {
            let goal = tokens.len() + per_slot;
            while tokens.len() < goal {
                filler_sentence(&mut rng, &mut tokens);
            }
            let name = &schema.field(field).name_tokens;
            tokens.push(if first { "the" } else { "another" }.into());
            tokens.extend(name.iter().cloned());
            tokens.push(if first { "is" } else { ":" }.into());
            let ans = answer(FIELDS[field].1, &mut rng);
            let start = tokens.len();
            tokens.extend(ans);
            spans[field].push(Span::new(start, tokens.len() - 1));
            tokens.push(".".into());
        }
        while tokens.len() < target {
            filler_sentence(&mut rng, &mut tokens);
        }
        let annotations = spans
            .into_iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(field_index, spans)| SpanAnnotation { field_index, spans })
            .collect();
        examples.push(LabeledExample {
            document: Document::new(format!("{}-{d:04}", config.id_prefix), tokens)?,
            annotations,
        });
    }
    Ok(Dataset { schema, examples })
}
