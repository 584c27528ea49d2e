//! Training and inference timings of the joint model against the pairwise
//! baseline on one synthetic corpus.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::{PairwiseConfig, PairwiseModel};
use crate::data::{Dataset, Document};
use crate::encoder::ToyTransformerConfig;
use crate::error::Result;
use crate::evaluation::synthetic::{generate, SyntheticConfig};
use crate::model::{build_vocabulary, predict_all, ExtractionModel, JointConfig, JointModel, ModelKind};
use crate::trainer::{Trainer, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub corpus: SyntheticConfig,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub training: TrainingConfig,
    /// Also time one training epoch per model.
    pub train_epoch: bool,
    /// Threads for the concurrent inference row; skipped when 1.
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            corpus: SyntheticConfig {
                size: 8,
                num_fields: 8,
                ..Default::default()
            },
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            feedforward_dim: 128,
            training: TrainingConfig {
                epochs: 1,
                batch_size: 4,
                learning_rate: 1e-3,
                window_length: 128,
                stride: 64,
                ..Default::default()
            },
            train_epoch: true,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: ModelKind,
    pub phase: String,
    pub documents: usize,
    pub m: usize,
    pub seconds: f64,
    pub encoder_calls: u64,
}

/// Builds both models with identical encoder settings for `dataset`.
pub fn build_models(config: &BenchConfig, dataset: &Dataset) -> Result<(JointModel, PairwiseModel)> {
    let vocab = build_vocabulary(dataset.examples.iter().map(|e| &e.document), &dataset.schema, 1);
    let t = &config.training;
    let encoder = ToyTransformerConfig {
        vocab_size: vocab.len(),
        embed_dim: config.embed_dim,
        num_layers: config.num_layers,
        num_heads: config.num_heads,
        feedforward_dim: config.feedforward_dim,
        max_position: t.window_length,
        dropout: 0.0,
        init_seed: t.seed,
    };
    let joint = JointModel::new(
        JointConfig {
            encoder: encoder.clone(),
            query_dim: config.embed_dim,
            span_depth: 1,
            window_length: t.window_length,
            stride: t.stride,
        },
        dataset.schema.clone(),
        vocab.clone(),
    )?;
    let pairwise = PairwiseModel::new(
        PairwiseConfig::new(encoder, &dataset.schema, t.window_length, t.stride),
        dataset.schema.clone(),
        vocab,
    )?;
    Ok((joint, pairwise))
}

fn time_model<M: ExtractionModel>(
    model: &mut M,
    config: &BenchConfig,
    dataset: &Dataset,
    rows: &mut Vec<BenchRow>,
) -> Result<()> {
    let docs: Vec<Document> = dataset.examples.iter().map(|e| e.document.clone()).collect();
    let kind = model.kind();
    let row = |phase: &str, seconds: f64, calls: u64| BenchRow {
        model: kind,
        phase: phase.into(),
        documents: docs.len(),
        m: dataset.schema.len(),
        seconds,
        encoder_calls: calls,
    };
    let mut out = Vec::new();
    if config.train_epoch {
        model.reset_encoder_calls();
        let tc = TrainingConfig {
            epochs: 1,
            ..config.training.clone()
        };
        let started = Instant::now();
        Trainer::new(tc).train(model, &dataset.examples, &[])?;
        out.push(row("train_epoch", started.elapsed().as_secs_f64(), model.encoder_calls()));
    }
    model.reset_encoder_calls();
    let started = Instant::now();
    predict_all(model, &docs, 1)?;
    out.push(row("inference", started.elapsed().as_secs_f64(), model.encoder_calls()));
    if config.workers > 1 {
        model.reset_encoder_calls();
        let started = Instant::now();
        predict_all(model, &docs, config.workers)?;
        out.push(row(
            &format!("inference_{}w", config.workers),
            started.elapsed().as_secs_f64(),
            model.encoder_calls(),
        ));
    }
    rows.extend(out);
    Ok(())
}

/// Generates the corpus, then times the joint model and the baseline.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    let dataset = generate(&config.corpus)?;
    run_bench_on(config, &dataset)
}

pub fn run_bench_on(config: &BenchConfig, dataset: &Dataset) -> Result<Vec<BenchRow>> {
    let (mut joint, mut pairwise) = build_models(config, dataset)?;
    let mut rows = Vec::new();
    time_model(&mut joint, config, dataset, &mut rows)?;
    time_model(&mut pairwise, config, dataset, &mut rows)?;
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("model,phase,documents,m,seconds,encoder_calls\n");
    for r in rows {
        let model = match r.model {
            ModelKind::Joint => "joint",
            ModelKind::Pairwise => "pairwise",
        };
        let _ = writeln!(
            out,
            "{model},{},{},{},{:.6},{}",
            r.phase, r.documents, r.m, r.seconds, r.encoder_calls
        );
    }
    out
}
