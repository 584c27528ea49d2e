//! Mini-batch training with Adam, per-epoch metrics and checkpointing.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::evaluation::{conll_f1, squad_f1, PredictionRecord};
use crate::loss::{alpha_logit, LossMode, LossReport};
use crate::model::{predict_all, ExtractionModel, PreparedExample};
use crate::tape::{Gradients, ParamStore};
use crate::windowing::{DEFAULT_STRIDE, DEFAULT_WINDOW_LENGTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss_mode: LossMode,
    /// Starting α for [`LossMode::LearnableAlpha`].
    pub alpha_init: f64,
    pub seed: u64,
    pub window_length: usize,
    pub stride: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss_mode: LossMode::Sum,
            alpha_init: 0.5,
            seed: 0,
            window_length: DEFAULT_WINDOW_LENGTH,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        if self.epsilon <= 0.0 {
            return bad("epsilon must be positive".into());
        }
        if !(self.alpha_init > 0.0 && self.alpha_init < 1.0) {
            return bad(format!("alpha_init must lie in (0, 1), got {}", self.alpha_init));
        }
        Ok(())
    }
}

/// Adam without schedule; parameters without a gradient are left untouched.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Option<Array2<f64>>>,
    v: Vec<Option<Array2<f64>>>,
}

impl Adam {
    pub fn new(config: &TrainingConfig, params: &ParamStore) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            step: 0,
            m: vec![None; params.len()],
            v: vec![None; params.len()],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (id, g) in grads.iter() {
            let m = self.m[id.0].get_or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self.v[id.0].get_or_insert_with(|| Array2::zeros(g.raw_dim()));
            let p = params.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(rename = "L")]
    pub loss: f64,
    #[serde(rename = "L_span")]
    pub loss_span: f64,
    #[serde(rename = "L_NER")]
    pub loss_ner: f64,
    pub alpha: f64,
    pub dev_squad_f1: Option<f64>,
    pub dev_conll_f1: Option<f64>,
    pub epoch_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    /// Batch-mean losses of every optimizer step.
    pub steps: Vec<LossReport>,
    /// 1-based epoch whose parameters went into `best.ckpt`.
    pub best_epoch: usize,
}

impl TrainingReport {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.total).collect()
    }
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

type EpochHook<'a> = Box<dyn FnMut(&EpochRecord) + 'a>;

/// Trains a model in place.
pub struct Trainer<'a> {
    config: TrainingConfig,
    output_dir: Option<PathBuf>,
    on_epoch: Option<EpochHook<'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainingConfig) -> Self {
        Self {
            config,
            output_dir: None,
            on_epoch: None,
        }
    }

    /// Writes the metrics log and both checkpoints into `dir`.
    pub fn output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.output_dir = Some(dir.into());
        self
    }

    pub fn on_epoch(mut self, f: impl FnMut(&EpochRecord) + 'a) -> Self {
        self.on_epoch = Some(Box::new(f));
        self
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn train<M: ExtractionModel + ?Sized>(
        mut self,
        model: &mut M,
        train: &[LabeledExample],
        dev: &[LabeledExample],
    ) -> Result<TrainingReport> {
        let cfg = self.config.clone();
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        if model.window_length() != cfg.window_length || model.stride() != cfg.stride {
            return Err(Error::Config(format!(
                "model windows ({}, {}) differ from training config ({}, {})",
                model.window_length(),
                model.stride(),
                cfg.window_length,
                cfg.stride
            )));
        }
        let prepared = train
            .iter()
            .map(|ex| model.prepare(ex))
            .collect::<Result<Vec<PreparedExample>>>()?;
        for ex in dev {
            ex.validate(model.schema())?;
        }
        if cfg.loss_mode == LossMode::LearnableAlpha {
            let id = model.alpha_param().ok_or_else(|| {
                Error::Config(format!("{:?} model has no learnable alpha", model.kind()))
            })?;
            model.params_mut().get_mut(id)[[0, 0]] = alpha_logit(cfg.alpha_init);
        }
        let mut metrics = match &self.output_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(METRICS_FILE);
                Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&path)
                        .map_err(|e| Error::io(&path, e))
                        .map(|f| (f, path))?,
                )
            }
            None => None,
        };

        let dropout = model.encoder().config().dropout > 0.0;
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = Adam::new(&cfg, model.params());
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut epochs = Vec::with_capacity(cfg.epochs);
        let mut steps = Vec::new();
        let mut best: Option<(f64, usize)> = None;
        let mut batch_id = 0usize;

        for epoch in 1..=cfg.epochs {
            let started = Instant::now();
            order.shuffle(&mut shuffle_rng);
            let mut sums = LossReport {
                total: 0.0,
                span: 0.0,
                ner: 0.0,
                alpha: 0.0,
            };
            for batch in order.chunks(cfg.batch_size) {
                batch_id += 1;
                let m: &M = model;
                let results: Vec<Result<(LossReport, Gradients)>> = batch
                    .par_iter()
                    .map(|&i| {
                        let mut rng = dropout.then(|| {
                            ChaCha8Rng::seed_from_u64(
                                cfg.seed ^ ((epoch as u64) << 32) ^ (i as u64).wrapping_mul(0x9E37_79B9),
                            )
                        });
                        m.loss_and_grads(
                            &prepared[i],
                            cfg.loss_mode,
                            rng.as_mut().map(|r| r as &mut dyn RngCore),
                        )
                    })
                    .collect();
                let weight = 1.0 / batch.len() as f64;
                let mut grads = Gradients::zeros_like(model.params());
                let mut mean = LossReport {
                    total: 0.0,
                    span: 0.0,
                    ner: 0.0,
                    alpha: 0.0,
                };
                for r in results {
                    let (report, g) = r?;
                    if !report.is_finite() || !g.all_finite() {
                        return Err(Error::NonFiniteLoss {
                            batch: batch_id,
                            total: report.total,
                            span: report.span,
                            ner: report.ner,
                        });
                    }
                    grads.accumulate(&g, weight);
                    mean.total += weight * report.total;
                    mean.span += weight * report.span;
                    mean.ner += weight * report.ner;
                    mean.alpha = report.alpha;
                }
                adam.update(model.params_mut(), &grads);
                let n = batch.len() as f64;
                sums.total += n * mean.total;
                sums.span += n * mean.span;
                sums.ner += n * mean.ner;
                steps.push(mean);
            }
            let count = prepared.len() as f64;
            let alpha = match (cfg.loss_mode, model.alpha_param()) {
                (LossMode::LearnableAlpha, Some(id)) => crate::loss::alpha_from_raw(model.params().get(id)[[0, 0]]),
                _ => steps.last().map_or(0.5, |s| s.alpha),
            };
            let (dev_squad, dev_conll) = if dev.is_empty() {
                (None, None)
            } else {
                let (s, c) = dev_scores(&*model, dev)?;
                (Some(s), Some(c))
            };
            let record = EpochRecord {
                epoch,
                loss: sums.total / count,
                loss_span: sums.span / count,
                loss_ner: sums.ner / count,
                alpha,
                dev_squad_f1: dev_squad,
                dev_conll_f1: dev_conll,
                epoch_seconds: started.elapsed().as_secs_f64(),
            };
            let score = match (dev_squad, dev_conll) {
                (Some(s), Some(c)) => (s + c) / 2.0,
                _ => -record.loss,
            };
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, epoch));
                if let Some(dir) = &self.output_dir {
                    model.checkpoint().write(&dir.join(BEST_CHECKPOINT))?;
                }
            }
            if let Some((file, path)) = metrics.as_mut() {
                write_record(file, path, &record)?;
            }
            if let Some(f) = self.on_epoch.as_mut() {
                f(&record);
            }
            epochs.push(record);
        }
        if let Some(dir) = &self.output_dir {
            model.checkpoint().write(&dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(TrainingReport {
            epochs,
            steps,
            best_epoch: best.map_or(0, |b| b.1),
        })
    }
}

fn write_record(file: &mut File, path: &Path, record: &EpochRecord) -> Result<()> {
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(file, "{line}").map_err(|e| Error::io(path, e))
}

/// First-span F1 and entity micro F1 of `model` on `dev`.
pub fn dev_scores<M: ExtractionModel + ?Sized>(model: &M, dev: &[LabeledExample]) -> Result<(f64, f64)> {
    let docs: Vec<_> = dev.iter().map(|e| e.document.clone()).collect();
    let preds: Vec<PredictionRecord> = predict_all(model, &docs, 1)?
        .iter()
        .map(PredictionRecord::from)
        .collect();
    let m = model.schema().len();
    Ok((squad_f1(&preds, dev, m)?, conll_f1(&preds, dev, m)?))
}
