use std::path::Path;

use jointie::baseline::{PairwiseConfig, PairwiseModel};
use jointie::bench::{run_bench, to_csv, BenchConfig};
use jointie::data::{check_schema, Dataset, Document};
use jointie::evaluation::synthetic::{generate, CorpusStats, SyntheticConfig};
use jointie::evaluation::{predictions_from_json, predictions_to_json, MetricReport, PredictionRecord, RecallScope};
use jointie::model::{build_vocabulary, configure_workers, predict_all, Checkpoint, ExtractionModel, JointConfig, JointModel, ModelKind};
use jointie::trainer::{Trainer, BEST_CHECKPOINT, FINAL_CHECKPOINT, METRICS_FILE};
use jointie::{Error, Result};
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::{sidecar, RunManifest};
use crate::{BenchArgs, EvalArgs, GenArgs, IngestArgs, PredictArgs, TrainArgs};

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("value serializes")
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let ds = Dataset::read(&args.data)?;
    if args.validate {
        ds.validate_bio()?;
    }
    let stats = CorpusStats::of(&ds.examples, ds.schema.len());
    println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    if let Some(out) = &args.output {
        ds.write(out)?;
        let mut manifest = RunManifest::new("ingest");
        manifest.config = json!({ "validate": args.validate });
        manifest.hash_input(&args.data)?;
        manifest.stats = to_value(&stats);
        manifest.outputs.push(out.clone());
        manifest.write(&sidecar(out))?;
    }
    Ok(())
}

fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &args.model {
        cfg.model = m.parse()?;
    }
    if let Some(mode) = &args.loss_mode {
        cfg.loss_mode = serde_json::from_value(json!(mode))
            .map_err(|_| Error::Config(format!("unknown loss mode {mode:?}, expected sum or learnable_alpha")))?;
    }
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = args.$f { cfg.$f = v; } )* };
    }
    set!(epochs, batch_size, learning_rate, seed, window_length, stride);
    Ok(cfg)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&args)?;
    let training = cfg.training();
    training.validate()?;
    let train_set = Dataset::read(&args.train)?;
    let dev = match &args.dev {
        Some(p) => {
            let d = Dataset::read(p)?;
            check_schema(&train_set.schema, &d.schema)?;
            d.examples
        }
        None => Vec::new(),
    };
    let schema = train_set.schema.clone();
    let vocab = build_vocabulary(train_set.examples.iter().map(|e| &e.document), &schema, cfg.min_count);
    let encoder = cfg.encoder(vocab.len());
    let mut model: Box<dyn ExtractionModel> = match cfg.model {
        ModelKind::Joint => Box::new(JointModel::new(
            JointConfig {
                encoder,
                query_dim: cfg.query_dim.unwrap_or(cfg.encoder.embed_dim),
                span_depth: cfg.span_depth,
                window_length: cfg.window_length,
                stride: cfg.stride,
            },
            schema.clone(),
            vocab,
        )?),
        ModelKind::Pairwise => Box::new(PairwiseModel::new(
            PairwiseConfig::new(encoder, &schema, cfg.window_length, cfg.stride),
            schema.clone(),
            vocab,
        )?),
    };
    configure_workers(args.workers)?;
    std::fs::create_dir_all(&args.output)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", args.output.display())))?;
    let report = Trainer::new(training)
        .output_dir(&args.output)
        .on_epoch(|r| {
            eprintln!(
                "epoch {:>3}  L {:.4}  L_span {:.4}  L_ner {:.4}  alpha {:.3}  {:.1}s",
                r.epoch, r.loss, r.loss_span, r.loss_ner, r.alpha, r.epoch_seconds
            )
        })
        .train(model.as_mut(), &train_set.examples, &dev)?;

    let mut manifest = RunManifest::new("train");
    manifest.seed = Some(cfg.seed);
    manifest.config = to_value(&cfg);
    manifest.hash_input(&args.train)?;
    if let Some(dev) = &args.dev {
        manifest.hash_input(dev)?;
    }
    if let Some(c) = &args.config {
        manifest.hash_input(c)?;
    }
    manifest.stats = json!({
        "train": CorpusStats::of(&train_set.examples, schema.len()),
        "parameters": model.params().num_scalars(),
        "best_epoch": report.best_epoch,
        "final": report.epochs.last(),
    });
    manifest.outputs = [METRICS_FILE, BEST_CHECKPOINT, FINAL_CHECKPOINT]
        .iter()
        .map(|f| args.output.join(f))
        .collect();
    manifest.write(&args.output.join("manifest.json"))
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let model = Checkpoint::read(&args.checkpoint)?.into_model()?;
    let ds = Dataset::read(&args.data)?;
    check_schema(model.schema(), &ds.schema)?;
    let docs: Vec<Document> = ds.examples.iter().map(|e| e.document.clone()).collect();
    let preds: Vec<PredictionRecord> = predict_all(model.as_ref(), &docs, args.workers)?
        .iter()
        .map(PredictionRecord::from)
        .collect();
    write(&args.output, &predictions_to_json(&preds, &docs, model.schema())?)?;

    let mut manifest = RunManifest::new("predict");
    manifest.config = json!({ "model": model.kind(), "workers": args.workers });
    manifest.hash_input(&args.checkpoint)?;
    manifest.hash_input(&args.data)?;
    manifest.stats = json!({ "documents": docs.len() });
    manifest.outputs.push(args.output.clone());
    manifest.write(&sidecar(&args.output))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let gold = Dataset::read(&args.data)?;
    let bytes = std::fs::read(&args.predictions)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.predictions.display())))?;
    let preds = predictions_from_json(&bytes, &gold.schema, &args.predictions.display().to_string())?;
    let scope = if args.all_spans {
        RecallScope::AllSpans
    } else {
        RecallScope::MultiSpan
    };
    let report = MetricReport::compute(&preds, &gold.examples, &gold.schema, scope)?;
    print!("{}", report.to_table());
    if let Some(out) = &args.output {
        write(out, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
        let mut manifest = RunManifest::new("eval");
        manifest.config = json!({ "recall_scope": scope });
        manifest.hash_input(&args.data)?;
        manifest.hash_input(&args.predictions)?;
        manifest.stats = to_value(&report);
        manifest.outputs.push(out.clone());
        manifest.write(&sidecar(out))?;
    }
    Ok(())
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let mut cfg: BenchConfig = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => BenchConfig::default(),
    };
    if let Some(n) = args.documents {
        cfg.corpus.size = n;
    }
    if let Some(m) = args.fields {
        cfg.corpus.num_fields = m;
    }
    if let Some(s) = args.seed {
        cfg.corpus.seed = s;
        cfg.training.seed = s;
    }
    cfg.train_epoch &= !args.no_train;
    cfg.workers = args.workers;
    let rows = run_bench(&cfg)?;
    let csv = to_csv(&rows);
    print!("{csv}");
    write(&args.output, &csv)?;

    let mut manifest = RunManifest::new("bench");
    manifest.seed = Some(cfg.corpus.seed);
    manifest.config = to_value(&cfg);
    if let Some(c) = &args.config {
        manifest.hash_input(c)?;
    }
    manifest.stats = to_value(&rows);
    manifest.outputs.push(args.output.clone());
    manifest.write(&sidecar(&args.output))
}

pub fn gen_synthetic(args: GenArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        seed: args.seed,
        size: args.size,
        num_fields: args.fields,
        multispan_rate: args.multispan_rate,
        min_length: args.min_length,
        max_length: args.max_length,
        absent_rate: args.absent_rate,
        id_prefix: args.id_prefix,
    };
    let ds = generate(&cfg)?;
    ds.write(&args.output)?;
    let stats = CorpusStats::of(&ds.examples, ds.schema.len());
    eprintln!(
        "{} documents, mean length {:.1}, multi-span {:.2}%, answer tokens {:.2}%",
        stats.documents,
        stats.mean_length,
        100.0 * stats.multispan_fraction,
        100.0 * stats.answer_token_fraction
    );
    let mut manifest = RunManifest::new("gen-synthetic");
    manifest.seed = Some(cfg.seed);
    manifest.config = to_value(&cfg);
    manifest.stats = to_value(&stats);
    manifest.outputs.push(args.output.clone());
    manifest.write(&sidecar(&args.output))
}
