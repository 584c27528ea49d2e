use std::path::Path;

use jointie::encoder::ToyTransformerConfig;
use jointie::loss::LossMode;
use jointie::model::ModelKind;
use jointie::trainer::TrainingConfig;
use jointie::windowing::{DEFAULT_STRIDE, DEFAULT_WINDOW_LENGTH};
use jointie::{Error, Result};
use serde::{Deserialize, Serialize};

/// Encoder keys of the `[encoder]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            feedforward_dim: 128,
            dropout: 0.0,
        }
    }
}

/// Run configuration as read from a TOML file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub window_length: usize,
    pub stride: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_mode: LossMode,
    pub alpha_init: f64,
    pub seed: u64,
    /// Query embedding width; the encoder width when absent.
    pub query_dim: Option<usize>,
    pub span_depth: usize,
    /// Tokens seen fewer times in the training set map to `[UNK]`.
    pub min_count: usize,
    pub encoder: EncoderSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            model: ModelKind::Joint,
            window_length: DEFAULT_WINDOW_LENGTH,
            stride: DEFAULT_STRIDE,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            loss_mode: t.loss_mode,
            alpha_init: t.alpha_init,
            seed: t.seed,
            query_dim: None,
            span_depth: 1,
            min_count: 1,
            encoder: EncoderSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{context}: {e}")))
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            loss_mode: self.loss_mode,
            alpha_init: self.alpha_init,
            seed: self.seed,
            window_length: self.window_length,
            stride: self.stride,
            ..TrainingConfig::default()
        }
    }

    pub fn encoder(&self, vocab_size: usize) -> ToyTransformerConfig {
        ToyTransformerConfig {
            vocab_size,
            embed_dim: self.encoder.embed_dim,
            num_layers: self.encoder.num_layers,
            num_heads: self.encoder.num_heads,
            feedforward_dim: self.encoder.feedforward_dim,
            max_position: self.window_length,
            dropout: self.encoder.dropout,
            init_seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("", "t").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.window_length, 384);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.learning_rate, 5e-5);
        assert_eq!(cfg.epochs, 20);
    }

    #[test]
    fn keys_parse() {
        let cfg = RunConfig::parse(
            "model = \"pairwise\"\nloss_mode = \"learnable_alpha\"\nstride = 32\n[encoder]\nembed_dim = 16\n",
            "t",
        )
        .unwrap();
        assert_eq!(cfg.model, ModelKind::Pairwise);
        assert_eq!(cfg.loss_mode, LossMode::LearnableAlpha);
        assert_eq!(cfg.stride, 32);
        assert_eq!(cfg.encoder.embed_dim, 16);
        assert_eq!(cfg.encoder.num_layers, 2);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = RunConfig::parse("windowlength = 3", "t").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
