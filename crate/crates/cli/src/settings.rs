//! Experiment configuration: a `key = value` file overlaid by CLI flags
//! (flag > file > default).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nl2sql_core::grammar::GrammarConfig;
use nl2sql_core::model::{CopyHead, ModelConfig};
use nl2sql_core::query_ast::OrderPolicy;
use nl2sql_core::trainer::{Regime, TrainConfig};

#[derive(Default, Clone)]
pub struct Settings {
    pub regime: Option<String>,
    pub order: Option<String>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
    pub rl_warm_start_epochs: Option<usize>,
    pub d_emb: Option<usize>,
    pub d_dec: Option<usize>,
    pub encoder_layers: Option<usize>,
    pub decoder_layers: Option<usize>,
    pub input_dropout: Option<f64>,
    pub recurrent_dropout: Option<f64>,
    pub label_smoothing: Option<f64>,
    pub copy_head: Option<String>,
    pub constraints_in_training: Option<bool>,
    pub allow_repeated_columns: Option<bool>,
    pub embeddings: Option<PathBuf>,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("config key {key:?}: cannot parse {value:?}"))
}

impl Settings {
    /// Parse a config file of `key = value` lines; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Settings, String> {
        let text =
            std::fs::read_to_string(path).map_err(|e| format!("cannot read config: {e}"))?;
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key = value", i + 1))?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut s = Settings::default();
        for (key, value) in map {
            match key.as_str() {
                "regime" => s.regime = Some(value),
                "order" => s.order = Some(value),
                "batch_size" => s.batch_size = Some(parse(&key, &value)?),
                "max_epochs" => s.max_epochs = Some(parse(&key, &value)?),
                "learning_rate" => s.learning_rate = Some(parse(&key, &value)?),
                "patience" => s.patience = Some(parse(&key, &value)?),
                "seed" => s.seed = Some(parse(&key, &value)?),
                "rl_warm_start_epochs" => s.rl_warm_start_epochs = Some(parse(&key, &value)?),
                "d_emb" => s.d_emb = Some(parse(&key, &value)?),
                "d_dec" => s.d_dec = Some(parse(&key, &value)?),
                "encoder_layers" => s.encoder_layers = Some(parse(&key, &value)?),
                "decoder_layers" => s.decoder_layers = Some(parse(&key, &value)?),
                "input_dropout" => s.input_dropout = Some(parse(&key, &value)?),
                "recurrent_dropout" => s.recurrent_dropout = Some(parse(&key, &value)?),
                "label_smoothing" => s.label_smoothing = Some(parse(&key, &value)?),
                "copy_head" => s.copy_head = Some(value),
                "constraints_in_training" => {
                    s.constraints_in_training = Some(parse(&key, &value)?)
                }
                "allow_repeated_columns" => s.allow_repeated_columns = Some(parse(&key, &value)?),
                "embeddings" => s.embeddings = Some(PathBuf::from(value)),
                other => return Err(format!("unknown config key {other:?}")),
            }
        }
        Ok(s)
    }

    /// Fields set in `over` win.
    pub fn overlay(mut self, over: &Settings) -> Settings {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f.clone(); } )* };
        }
        take!(
            regime,
            order,
            batch_size,
            max_epochs,
            learning_rate,
            patience,
            seed,
            rl_warm_start_epochs,
            d_emb,
            d_dec,
            encoder_layers,
            decoder_layers,
            input_dropout,
            recurrent_dropout,
            label_smoothing,
            copy_head,
            constraints_in_training,
            allow_repeated_columns,
            embeddings
        );
        self
    }

    pub fn order_policy(&self) -> Result<OrderPolicy, String> {
        Ok(match self.order.as_deref().unwrap_or("original") {
            "original" => OrderPolicy::Original,
            "reversed" => OrderPolicy::Reversed,
            "arbitrary" => OrderPolicy::ArbitraryPerTrial {
                seed: self.seed.unwrap_or(1),
            },
            other => return Err(format!("unknown order {other:?} (original|reversed|arbitrary)")),
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, String> {
        let defaults = TrainConfig::default();
        let regime = match self.regime.as_deref().unwrap_or("tf") {
            "tf" => Regime::TeacherForcing(self.order_policy()?),
            "oracle" => Regime::Oracle,
            "rl" => Regime::Reinforce,
            other => return Err(format!("unknown regime {other:?} (tf|oracle|rl)")),
        };
        Ok(TrainConfig {
            regime,
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            max_epochs: self.max_epochs.unwrap_or(defaults.max_epochs),
            learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
            patience: self.patience.unwrap_or(defaults.patience),
            seed: self.seed.unwrap_or(defaults.seed),
            rl_warm_start_epochs: self
                .rl_warm_start_epochs
                .unwrap_or(defaults.rl_warm_start_epochs),
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig, String> {
        let d = ModelConfig::default();
        let copy_head = match self.copy_head.as_deref().unwrap_or("shared") {
            "shared" => CopyHead::SharedSoftmax,
            "porg" => CopyHead::PointOrGenerate,
            other => return Err(format!("unknown copy head {other:?} (shared|porg)")),
        };
        Ok(ModelConfig {
            d_emb: self.d_emb.unwrap_or(d.d_emb),
            d_dec: self.d_dec.unwrap_or(d.d_dec),
            encoder_layers: self.encoder_layers.unwrap_or(d.encoder_layers),
            decoder_layers: self.decoder_layers.unwrap_or(d.decoder_layers),
            input_dropout: self.input_dropout.unwrap_or(d.input_dropout),
            recurrent_dropout: self.recurrent_dropout.unwrap_or(d.recurrent_dropout),
            label_smoothing_eps: self.label_smoothing.unwrap_or(d.label_smoothing_eps),
            copy_head,
            constraints_in_training: self.constraints_in_training.unwrap_or(false),
        })
    }

    pub fn grammar_config(&self) -> GrammarConfig {
        GrammarConfig {
            allow_repeated_columns: self.allow_repeated_columns.unwrap_or(false),
        }
    }
}
