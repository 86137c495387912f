//! Layered settings: built-in defaults, then a TOML file, then `VAXKIT_*`
//! environment variables, then command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use vaxkit_core::corpus::CsvSchema;
use vaxkit_core::finetune::{TrainingConfig, HASH_TEST_BACKEND};
use vaxkit_core::metrics::{AbsentLabels, JaccardMode, MetricOptions};
use vaxkit_core::zeroshot::{DecodingParams, ParseMode, RetryPolicy, ZeroShotSettings, DEFAULT_MODEL};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub data: CsvSchema,
    pub train: TrainSection,
    pub predict: PredictSection,
    pub zeroshot: ZeroShotSection,
    pub evaluate: MetricOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub backend: String,
    /// Base URL of a text-embeddings server for remote backends.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_server: Option<String>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
    pub freeze_encoder: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        TrainSection {
            backend: HASH_TEST_BACKEND.into(),
            embedding_server: None,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: t.seed,
            shuffle_each_epoch: t.shuffle_each_epoch,
            freeze_encoder: t.freeze_encoder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub threshold: f64,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection { threshold: TrainingConfig::default().threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotSection {
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.openai.com/v1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub concurrency: usize,
    pub requests_per_second: f64,
    pub parse_mode: ParseMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
}

impl Default for ZeroShotSection {
    fn default() -> Self {
        let d = DecodingParams::default();
        let r = RetryPolicy::default();
        ZeroShotSection {
            endpoint: None,
            model: DEFAULT_MODEL.into(),
            temperature: d.temperature,
            max_tokens: d.max_tokens,
            stop: d.stop,
            timeout_secs: 60,
            max_attempts: r.max_attempts,
            base_delay_ms: r.base_delay.as_millis() as u64,
            max_delay_ms: r.max_delay.as_millis() as u64,
            concurrency: vaxkit_core::zeroshot::DEFAULT_CONCURRENCY,
            requests_per_second: 0.0,
            parse_mode: ParseMode::Lenient,
            cache_dir: None,
            template: None,
        }
    }
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies every `VAXKIT_*` variable that `lookup` knows about.
    pub fn apply_env(&mut self, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), CliError> {
        fn set<T: FromStr>(lookup: &dyn Fn(&str) -> Option<String>, key: &str, slot: &mut T) -> Result<(), CliError>
        where
            T::Err: std::fmt::Display,
        {
            if let Some(raw) = lookup(key) {
                *slot = raw.trim().parse().map_err(|e| CliError::Config(format!("{key}={raw:?}: {e}")))?;
            }
            Ok(())
        }
        fn set_opt<T: FromStr>(lookup: &dyn Fn(&str) -> Option<String>, key: &str, slot: &mut Option<T>) -> Result<(), CliError>
        where
            T::Err: std::fmt::Display,
        {
            if let Some(raw) = lookup(key) {
                *slot = Some(raw.trim().parse().map_err(|e| CliError::Config(format!("{key}={raw:?}: {e}")))?);
            }
            Ok(())
        }
        if let Some(d) = lookup("VAXKIT_DELIMITER") {
            self.data.delimiter = d;
        }
        set(lookup, "VAXKIT_BACKEND", &mut self.train.backend)?;
        set_opt(lookup, "VAXKIT_EMBEDDING_SERVER", &mut self.train.embedding_server)?;
        set(lookup, "VAXKIT_EPOCHS", &mut self.train.epochs)?;
        set(lookup, "VAXKIT_BATCH_SIZE", &mut self.train.batch_size)?;
        set(lookup, "VAXKIT_LR", &mut self.train.learning_rate)?;
        set(lookup, "VAXKIT_SEED", &mut self.train.seed)?;
        set(lookup, "VAXKIT_FREEZE_ENCODER", &mut self.train.freeze_encoder)?;
        set(lookup, "VAXKIT_THRESHOLD", &mut self.predict.threshold)?;
        set_opt(lookup, "VAXKIT_ENDPOINT", &mut self.zeroshot.endpoint)?;
        set(lookup, "VAXKIT_MODEL", &mut self.zeroshot.model)?;
        set(lookup, "VAXKIT_TIMEOUT_SECS", &mut self.zeroshot.timeout_secs)?;
        set(lookup, "VAXKIT_MAX_ATTEMPTS", &mut self.zeroshot.max_attempts)?;
        set(lookup, "VAXKIT_CONCURRENCY", &mut self.zeroshot.concurrency)?;
        set_opt(lookup, "VAXKIT_CACHE_DIR", &mut self.zeroshot.cache_dir)?;
        Ok(())
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            threshold: self.predict.threshold,
            seed: self.train.seed,
            shuffle_each_epoch: self.train.shuffle_each_epoch,
            freeze_encoder: self.train.freeze_encoder,
        }
    }

    pub fn zero_shot_settings(&self) -> ZeroShotSettings {
        let z = &self.zeroshot;
        ZeroShotSettings {
            model_name: z.model.clone(),
            params: DecodingParams {
                temperature: z.temperature,
                max_tokens: z.max_tokens,
                stop: z.stop.clone(),
            },
            retry: RetryPolicy {
                max_attempts: z.max_attempts,
                base_delay: std::time::Duration::from_millis(z.base_delay_ms),
                max_delay: std::time::Duration::from_millis(z.max_delay_ms),
            },
            concurrency: z.concurrency,
            requests_per_second: z.requests_per_second,
            parse_mode: z.parse_mode,
        }
    }

    pub fn metric_options(&self) -> MetricOptions {
        self.evaluate
    }
}

/// Command-line spellings for the metric conventions.
pub fn parse_absent(s: &str) -> Result<AbsentLabels, String> {
    match s {
        "zero" => Ok(AbsentLabels::Zero),
        "skip" => Ok(AbsentLabels::Skip),
        _ => Err(format!("expected `zero` or `skip`, got `{s}`")),
    }
}

pub fn parse_jaccard(s: &str) -> Result<JaccardMode, String> {
    match s {
        "sample" => Ok(JaccardMode::Sample),
        "per-label" => Ok(JaccardMode::PerLabel),
        _ => Err(format!("expected `sample` or `per-label`, got `{s}`")),
    }
}
