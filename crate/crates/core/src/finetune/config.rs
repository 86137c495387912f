use serde::{Deserialize, Serialize};

use super::FinetuneError;

/// Identity and shape of a text-encoder backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderBackendSpec {
    pub model_name: String,
    pub embedding_dim: usize,
    pub max_input_tokens: usize,
}

impl EncoderBackendSpec {
    pub fn new(model_name: impl Into<String>, embedding_dim: usize, max_input_tokens: usize) -> Result<Self, FinetuneError> {
        let spec = EncoderBackendSpec {
            model_name: model_name.into(),
            embedding_dim,
            max_input_tokens,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FinetuneError> {
        if self.model_name.is_empty() {
            return Err(FinetuneError::InvalidConfig("backend model name is empty".into()));
        }
        if self.embedding_dim == 0 {
            return Err(FinetuneError::InvalidConfig("embedding_dim must be positive".into()));
        }
        if self.max_input_tokens == 0 {
            return Err(FinetuneError::InvalidConfig("max_input_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Name of the bundled deterministic test encoder.
pub const HASH_TEST_BACKEND: &str = "hash-test";
pub const HASH_TEST_DIM: usize = 16;

/// Known backends: (name, pooled width, max input tokens).
pub const KNOWN_BACKENDS: &[(&str, usize, usize)] = &[
    (HASH_TEST_BACKEND, HASH_TEST_DIM, 512),
    ("bert-large-uncased", 1024, 512),
    ("bert-base-uncased", 768, 512),
    ("Hate-speech-CNERG/bert-base-uncased-hatexplain", 768, 512),
];

/// Looks up a backend spec by name. `hatexplain` is accepted as a short alias.
pub fn known_backend(name: &str) -> Option<EncoderBackendSpec> {
    let name = if name.eq_ignore_ascii_case("hatexplain") {
        "Hate-speech-CNERG/bert-base-uncased-hatexplain"
    } else {
        name
    };
    KNOWN_BACKENDS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|&(n, dim, max)| EncoderBackendSpec {
            model_name: n.to_string(),
            embedding_dim: dim,
            max_input_tokens: max,
        })
}

/// How token states become one sentence vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Mean over token states.
    Mean,
    /// The backend's own pooled output (e.g. a served `[CLS]`/pooler vector).
    BackendPooled,
}

impl Pooling {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Pooling::Mean => 0,
            Pooling::BackendPooled => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Pooling::Mean),
            1 => Some(Pooling::BackendPooled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub threshold: f64,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
    /// Train only the dense head, keeping encoder weights fixed.
    pub freeze_encoder: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 100,
            batch_size: 1,
            learning_rate: 2e-5,
            threshold: 0.5,
            seed: 42,
            shuffle_each_epoch: true,
            freeze_encoder: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        if self.epochs < 1 {
            return Err(FinetuneError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(FinetuneError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FinetuneError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        validate_threshold(self.threshold)
    }
}

pub fn validate_threshold(threshold: f64) -> Result<(), FinetuneError> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(FinetuneError::InvalidConfig(format!(
            "threshold must lie strictly between 0 and 1, got {threshold}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = TrainingConfig::default();
        assert_eq!(c.epochs, 100);
        assert_eq!(c.batch_size, 1);
        assert_eq!(c.learning_rate, 2e-5);
        assert_eq!(c.threshold, 0.5);
        assert!(c.shuffle_each_epoch);
        assert!(!c.freeze_encoder);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_invalid_values() {
        let bad = [
            TrainingConfig { epochs: 0, ..Default::default() },
            TrainingConfig { batch_size: 0, ..Default::default() },
            TrainingConfig { learning_rate: 0.0, ..Default::default() },
            TrainingConfig { learning_rate: f64::NAN, ..Default::default() },
            TrainingConfig { threshold: 0.0, ..Default::default() },
            TrainingConfig { threshold: 1.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(FinetuneError::InvalidConfig(_))), "{c:?}");
        }
    }

    #[test]
    fn backend_registry() {
        assert_eq!(known_backend("bert-large-uncased").unwrap().embedding_dim, 1024);
        let hx = known_backend("hatexplain").unwrap();
        assert_eq!(hx.embedding_dim, 768);
        assert_eq!(hx.max_input_tokens, 512);
        assert_eq!(known_backend(HASH_TEST_BACKEND).unwrap().embedding_dim, 16);
        assert!(known_backend("gpt-2").is_none());
        assert!(EncoderBackendSpec::new("x", 0, 1).is_err());
        assert!(EncoderBackendSpec::new("x", 4, 0).is_err());
    }
}
