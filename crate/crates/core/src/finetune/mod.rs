//! Fine-tuned encoder classifier: a text encoder whose sentence embedding
//! feeds one dense layer with a sigmoid per label.
//!
//! Training starts from a zero head and minimizes binary cross-entropy
//! averaged over the twelve labels with Adam (constant learning rate, no
//! warmup). The seed drives the per-epoch shuffle. By default the encoder is
//! updated together with the head; with
//! [`TrainingConfig::freeze_encoder`] only the head is trained and
//! embeddings are computed once up front.

mod checkpoint;
mod config;
mod encoder;
mod head;
mod optim;

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_state, save_state, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    known_backend, validate_threshold, EncoderBackendSpec, Pooling, TrainingConfig, HASH_TEST_BACKEND,
    HASH_TEST_DIM, KNOWN_BACKENDS,
};
pub use encoder::{tokenize, Backend, Encoder, HashEncoder, RemoteEncoder, HASH_BUCKETS};
pub use head::{bce_from_logits, sigmoid, DenseHead, HeadGrads};
pub use optim::Adam;

use crate::corpus::TweetRecord;
use crate::taxonomy::{LabelId, LabelSet, NUM_LABELS};

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("encoder backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("tokenization failed: {0}")]
    TokenizationFailure(String),
    #[error("embedding has {found} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("record `{0}` has no gold labels")]
    MissingGold(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// A trained (or loaded) classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    pub backend: Backend,
    pub pooling: Pooling,
    pub encoder_frozen: bool,
    pub head: DenseHead,
    pub training_log: Vec<EpochLoss>,
}

impl ClassifierState {
    pub fn spec(&self) -> &EncoderBackendSpec {
        self.backend.spec()
    }

    pub fn probabilities(&self, text: &str) -> Result<[f64; NUM_LABELS], FinetuneError> {
        let embedding = self.backend.encode(text)?;
        self.head.forward(&embedding)
    }

    pub fn predict(&self, text: &str, threshold: f64) -> Result<LabelSet, FinetuneError> {
        predict(text, self, threshold)
    }
}

/// Labels whose probability reaches `threshold`, before the `none` rule.
pub fn labels_at_threshold(probabilities: &[f64; NUM_LABELS], threshold: f64) -> LabelSet {
    LabelId::ALL
        .into_iter()
        .filter(|l| probabilities[l.index()] >= threshold)
        .collect()
}

/// Thresholded prediction with the `none` rule applied.
pub fn predict(text: &str, state: &ClassifierState, threshold: f64) -> Result<LabelSet, FinetuneError> {
    validate_threshold(threshold)?;
    let probabilities = state.probabilities(text)?;
    Ok(labels_at_threshold(&probabilities, threshold).normalized())
}

/// Encodes `text` with `backend` and checks the result's width.
pub fn encode(text: &str, backend: &dyn Encoder) -> Result<Array1<f64>, FinetuneError> {
    let embedding = backend.encode(text)?;
    if embedding.len() != backend.spec().embedding_dim {
        return Err(FinetuneError::DimensionMismatch {
            expected: backend.spec().embedding_dim,
            found: embedding.len(),
        });
    }
    Ok(embedding)
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;

pub fn train(records: &[TweetRecord], backend: Backend, config: &TrainingConfig) -> Result<ClassifierState, FinetuneError> {
    config.validate()?;
    if records.is_empty() {
        return Err(FinetuneError::InvalidConfig("no training records".into()));
    }
    let golds = records
        .iter()
        .map(|r| r.gold.ok_or_else(|| FinetuneError::MissingGold(r.id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    if !config.freeze_encoder && !backend.is_trainable() {
        return Err(FinetuneError::BackendUnavailable(format!(
            "`{}` is served remotely and cannot be fine-tuned; train with a frozen encoder",
            backend.spec().model_name
        )));
    }

    let dim = backend.spec().embedding_dim;
    let mut head = DenseHead::zeros(dim);
    let mut backend = backend;

    let frozen_embeddings = if config.freeze_encoder {
        Some(
            records
                .iter()
                .map(|r| encode(&r.text, &backend))
                .collect::<Result<Vec<_>, _>>()?,
        )
    } else {
        None
    };

    let mut adam = Adam::new(config.learning_rate);
    let mut w_slot = Adam::slot(head.weights.len());
    let mut b_slot = Adam::slot(NUM_LABELS);
    let mut table_slot = match &backend {
        Backend::Hash(h) if !config.freeze_encoder => Adam::slot(h.table.len()),
        _ => Adam::slot(0),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let batch_scale = |len: usize| 1.0 / len as f64;

    for epoch in 1..=config.epochs {
        if config.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = batch_scale(batch.len());
            let mut gw = ndarray::Array2::<f64>::zeros(head.weights.dim());
            let mut gb = Array1::<f64>::zeros(NUM_LABELS);
            let mut g_rows: BTreeMap<usize, Array1<f64>> = BTreeMap::new();

            for &i in batch {
                let (loss, grads) = match (&frozen_embeddings, &backend) {
                    (Some(cache), _) => {
                        let (loss, grads, _) = head.loss_and_grads(&cache[i], golds[i])?;
                        (loss, grads)
                    }
                    (None, Backend::Hash(enc)) => {
                        let (embedding, trace) = enc.encode_traced(&records[i].text)?;
                        let (loss, grads, g_emb) = head.loss_and_grads(&embedding, golds[i])?;
                        let enc_grads = enc.backward(&trace, &g_emb);
                        for (row, g) in enc_grads.rows {
                            g_rows
                                .entry(row)
                                .or_insert_with(|| Array1::zeros(dim))
                                .scaled_add(scale, &g);
                        }
                        (loss, grads)
                    }
                    (None, Backend::Remote(_)) => unreachable!("checked above"),
                };
                if !loss.is_finite() {
                    return Err(FinetuneError::NonFiniteLoss { epoch, step: step + 1 });
                }
                loss_sum += loss;
                gw.scaled_add(scale, &grads.weights);
                gb.scaled_add(scale, &grads.bias);
            }

            adam.tick();
            adam.update(&mut w_slot, slice_mut(&mut head.weights), slice(&gw), 0);
            adam.update(&mut b_slot, slice_mut(&mut head.bias), slice(&gb), 0);
            if let (None, Backend::Hash(enc)) = (&frozen_embeddings, &mut backend) {
                let table = slice_mut(&mut enc.table);
                // Lazy update: only rows touched by this batch move.
                for (row, g) in &g_rows {
                    adam.update(&mut table_slot, table, slice(g), row * dim);
                }
            }
        }
        let mean_loss = loss_sum / records.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean_loss:.6}");
        log.push(EpochLoss { epoch, mean_loss });
    }

    let pooling = backend.pooling();
    Ok(ClassifierState {
        backend,
        pooling,
        encoder_frozen: config.freeze_encoder,
        head,
        training_log: log,
    })
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, text: &str, labels: &[LabelId]) -> TweetRecord {
        TweetRecord {
            id: id.into(),
            text: text.into(),
            gold: Some(labels.iter().copied().collect()),
        }
    }

    fn tiny_corpus() -> Vec<TweetRecord> {
        vec![
            record("1", "big pharma profit", &[LabelId::Pharma]),
            record("2", "rushed trials untested", &[LabelId::Rushed]),
            record("3", "nothing in particular", &[LabelId::None]),
        ]
    }

    #[test]
    fn log_has_one_entry_per_epoch() {
        let config = TrainingConfig { epochs: 7, ..Default::default() };
        let state = train(&tiny_corpus(), Backend::resolve(HASH_TEST_BACKEND, None).unwrap(), &config).unwrap();
        assert_eq!(state.training_log.len(), 7);
        assert_eq!(state.training_log[6].epoch, 7);
        assert_eq!(state.pooling, Pooling::Mean);
    }

    #[test]
    fn zero_epochs_rejected() {
        let config = TrainingConfig { epochs: 0, ..Default::default() };
        let err = train(&tiny_corpus(), Backend::Hash(HashEncoder::test_backend()), &config).unwrap_err();
        assert!(matches!(err, FinetuneError::InvalidConfig(_)));
    }

    #[test]
    fn missing_gold_rejected() {
        let mut records = tiny_corpus();
        records[1].gold = None;
        let err = train(&records, Backend::Hash(HashEncoder::test_backend()), &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, FinetuneError::MissingGold(id) if id == "2"));
    }

    #[test]
    fn remote_backend_requires_frozen_mode() {
        let backend = Backend::resolve("bert-large-uncased", None).unwrap();
        let err = train(&tiny_corpus(), backend.clone(), &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, FinetuneError::BackendUnavailable(_)));
        let frozen = TrainingConfig { freeze_encoder: true, ..Default::default() };
        // Frozen mode reaches the encoder, which has no server configured.
        assert!(matches!(train(&tiny_corpus(), backend, &frozen), Err(FinetuneError::BackendUnavailable(_))));
    }

    #[test]
    fn frozen_mode_leaves_encoder_untouched() {
        let config = TrainingConfig { epochs: 3, freeze_encoder: true, ..Default::default() };
        let state = train(&tiny_corpus(), Backend::Hash(HashEncoder::test_backend()), &config).unwrap();
        assert_eq!(state.backend, Backend::Hash(HashEncoder::test_backend()));
        assert!(state.encoder_frozen);

        let full = TrainingConfig { epochs: 3, ..Default::default() };
        let state = train(&tiny_corpus(), Backend::Hash(HashEncoder::test_backend()), &full).unwrap();
        assert_ne!(state.backend, Backend::Hash(HashEncoder::test_backend()));
    }

    #[test]
    fn larger_batches_train() {
        let config = TrainingConfig { epochs: 5, batch_size: 2, learning_rate: 1e-2, ..Default::default() };
        let state = train(&tiny_corpus(), Backend::Hash(HashEncoder::test_backend()), &config).unwrap();
        let log = &state.training_log;
        assert!(log.last().unwrap().mean_loss < log[0].mean_loss);
    }

    #[test]
    fn predict_applies_none_rule() {
        let mut state = train(
            &tiny_corpus(),
            Backend::Hash(HashEncoder::test_backend()),
            &TrainingConfig { epochs: 1, ..Default::default() },
        )
        .unwrap();
        state.head = DenseHead::zeros(HASH_TEST_DIM);
        // All probabilities are 0.5: everything crosses 0.5 except after the none rule.
        let all = predict("any text", &state, 0.5).unwrap();
        assert_eq!(all.len(), 11);
        assert!(!all.contains(LabelId::None));
        assert_eq!(predict("any text", &state, 0.6).unwrap(), LabelSet::single(LabelId::None));
        assert!(predict("any text", &state, 1.0).is_err());
    }

    #[test]
    fn threshold_examples() {
        let p = [0.4; NUM_LABELS];
        assert_eq!(labels_at_threshold(&p, 0.5).normalized(), LabelSet::single(LabelId::None));
        let mut q = [0.1; NUM_LABELS];
        q[LabelId::SideEffect.index()] = 0.9;
        assert_eq!(labels_at_threshold(&q, 0.5).normalized(), LabelSet::single(LabelId::SideEffect));
        let mut last = usize::MAX;
        for t in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9] {
            let n = labels_at_threshold(&q, t).len();
            assert!(n <= last);
            last = n;
        }
    }
}
