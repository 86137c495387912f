//! The dense sigmoid head and its binary cross-entropy loss.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::FinetuneError;
use crate::taxonomy::{LabelSet, NUM_LABELS};

/// Largest f64 below 1.0; keeps probabilities strictly inside (0, 1).
const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, P_MAX)
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// One affine layer from an embedding to twelve label logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    /// `embedding_dim × 12`, columns in canonical label order.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseHead {
    pub fn zeros(embedding_dim: usize) -> Self {
        DenseHead {
            weights: Array2::zeros((embedding_dim, NUM_LABELS)),
            bias: Array1::zeros(NUM_LABELS),
        }
    }

    /// Weights drawn from N(0, 0.02²), zero bias.
    pub fn initialized(embedding_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        DenseHead {
            weights: Array2::from_shape_fn((embedding_dim, NUM_LABELS), |_| normal.sample(&mut rng)),
            bias: Array1::zeros(NUM_LABELS),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn check_dim(&self, embedding: &Array1<f64>) -> Result<(), FinetuneError> {
        if embedding.len() != self.embedding_dim() {
            return Err(FinetuneError::DimensionMismatch {
                expected: self.embedding_dim(),
                found: embedding.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, embedding: &Array1<f64>) -> Result<Array1<f64>, FinetuneError> {
        self.check_dim(embedding)?;
        Ok(self.weights.t().dot(embedding) + &self.bias)
    }

    /// `sigmoid(Wᵀe + b)`, one probability per label.
    pub fn forward(&self, embedding: &Array1<f64>) -> Result<[f64; NUM_LABELS], FinetuneError> {
        let logits = self.logits(embedding)?;
        let mut out = [0.0; NUM_LABELS];
        for (o, z) in out.iter_mut().zip(logits.iter()) {
            *o = sigmoid(*z);
        }
        Ok(out)
    }

    /// Mean binary cross-entropy over the twelve labels.
    pub fn loss(&self, embedding: &Array1<f64>, target: LabelSet) -> Result<f64, FinetuneError> {
        let logits = self.logits(embedding)?;
        Ok(bce_from_logits(&logits, target))
    }

    /// Loss, head gradients, and the gradient w.r.t. the embedding.
    pub fn loss_and_grads(
        &self,
        embedding: &Array1<f64>,
        target: LabelSet,
    ) -> Result<(f64, HeadGrads, Array1<f64>), FinetuneError> {
        let logits = self.logits(embedding)?;
        let loss = bce_from_logits(&logits, target);
        let y = targets(target);
        let n = NUM_LABELS as f64;
        let grad_logits = Array1::from_shape_fn(NUM_LABELS, |j| (sigmoid_raw(logits[j]) - y[j]) / n);
        let grads = HeadGrads {
            weights: outer(embedding, &grad_logits),
            bias: grad_logits.clone(),
        };
        let grad_embedding = self.weights.dot(&grad_logits);
        Ok((loss, grads, grad_embedding))
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Unclamped logistic function for gradients.
fn sigmoid_raw(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn targets(set: LabelSet) -> [f64; NUM_LABELS] {
    let mut y = [0.0; NUM_LABELS];
    for label in set.iter() {
        y[label.index()] = 1.0;
    }
    y
}

/// `-(y ln p + (1-y) ln(1-p))` averaged over labels, evaluated as
/// `softplus(z) - y·z` for stability.
pub fn bce_from_logits(logits: &Array1<f64>, target: LabelSet) -> f64 {
    let y = targets(target);
    logits
        .iter()
        .zip(y)
        .map(|(&z, y)| softplus(z) - y * z)
        .sum::<f64>()
        / NUM_LABELS as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::LabelId;

    #[test]
    fn zero_head_gives_one_half() {
        let head = DenseHead::zeros(5);
        let p = head.forward(&Array1::zeros(5)).unwrap();
        assert!(p.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn large_bias_saturates_one_label() {
        let mut head = DenseHead::zeros(3);
        head.bias[LabelId::Rushed.index()] = 10.0;
        let p = head.forward(&Array1::from(vec![0.4, -2.0, 1.0])).unwrap();
        assert!(p[LabelId::Rushed.index()] > 0.9999);
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn extreme_logits_stay_inside_open_interval() {
        let mut head = DenseHead::zeros(1);
        head.bias[0] = 800.0;
        head.bias[1] = -800.0;
        let p = head.forward(&Array1::zeros(1)).unwrap();
        assert!(p[0] < 1.0 && p[1] > 0.0);
        let loss = head.loss(&Array1::zeros(1), LabelSet::single(LabelId::Mandatory)).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn dimension_mismatch() {
        let head = DenseHead::zeros(4);
        assert!(matches!(
            head.forward(&Array1::zeros(3)),
            Err(FinetuneError::DimensionMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn bce_matches_probability_form() {
        let head = DenseHead::initialized(6, 9);
        let e = Array1::from(vec![1.0, -0.5, 2.0, 0.1, 0.0, -3.0]);
        let target: LabelSet = [LabelId::Pharma, LabelId::Country].into_iter().collect();
        let p = head.forward(&e).unwrap();
        let expected: f64 = (0..12)
            .map(|j| {
                let y = if target.contains(LabelId::from_index(j).unwrap()) { 1.0 } else { 0.0 };
                -(y * p[j].ln() + (1.0 - y) * (1.0 - p[j]).ln())
            })
            .sum::<f64>()
            / 12.0;
        assert!((head.loss(&e, target).unwrap() - expected).abs() < 1e-12);
    }
}
