/// Adam moment buffers for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction, no weight decay, constant learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }

    pub fn slot(len: usize) -> AdamSlot {
        AdamSlot {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Advances the shared step counter. Call once per optimizer step, before
    /// updating the slots.
    pub fn tick(&mut self) {
        self.step += 1;
    }

    fn corrected_lr(&self) -> (f64, f64) {
        let t = self.step.max(1) as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    /// Updates `params[offset..offset + grads.len()]`.
    pub fn update(&self, slot: &mut AdamSlot, params: &mut [f64], grads: &[f64], offset: usize) {
        let (c1, c2) = self.corrected_lr();
        let range = offset..offset + grads.len();
        let (m, v) = (&mut slot.m[range.clone()], &mut slot.v[range.clone()]);
        for (((p, g), m), v) in params[range].iter_mut().zip(grads).zip(m).zip(v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(0.1);
        let mut slot = Adam::slot(2);
        let mut p = [1.0, -1.0];
        adam.tick();
        adam.update(&mut slot, &mut p, &[3.0, -0.5], 0);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(0.05);
        let mut slot = Adam::slot(1);
        let mut x = [5.0];
        for _ in 0..2000 {
            adam.tick();
            let g = [2.0 * (x[0] - 2.0)];
            adam.update(&mut slot, &mut x, &g, 0);
        }
        assert!((x[0] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn partial_update_leaves_other_entries() {
        let mut adam = Adam::new(0.1);
        let mut slot = Adam::slot(4);
        let mut p = [0.0; 4];
        adam.tick();
        adam.update(&mut slot, &mut p, &[1.0, 1.0], 2);
        assert_eq!(&p[..2], &[0.0, 0.0]);
        assert!(p[2] < 0.0 && p[3] < 0.0);
    }
}
