use super::{ParameterStore, Real};

/// Adam with decoupled weight decay and bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }
}

impl AdamW {
    pub fn with_lr(lr: f64) -> Self {
        AdamW {
            lr,
            ..Self::default()
        }
    }

    /// Applies one update from the gradients held in `store`. Parameters
    /// without a gradient buffer are left alone.
    pub fn step<R: Real>(&self, store: &mut ParameterStore<R>) {
        store.step += 1;
        let t = store.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (R::lit(self.beta1), R::lit(self.beta2));
        let (ob1, ob2) = (R::lit(1.0 - self.beta1), R::lit(1.0 - self.beta2));
        let step_size = R::lit(self.lr / bc1);
        let inv_bc2 = R::lit(1.0 / bc2);
        let eps = R::lit(self.eps);
        let decay = R::lit(1.0 - self.lr * self.weight_decay);
        for e in &mut store.entries {
            let Some(grad) = e.tensor.grad.take() else {
                continue;
            };
            let w = e.tensor.data_mut();
            for i in 0..w.len() {
                let g = grad[i];
                e.m[i] = b1 * e.m[i] + ob1 * g;
                e.v[i] = b2 * e.v[i] + ob2 * g * g;
                let denom = (e.v[i] * inv_bc2).sqrt() + eps;
                w[i] = w[i] * decay - step_size * e.m[i] / denom;
            }
            e.tensor.grad = Some(grad);
        }
    }
}
