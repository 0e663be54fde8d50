use crate::{Elem, ParamStore};

/// Adam with decoupled weight decay and global gradient-norm clipping.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub max_grad_norm: Option<f64>,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            weight_decay: 0.01,
            max_grad_norm: Some(1.0),
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

impl AdamW {
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update with learning rate `lr` from the gradients stored
    /// in `store`, then clear them. Returns the pre-clipping gradient norm.
    pub fn step<T: Elem>(&mut self, store: &mut ParamStore<T>, lr: f64) -> f64 {
        if self.first.len() != store.len() {
            self.first = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
            self.second = self.first.clone();
        }
        let norm = store.grad_norm();
        let clip = match self.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);

        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let param = store.param_mut(id);
            let decay = if param.decay { self.weight_decay } else { 0.0 };
            let Some(grad) = param.value.grad().map(|g| g.to_vec()) else {
                continue;
            };
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            for (i, w) in param.value.data_mut().iter_mut().enumerate() {
                let g = grad[i].widen() * clip;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                let x = w.widen();
                *w = T::of(x - lr * (update + decay * x));
            }
            param.value.zero_grad();
        }
        norm
    }
}

/// Linear warm-up over a fraction of the run, then linear decay to zero.
#[derive(Clone, Copy, Debug)]
pub struct WarmupLinear {
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub total_steps: u64,
}

impl WarmupLinear {
    pub fn lr(&self, step: u64) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let warmup = (self.warmup_fraction * total).max(1.0);
        let s = step as f64;
        let factor = if s < warmup {
            (s + 1.0) / warmup
        } else {
            ((total - s) / (total - warmup).max(1.0)).max(0.0)
        };
        self.base_lr * factor
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Tape, Tensor};

    #[test]
    fn adam_descends_on_quadratic() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::from_rows(&[[3.0f32, -2.0]]), false);
        let mut opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let loss_of = |store: &ParamStore<f32>| {
            store.get(id).data().iter().map(|x| x * x).sum::<f32>()
        };
        let start = loss_of(&store);
        for _ in 0..200 {
            let mut tape = Tape::new();
            let w = tape.param(&store, id);
            let wt = tape.transpose(w).unwrap();
            let sq = tape.matmul(w, wt).unwrap();
            let loss = tape.sum(sq);
            let grads = tape.backward(loss).unwrap();
            store.accumulate(&tape, &grads);
            opt.step(&mut store, 0.05);
        }
        assert!(loss_of(&store) < start * 0.01);
        assert!(store.get(id).grad().is_none());
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = WarmupLinear {
            base_lr: 1.0,
            warmup_fraction: 0.1,
            total_steps: 100,
        };
        assert!(s.lr(0) < s.lr(5));
        assert!((s.lr(9) - 1.0).abs() < 1e-12);
        assert!(s.lr(50) < 1.0);
        assert_eq!(s.lr(100), 0.0);
    }
}
