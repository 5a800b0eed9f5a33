use super::graph::Gradients;
use super::params::ParamStore;
use super::tensor::Real;
use super::DiffError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-2, beta1: 0.9, beta2: 0.99, eps: 1e-15 }
    }
}

/// Moment estimates for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState<R> {
    pub config: AdamConfig,
    first: Vec<Vec<R>>,
    second: Vec<Vec<R>>,
    step: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new(store: &ParamStore<R>, config: AdamConfig) -> Self {
        let first = store.ids().map(|id| vec![R::zero(); store.get(id).len()]).collect();
        let second = store.ids().map(|id| vec![R::zero(); store.get(id).len()]).collect();
        Self { config, first, second, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update with the configured learning rate.
    pub fn step(&mut self, store: &mut ParamStore<R>, grads: &Gradients<R>) -> Result<(), DiffError> {
        let lr = self.config.lr;
        self.step_with_lr(store, grads, lr)
    }

    /// Parameters that received no gradient this step are left untouched.
    pub fn step_with_lr(&mut self, store: &mut ParamStore<R>, grads: &Gradients<R>, lr: f64) -> Result<(), DiffError> {
        for id in store.ids() {
            if let Some(g) = grads.param_ref(id) {
                if g.has_non_finite() {
                    return Err(DiffError::NonFiniteGradient(store.name(id).to_string()));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (R::of(c.beta1), R::of(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = R::of(lr * bc2.sqrt() / bc1);
        let eps = R::of(c.eps * bc2.sqrt());
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.param_ref(id) else { continue };
            if !store.is_trainable(id) {
                continue;
            }
            let (m, v) = (&mut self.first[id.index()], &mut self.second[id.index()]);
            let p = store.get_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = b1 * *m + (R::one() - b1) * g;
                *v = b2 * *v + (R::one() - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps);
            }
        }
        Ok(())
    }
}
