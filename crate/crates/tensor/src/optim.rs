use crate::params::ParamStore;

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
    steps: u64,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: Vec::new(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the gradients currently in `store`, then
    /// zeroes them. Parameters without a gradient buffer are left alone.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.velocity.len() != store.len() {
            self.velocity = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        }
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            let (data, grad) = store.get_mut(id).data_and_grad_mut();
            let Some(grad) = grad else { continue };
            let vel = &mut self.velocity[id.index()];
            for ((p, v), g) in data.iter_mut().zip(vel.iter_mut()).zip(grad.iter_mut()) {
                *v = self.momentum * *v + *g;
                *p -= self.lr * *v;
                *g = 0.0;
            }
        }
        self.steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(x: f64, grad: f64) -> (ParamStore, crate::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(x), true);
        store.get_mut(id).grad_mut()[0] = grad;
        (store, id)
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let (mut store, id) = scalar_store(3.0, 17.0);
        Sgd::new(0.0, 0.9).step(&mut store);
        assert_eq!(store.get(id).data()[0], 3.0);
    }

    #[test]
    fn plain_step_without_momentum() {
        let (mut store, id) = scalar_store(5.0, 1.0);
        let mut opt = Sgd::new(0.1, 0.0);
        opt.step(&mut store);
        assert!((store.get(id).data()[0] - 4.9).abs() < 1e-15);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = x², df/dx = 2x; each step multiplies x by (1 - 0.2)
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(1.0), true);
        let mut opt = Sgd::new(0.1, 0.0);
        for _ in 0..100 {
            let x = store.get(id).data()[0];
            store.get_mut(id).grad_mut()[0] = 2.0 * x;
            opt.step(&mut store);
        }
        let x = store.get(id).data()[0];
        assert!(x.abs() < 1e-8, "x = {x}");
        assert!((x - 0.8f64.powi(100)).abs() < 1e-20);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let (mut store, id) = scalar_store(0.0, 1.0);
        let mut opt = Sgd::new(1.0, 0.9);
        opt.step(&mut store);
        store.get_mut(id).grad_mut()[0] = 1.0;
        opt.step(&mut store);
        // v1 = 1, v2 = 0.9 + 1
        assert!((store.get(id).data()[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn step_zeroes_gradients_and_skips_frozen() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.0), true);
        let b = store.add("b", Tensor::scalar(1.0), false);
        store.get_mut(a).grad_mut()[0] = 1.0;
        store.get_mut(b).grad_mut()[0] = 1.0;
        Sgd::new(0.5, 0.0).step(&mut store);
        assert_eq!(store.get(a).grad().unwrap()[0], 0.0);
        assert_eq!(store.get(b).data()[0], 1.0);
    }
}
