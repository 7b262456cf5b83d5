//! Adam with bias correction: beta1=0.9, beta2=0.999, epsilon=1e-8.

use crate::arr::Arr;
use crate::param::Param;
use crate::Scalar;

pub struct AdamState<F: Scalar> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    step: u64,
    moments: Vec<(Arr<F>, Arr<F>)>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(learning_rate: f64, params: &[Param<F>]) -> Self {
        let moments = params
            .iter()
            .map(|p| {
                let (r, c) = p.shape();
                (Arr::zeros(r, c), Arr::zeros(r, c))
            })
            .collect();
        AdamState {
            learning_rate: F::from(learning_rate).unwrap(),
            beta1: F::from(0.9).unwrap(),
            beta2: F::from(0.999).unwrap(),
            epsilon: F::from(1e-8).unwrap(),
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters from their accumulated gradients;
    /// clears the gradients afterwards.
    pub fn step(&mut self, params: &[Param<F>]) {
        assert_eq!(params.len(), self.moments.len(), "param count changed");
        self.step += 1;
        let t = F::from(self.step as f64).unwrap();
        let one = F::one();
        let bias1 = one - self.beta1.powf(t);
        let bias2 = one - self.beta2.powf(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);

        for (p, (m, v)) in params.iter().zip(self.moments.iter_mut()) {
            p.update(|value, grad| {
                let ms = m.as_mut_slice();
                let vs = v.as_mut_slice();
                let xs = value.as_mut_slice();
                let gs = grad.as_slice();
                for j in 0..xs.len() {
                    let g = gs[j];
                    ms[j] = b1 * ms[j] + (one - b1) * g;
                    vs[j] = b2 * vs[j] + (one - b2) * g * g;
                    let mhat = ms[j] / bias1;
                    let vhat = vs[j] / bias2;
                    xs[j] = xs[j] - lr * mhat / (vhat.sqrt() + eps);
                }
            });
            p.zero_grad();
        }
    }
}
