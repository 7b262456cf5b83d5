//! Standard LSTM cell (input/forget/output gates, tanh candidate), built
//! from graph primitives so it is differentiable end to end.
//!
//! Gate layout in the fused weight matrices is `[input; forget; cand; output]`.

use crate::graph::{Graph, Value};
use crate::param::Param;
use crate::rng::Rng;
use crate::Scalar;

pub struct LstmWeights<F: Scalar> {
    pub w_ih: Param<F>,
    pub w_hh: Param<F>,
    pub bias: Param<F>,
    pub in_dim: usize,
    pub hidden: usize,
}

impl<F: Scalar> LstmWeights<F> {
    pub fn new(prefix: &str, in_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let w_ih = Param::init_uniform(format!("{prefix}.w_ih"), 4 * hidden, in_dim, rng);
        let w_hh = Param::init_uniform(format!("{prefix}.w_hh"), 4 * hidden, hidden, rng);
        // Forget-gate bias starts at 1 so memory persists early in training.
        let mut b = vec![F::zero(); 4 * hidden];
        for v in b.iter_mut().take(2 * hidden).skip(hidden) {
            *v = F::one();
        }
        let bias = Param::new(format!("{prefix}.bias"), crate::arr::Arr::vector(b));
        LstmWeights {
            w_ih,
            w_hh,
            bias,
            in_dim,
            hidden,
        }
    }

    pub fn params(&self) -> Vec<Param<F>> {
        vec![self.w_ih.clone(), self.w_hh.clone(), self.bias.clone()]
    }

    /// Add the weights to a graph once; the returned handles are reused by
    /// every step of the sequence.
    pub fn register(&self, g: &mut Graph<F>) -> LstmCellRef {
        LstmCellRef {
            w_ih: g.param(&self.w_ih),
            w_hh: g.param(&self.w_hh),
            bias: g.param(&self.bias),
            hidden: self.hidden,
        }
    }
}

#[derive(Clone, Copy)]
pub struct LstmCellRef {
    pub w_ih: Value,
    pub w_hh: Value,
    pub bias: Value,
    pub hidden: usize,
}

/// One LSTM step: `(h', c') = cell(x, h, c)`.
pub fn lstm_cell<F: Scalar>(
    g: &mut Graph<F>,
    w: &LstmCellRef,
    x: Value,
    h: Value,
    c: Value,
) -> (Value, Value) {
    let d = w.hidden;
    let zx = g.matvec(w.w_ih, x);
    let zh = g.matvec(w.w_hh, h);
    let z0 = g.add(zx, zh);
    let z = g.add(z0, w.bias);

    let zi = g.slice(z, 0, d);
    let zf = g.slice(z, d, d);
    let zg = g.slice(z, 2 * d, d);
    let zo = g.slice(z, 3 * d, d);

    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);

    let keep = g.mul(f, c);
    let write = g.mul(i, cand);
    let c_next = g.add(keep, write);
    let c_act = g.tanh(c_next);
    let h_next = g.mul(o, c_act);
    (h_next, c_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arr::Arr;

    fn zero_weights(in_dim: usize, hidden: usize) -> LstmWeights<f64> {
        LstmWeights {
            w_ih: Param::new("w_ih", Arr::zeros(4 * hidden, in_dim)),
            w_hh: Param::new("w_hh", Arr::zeros(4 * hidden, hidden)),
            bias: Param::new("bias", Arr::zeros(4 * hidden, 1)),
            in_dim,
            hidden,
        }
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let w = zero_weights(3, 2);
        let mut g = Graph::new();
        let cell = w.register(&mut g);
        let x = g.zeros(3);
        let h = g.zeros(2);
        let c = g.zeros(2);
        let (h2, c2) = lstm_cell(&mut g, &cell, x, h, c);
        assert_eq!(g.value_data(h2).as_slice(), &[0.0, 0.0]);
        assert_eq!(g.value_data(c2).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_zero_input_gate_preserves_cell() {
        let hidden = 2;
        let w = zero_weights(2, hidden);
        // forget bias very positive (gate -> 1), input bias very negative (gate -> 0)
        let mut b = vec![0.0f64; 4 * hidden];
        for v in b.iter_mut().take(hidden) {
            *v = -40.0;
        }
        for v in b.iter_mut().take(2 * hidden).skip(hidden) {
            *v = 40.0;
        }
        w.bias.set_value(Arr::vector(b));

        let mut g = Graph::new();
        let cell = w.register(&mut g);
        let x = g.input(Arr::vector(vec![0.3, -0.7]));
        let h = g.zeros(hidden);
        let c = g.input(Arr::vector(vec![0.5, -0.25]));
        let (_h2, c2) = lstm_cell(&mut g, &cell, x, h, c);
        let got = g.value_data(c2).as_slice().to_vec();
        assert!((got[0] - 0.5).abs() < 1e-9);
        assert!((got[1] + 0.25).abs() < 1e-9);
    }
}
