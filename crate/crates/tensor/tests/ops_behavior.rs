//! Behavioral checks for stochastic and numeric ops: dropout statistics and
//! a 64-bit reference for the f32 masked softmax.

use std::rc::Rc;

use nl2sql_tensor::graph::Graph;
use nl2sql_tensor::{Arr, Rng};

#[test]
fn dropout_rate_zero_and_eval_mode_are_identity() {
    let mut g = Graph::<f32>::new();
    let mut rng = Rng::seeded(3);
    let x = g.input(Arr::vector(vec![1.0, 2.0, 3.0]));
    let y = g.dropout(x, 0.0, &mut rng, true);
    assert_eq!(x, y);
    let z = g.dropout(x, 0.9, &mut rng, false);
    assert_eq!(x, z);
}

#[test]
fn dropout_keeps_half_and_preserves_expectation() {
    let n = 20_000;
    let mut rng = Rng::seeded(99);
    let mut g = Graph::<f64>::new();
    let x = g.input(Arr::vector(vec![1.0; n]));
    let y = g.dropout(x, 0.5, &mut rng, true);
    let out = g.value_data(y).as_slice();
    let kept = out.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
    assert!((kept - 0.5).abs() < 0.02, "kept fraction {}", kept);
    let mean: f64 = out.iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {}", mean);
}

#[test]
fn time_shared_mask_is_reused_across_steps() {
    let mut rng = Rng::seeded(7);
    let mask = nl2sql_tensor::dropout_mask::<f64>(8, 0.5, &mut rng);
    let mut g = Graph::<f64>::new();
    let x1 = g.input(Arr::vector(vec![1.0; 8]));
    let x2 = g.input(Arr::vector(vec![2.0; 8]));
    let y1 = g.mul_const(x1, mask.clone());
    let y2 = g.mul_const(x2, mask.clone());
    for i in 0..8 {
        let a = g.value_data(y1).as_slice()[i];
        let b = g.value_data(y2).as_slice()[i];
        assert_eq!(a == 0.0, b == 0.0, "mask differs at {}", i);
    }
}

#[test]
fn f32_masked_softmax_matches_f64_reference_within_1e6() {
    let mut rng = Rng::seeded(2024);
    for _ in 0..50 {
        let n = 2 + rng.gen_range(30);
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform_sym::<f64>(8.0)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.7)).collect();
        if !mask.iter().any(|&b| b) {
            mask[0] = true;
        }

        // 64-bit reference evaluation
        let mx = scores
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&s, _)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores
            .iter()
            .zip(&mask)
            .map(|(&s, &m)| if m { (s - mx).exp() } else { 0.0 })
            .collect();
        let total: f64 = exps.iter().sum();
        let reference: Vec<f64> = exps.iter().map(|e| e / total).collect();

        let mut g = Graph::<f32>::new();
        let s32 = g.input(Arr::vector(scores.iter().map(|&s| s as f32).collect()));
        let p = g.softmax_masked(s32, Some(Rc::new(mask.clone())));
        let got = g.value_data(p).as_slice();

        let sum: f32 = got.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "sum {}", sum);
        for i in 0..n {
            if !mask[i] {
                assert_eq!(got[i], 0.0);
            } else {
                assert!(
                    (got[i] as f64 - reference[i]).abs() < 1e-6,
                    "entry {} differs: {} vs {}",
                    i,
                    got[i],
                    reference[i]
                );
            }
        }
    }
}
