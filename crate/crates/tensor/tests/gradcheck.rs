//! Central finite-difference checks for every differentiable primitive,
//! run at f64 precision. The finite-difference side only ever evaluates
//! forward passes.

use std::rc::Rc;

use nl2sql_tensor::gradcheck::{check_param_gradients, DEFAULT_REL_TOL, DEFAULT_STEP};
use nl2sql_tensor::graph::{Graph, Value};
use nl2sql_tensor::lstm::{lstm_cell, LstmWeights};
use nl2sql_tensor::{Arr, Param, Rng};

/// Deterministic ragged weights so reductions do not hide sign errors.
fn probe(g: &mut Graph<f64>, v: Value) -> Value {
    let n = g.value_data(v).len();
    let (r, c) = g.value_data(v).shape();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64).collect();
    let wv = g.mul_const(v, Rc::new(Arr::from_data(r, c, w)));
    // flatten matrices by summing; vectors stay vectors
    g.sum(wv)
}

fn run_check(params: &[Param<f64>], build: impl Fn(&mut Graph<f64>, &[Value]) -> Value) {
    let eval = |collect: bool| -> (f64, Vec<Arr<f64>>) {
        let mut g = Graph::new();
        let leaves: Vec<Value> = params.iter().map(|p| g.param(p)).collect();
        let out = build(&mut g, &leaves);
        let loss = probe(&mut g, out);
        let val = g.scalar(loss);
        let grads = if collect {
            g.backward(loss);
            let gs = params.iter().map(|p| p.grad()).collect();
            params.iter().for_each(|p| p.zero_grad());
            gs
        } else {
            Vec::new()
        };
        (val, grads)
    };
    let (_, analytic) = eval(true);
    check_param_gradients(
        params,
        &analytic,
        || eval(false).0,
        DEFAULT_STEP,
        DEFAULT_REL_TOL,
    )
    .unwrap();
}

fn vec_param(name: &str, data: Vec<f64>) -> Param<f64> {
    Param::new(name, Arr::vector(data))
}

#[test]
fn add_mul_affine() {
    let a = vec_param("a", vec![0.3, -0.8, 1.2]);
    let b = vec_param("b", vec![-0.5, 0.9, 0.1]);
    run_check(&[a.clone(), b.clone()], |g, l| {
        let s = g.add(l[0], l[1]);
        let m = g.mul(s, l[1]);
        g.affine(m, 1.7, -0.3)
    });
}

#[test]
fn matvec_and_tmatvec() {
    let m = Param::new(
        "m",
        Arr::from_data(3, 2, vec![0.4, -0.2, 0.7, 0.1, -0.9, 0.5]),
    );
    let v = vec_param("v", vec![0.6, -0.3]);
    let u = vec_param("u", vec![0.2, 0.8, -0.4]);
    run_check(&[m.clone(), v.clone(), u.clone()], |g, l| {
        let y = g.matvec(l[0], l[1]); // (3,1)
        let z = g.tmatvec(l[0], l[2]); // (2,1)
        let zy = g.concat(&[y, z]);
        g.tanh(zy)
    });
}

#[test]
fn concat_slice_stack_row() {
    let a = vec_param("a", vec![0.1, 0.2]);
    let b = vec_param("b", vec![-0.3, 0.4]);
    run_check(&[a.clone(), b.clone()], |g, l| {
        let cat = g.concat(&[l[0], l[1]]);
        let sl = g.slice(cat, 1, 2);
        let stacked = g.stack_rows(&[sl, l[1]]);
        let r1 = g.row(stacked, 0);
        let r2 = g.row(stacked, 1);
        let m = g.mul(r1, r2);
        g.sigmoid(m)
    });
}

#[test]
fn activations_and_scalar_ops() {
    let a = vec_param("a", vec![0.5, 1.5, 2.5]);
    let s = vec_param("s", vec![0.7]);
    run_check(&[a.clone(), s.clone()], |g, l| {
        let lx = g.ln(l[0]);
        let sb = g.scale_by(lx, l[1]);
        let dv = g.div_by_scalar(sb, l[1]);
        let p = g.pick(dv, 2);
        let q = g.sum(sb);
        let t = g.tanh(q);
        g.concat(&[p, t])
    });
}

#[test]
fn softmax_unmasked_and_masked() {
    let a = vec_param("a", vec![0.2, -1.1, 0.9, 0.4]);
    run_check(&[a.clone()], |g, l| g.softmax(l[0]));
    let mask = Rc::new(vec![true, false, true, true]);
    run_check(&[a.clone()], |g, l| g.softmax_masked(l[0], Some(mask.clone())));
}

#[test]
fn segment_max_and_sum() {
    // scores well separated so the argmax does not flip under perturbation
    let a = vec_param("a", vec![0.1, 2.0, -0.7, 1.0]);
    let segs = Rc::new(vec![vec![0, 2], vec![1, 3]]);
    run_check(&[a.clone()], |g, l| {
        let mx = g.segment_max(l[0], segs.clone());
        let sm = g.segment_sum(l[0], segs.clone());
        g.concat(&[mx, sm])
    });
}

#[test]
fn embedding_lookup_with_repeats() {
    let table = Param::new(
        "emb",
        Arr::from_data(
            5,
            3,
            (0..15).map(|i| 0.05 * i as f64 - 0.3).collect::<Vec<_>>(),
        ),
    );
    let ids = Rc::new(vec![1usize, 4, 1]);
    run_check(&[table.clone()], |g, l| {
        let rows = g.embed_rows(l[0], ids.clone());
        let r0 = g.row(rows, 0);
        let r1 = g.row(rows, 1);
        let r2 = g.row(rows, 2);
        let s = g.add(r0, r1);
        let s2 = g.add(s, r2);
        g.tanh(s2)
    });
}

#[test]
fn cross_entropy_through_softmax() {
    let a = vec_param("a", vec![0.3, -0.2, 0.8]);
    let target = Rc::new(vec![0.8, 0.1, 0.1]);
    run_check(&[a.clone()], |g, l| {
        let p = g.softmax(l[0]);
        g.cross_entropy(p, target.clone())
    });
}

#[test]
fn mul_const_dropout_path() {
    let a = vec_param("a", vec![0.4, -0.6, 1.1]);
    let mask = Rc::new(Arr::vector(vec![2.0, 0.0, 2.0])); // rate .5 inverted mask
    run_check(&[a.clone()], |g, l| g.mul_const(l[0], mask.clone()));
}

#[test]
fn lstm_cell_all_weights() {
    let mut rng = Rng::seeded(11);
    let w = LstmWeights::<f64>::new("cell", 3, 2, &mut rng);
    let x = vec_param("x", vec![0.4, -0.2, 0.9]);
    let h = vec_param("h", vec![0.1, -0.5]);
    let c = vec_param("c", vec![0.3, 0.2]);
    let mut params = w.params();
    params.extend([x.clone(), h.clone(), c.clone()]);
    run_check(&params, |g, l| {
        let cell = nl2sql_tensor::LstmCellRef {
            w_ih: l[0],
            w_hh: l[1],
            bias: l[2],
            hidden: 2,
        };
        let (h2, c2) = lstm_cell(g, &cell, l[3], l[4], l[5]);
        g.concat(&[h2, c2])
    });
}
