//! Learnable parameters. A `Param` is a shared handle: graphs snapshot the
//! current value cheaply (Rc clone) and flush gradients back into the shared
//! accumulator on backward.

use std::cell::RefCell;
use std::rc::Rc;

use crate::arr::Arr;
use crate::rng::Rng;
use crate::Scalar;

struct Inner<F: Scalar> {
    name: String,
    value: Rc<Arr<F>>,
    grad: Arr<F>,
    /// Rows exempt from updates (frozen pretrained embedding rows).
    frozen_rows: Vec<usize>,
}

pub struct Param<F: Scalar> {
    inner: Rc<RefCell<Inner<F>>>,
}

impl<F: Scalar> Clone for Param<F> {
    fn clone(&self) -> Self {
        Param {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<F: Scalar> Param<F> {
    pub fn new(name: impl Into<String>, value: Arr<F>) -> Self {
        let (r, c) = value.shape();
        Param {
            inner: Rc::new(RefCell::new(Inner {
                name: name.into(),
                value: Rc::new(value),
                grad: Arr::zeros(r, c),
                frozen_rows: Vec::new(),
            })),
        }
    }

    /// Uniform init in [-r, r] with r = sqrt(1 / fan_in).
    pub fn init_uniform(name: impl Into<String>, rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let fan_in = cols.max(1);
        let r = (1.0 / fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_sym(r)).collect();
        Param::new(name, Arr::from_data(rows, cols, data))
    }

    pub fn name(&self) -> String {
        self.inner.borrow().name.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.inner.borrow().value.shape()
    }

    pub fn value(&self) -> Arr<F> {
        (*self.inner.borrow().value).clone()
    }

    pub(crate) fn value_rc(&self) -> Rc<Arr<F>> {
        Rc::clone(&self.inner.borrow().value)
    }

    pub fn grad(&self) -> Arr<F> {
        self.inner.borrow().grad.clone()
    }

    pub fn set_value(&self, value: Arr<F>) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.value.shape(), value.shape(), "param shape change");
        inner.value = Rc::new(value);
    }

    pub fn accumulate_grad(&self, g: &Arr<F>) {
        self.inner.borrow_mut().grad.add_assign(g);
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad.fill(F::zero());
    }

    pub fn freeze_rows(&self, rows: Vec<usize>) {
        self.inner.borrow_mut().frozen_rows = rows;
    }

    pub fn frozen_rows(&self) -> Vec<usize> {
        self.inner.borrow().frozen_rows.clone()
    }

    /// Overwrite one row (loading pretrained vectors).
    pub fn set_row(&self, row: usize, values: &[F]) {
        let mut inner = self.inner.borrow_mut();
        let arr = Rc::make_mut(&mut inner.value);
        let dst = arr.row_mut(row);
        assert_eq!(dst.len(), values.len(), "row width mismatch");
        dst.copy_from_slice(values);
    }

    /// In-place update: `f(value, grad)`. Frozen rows keep their values.
    pub fn update(&self, f: impl FnOnce(&mut Arr<F>, &Arr<F>)) {
        let mut inner = self.inner.borrow_mut();
        let frozen = std::mem::take(&mut inner.frozen_rows);
        let saved: Vec<(usize, Vec<F>)> = frozen
            .iter()
            .map(|&r| (r, inner.value.row(r).to_vec()))
            .collect();
        let grad = std::mem::replace(&mut inner.grad, Arr::zeros(0, 0));
        {
            let arr = Rc::make_mut(&mut inner.value);
            f(arr, &grad);
            for (r, vals) in &saved {
                arr.row_mut(*r).copy_from_slice(vals);
            }
        }
        inner.grad = grad;
        inner.frozen_rows = frozen;
    }
}
