//! Dense 2-D arrays of floats. Vectors are `(n, 1)` arrays.

use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Arr<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Arr<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Arr {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "array data length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        Arr { rows, cols, data }
    }

    /// Column vector from raw data.
    pub fn vector(data: Vec<F>) -> Self {
        let rows = data.len();
        Arr {
            rows,
            cols: 1,
            data,
        }
    }

    pub fn scalar(x: F) -> Self {
        Arr {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_vector(&self) -> bool {
        self.cols == 1
    }

    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, x: F) {
        self.data[r * self.cols + c] = x;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn fill(&mut self, x: F) {
        self.data.iter_mut().for_each(|v| *v = x);
    }

    pub fn add_assign(&mut self, other: &Arr<F>) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in add_assign");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }

    pub fn map<G: Scalar>(&self, f: impl Fn(F) -> G) -> Arr<G> {
        Arr {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Max-norm distance, used by tests comparing against references.
    pub fn max_abs_diff(&self, other: &Arr<F>) -> F {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), |m, d| if d > m { d } else { m })
    }
}
