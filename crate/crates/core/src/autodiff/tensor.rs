use crate::{DenseMatrix, Scalar};

/// Dense rank-3 tensor `[batch, rows, cols]`, row-major. Matrices use
/// `batch = 1`, scalars `[1, 1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: [usize; 3], value: T) -> Self {
        Self { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: [1, 1, 1], data: vec![value] }
    }

    /// Panics when `data.len()` does not match `shape`.
    pub fn from_vec(shape: [usize; 3], data: Vec<T>) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "tensor data length does not match shape {shape:?}");
        Self { shape, data }
    }

    pub fn from_f64(shape: [usize; 3], data: &[f64]) -> Self {
        Self::from_vec(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn from_matrix(m: &DenseMatrix<T>) -> Self {
        Self { shape: [1, m.rows(), m.cols()], data: m.as_slice().to_vec() }
    }

    /// Slice `b` of the batch as a matrix.
    pub fn to_matrix(&self, b: usize) -> DenseMatrix<T> {
        let [_, r, c] = self.shape;
        DenseMatrix::from_vec(r, c, self.data[b * r * c..(b + 1) * r * c].to_vec()).expect("consistent slice")
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, b: usize, i: usize, j: usize) -> T {
        let [_, r, c] = self.shape;
        self.data[(b * r + i) * c + j]
    }

    #[inline]
    pub fn set(&mut self, b: usize, i: usize, j: usize, v: T) {
        let [_, r, c] = self.shape;
        self.data[(b * r + i) * c + j] = v;
    }

    /// The only element of a `[1, 1, 1]` tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.shape, [1, 1, 1], "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&x| U::of(x.as_f64())).collect() }
    }
}
