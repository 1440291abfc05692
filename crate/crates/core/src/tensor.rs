//! Dense third-order tensors and their matricizations.
//!
//! Entries are stored column-major: element `(i, j, k)` (zero-based) lives at
//! `i + d1 * (j + d2 * k)`. With this layout the mode-1 unfolding is the
//! storage buffer viewed as a `d1 x (d2 * d3)` column-major matrix.
//!
//! Unfolding follows the one-based index maps
//!
//! ```text
//! mode 1: (T(1))[q, s] = T[q, j(s), k(s)],  j(s) = s mod' d2, k(s) = ceil(s / d2)
//! mode 2: (T(2))[q, s] = T[i(s), q, k(s)],  i(s) = s mod' d1, k(s) = ceil(s / d1)
//! mode 3: (T(3))[q, s] = T[i(s), j(s), q],  i(s) = s mod' d1, j(s) = ceil(s / d1)
//! ```
//!
//! where `mod'` is modulo division with a zero remainder replaced by the
//! divisor, so that `(m * d) mod' d = d`.

use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape { context: &'static str, expected: String, found: String },
    #[error("non-finite entry at flat index {index}")]
    NonFinite { index: usize },
    #[error("invalid mode {0}; expected 1, 2 or 3")]
    InvalidMode(usize),
    #[error("zero-sized dimension in {0}")]
    Empty(&'static str),
}

/// One of the three matricization modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    /// Zero-based axis index.
    pub fn axis(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }
}

impl TryFrom<usize> for Mode {
    type Error = TensorError;

    fn try_from(value: usize) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            other => Err(TensorError::InvalidMode(other)),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.axis() + 1)
    }
}

/// Tensor dimensions `(d1, d2, d3)`.
pub type Dims = [usize; 3];

/// Modulo division where a zero remainder maps to the divisor. One-based.
pub fn wrap_mod(s: usize, d: usize) -> usize {
    match s % d {
        0 => d,
        r => r,
    }
}

fn ceil_div(s: usize, d: usize) -> usize {
    s.div_ceil(d)
}

/// Map a one-based unfolding position `(q, s)` to the one-based tensor index.
pub fn unfolding_index(mode: Mode, dims: Dims, q: usize, s: usize) -> [usize; 3] {
    let [d1, d2, _] = dims;
    match mode {
        Mode::One => [q, wrap_mod(s, d2), ceil_div(s, d2)],
        Mode::Two => [wrap_mod(s, d1), q, ceil_div(s, d1)],
        // The column index runs over (i, j) with i fastest.
        Mode::Three => [wrap_mod(s, d1), ceil_div(s, d1), q],
    }
}

/// Shape `(rows, cols)` of the mode-`mode` unfolding of a tensor with `dims`.
pub fn unfolding_shape(mode: Mode, dims: Dims) -> (usize, usize) {
    let [d1, d2, d3] = dims;
    match mode {
        Mode::One => (d1, d2 * d3),
        Mode::Two => (d2, d1 * d3),
        Mode::Three => (d3, d1 * d2),
    }
}

/// Dense third-order tensor with optional axis labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T: Scalar> {
    dims: Dims,
    values: Vec<T>,
    labels: Option<[String; 3]>,
}

impl<T: Scalar> Tensor3<T> {
    /// Build from a column-major buffer. Every entry must be finite.
    pub fn from_vec(dims: Dims, values: Vec<T>) -> Result<Self, TensorError> {
        if dims.contains(&0) {
            return Err(TensorError::Empty("Tensor3::from_vec"));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if values.len() != expected {
            return Err(TensorError::Shape {
                context: "Tensor3::from_vec",
                expected: format!("{expected} values"),
                found: format!("{} values", values.len()),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite_value()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Self { dims, values, labels: None })
    }

    /// Build from a function of zero-based `(i, j, k)`.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self, TensorError> {
        let [d1, d2, d3] = dims;
        let mut values = Vec::with_capacity(d1 * d2 * d3);
        for k in 0..d3 {
            for j in 0..d2 {
                for i in 0..d1 {
                    values.push(f(i, j, k));
                }
            }
        }
        Self::from_vec(dims, values)
    }

    pub fn zeros(dims: Dims) -> Result<Self, TensorError> {
        Self::from_vec(dims, vec![T::zero(); dims[0] * dims[1] * dims[2]])
    }

    pub fn with_labels(mut self, labels: [&str; 3]) -> Self {
        self.labels = Some(labels.map(str::to_owned));
        self
    }

    pub fn labels(&self) -> Option<&[String; 3]> {
        self.labels.as_ref()
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Entry at zero-based `(i, j, k)`.
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.values[self.offset(i, j, k)]
    }

    /// Frontal slice `k` as a `d1 x d2` matrix.
    pub fn slice3(&self, k: usize) -> DMatrix<T> {
        let [d1, d2, _] = self.dims;
        DMatrix::from_column_slice(d1, d2, &self.values[k * d1 * d2..(k + 1) * d1 * d2])
    }

    pub fn frobenius_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }
}

/// Matricization of a tensor along one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrix<T: Scalar> {
    pub mode: Mode,
    pub matrix: DMatrix<T>,
}

impl<T: Scalar> ModeMatrix<T> {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// The mode-`mode` unfolding of `t`.
pub fn unfold<T: Scalar>(t: &Tensor3<T>, mode: Mode) -> ModeMatrix<T> {
    let dims = t.dims();
    let (rows, cols) = unfolding_shape(mode, dims);
    let matrix = DMatrix::from_fn(rows, cols, |q, s| {
        let [i, j, k] = unfolding_index(mode, dims, q + 1, s + 1);
        t.get(i - 1, j - 1, k - 1)
    });
    ModeMatrix { mode, matrix }
}

/// Back-folding: the tensor whose mode-`m.mode` unfolding equals `m.matrix`.
pub fn fold<T: Scalar>(m: &ModeMatrix<T>, dims: Dims) -> Result<Tensor3<T>, TensorError> {
    if dims.contains(&0) {
        return Err(TensorError::Empty("fold"));
    }
    let (rows, cols) = unfolding_shape(m.mode, dims);
    if (m.rows(), m.cols()) != (rows, cols) {
        return Err(TensorError::Shape {
            context: "fold",
            expected: format!("{rows}x{cols} for mode {} of {dims:?}", m.mode),
            found: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    let [d1, d2, d3] = dims;
    let mut values = vec![T::zero(); d1 * d2 * d3];
    for s in 0..cols {
        for q in 0..rows {
            let [i, j, k] = unfolding_index(m.mode, dims, q + 1, s + 1);
            values[(i - 1) + d1 * ((j - 1) + d2 * (k - 1))] = m.matrix[(q, s)];
        }
    }
    Tensor3::from_vec(dims, values)
}

/// ℓ-mode product `t ×_mode m`: the result's mode unfolding is `m · t_(mode)`.
pub fn mode_product<T: Scalar>(t: &Tensor3<T>, m: &DMatrix<T>, mode: Mode) -> Result<Tensor3<T>, TensorError> {
    let dims = t.dims();
    let axis = mode.axis();
    if m.ncols() != dims[axis] {
        return Err(TensorError::Shape {
            context: "mode_product",
            expected: format!("{} columns (d{})", dims[axis], mode),
            found: format!("{} columns", m.ncols()),
        });
    }
    if m.nrows() == 0 {
        return Err(TensorError::Empty("mode_product"));
    }
    let unfolded = unfold(t, mode);
    let product = m * &unfolded.matrix;
    let mut new_dims = dims;
    new_dims[axis] = m.nrows();
    fold(&ModeMatrix { mode, matrix: product }, new_dims)
}

/// Outer product `a ∘ b ∘ c` with entries `a_i b_j c_k`.
pub fn outer3<T: Scalar>(a: &[T], b: &[T], c: &[T]) -> Result<Tensor3<T>, TensorError> {
    if a.is_empty() || b.is_empty() || c.is_empty() {
        return Err(TensorError::Empty("outer3"));
    }
    Tensor3::from_fn([a.len(), b.len(), c.len()], |i, j, k| a[i] * b[j] * c[k])
}

/// Tucker composition `core ×1 a ×2 b ×3 c`.
///
/// The mode-1 unfolding of the result equals `a · core_(1) · (c ⊗ b)ᵀ`.
pub fn tucker_compose<T: Scalar>(
    core: &Tensor3<T>,
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    c: &DMatrix<T>,
) -> Result<Tensor3<T>, TensorError> {
    let t = mode_product(core, a, Mode::One)?;
    let t = mode_product(&t, b, Mode::Two)?;
    mode_product(&t, c, Mode::Three)
}
