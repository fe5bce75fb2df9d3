//! Dense third-order tensors and the multilinear primitives built on them.
//!
//! Values are stored first-index-fastest: entry `(i, j, k)` of an
//! `I × J × K` tensor lives at `i + I·(j + J·k)`. Every unfolding column
//! order follows from that layout, with the lower-numbered remaining mode
//! varying fastest:
//!
//! - mode 1: `I × JK`, column `j + J·k`
//! - mode 2: `J × IK`, column `i + I·k`
//! - mode 3: `K × IJ`, column `i + I·j`
//!
//! Indices are 0-based in the API; file formats use 1-based indices.

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};

/// Dense real matrix, column-major.
pub type Matrix = DMatrix<f64>;

/// One of the three tensor modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    /// 0-based axis index.
    pub fn axis(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }
}

impl TryFrom<usize> for Mode {
    type Error = Error;

    /// Converts a 1-based mode number.
    fn try_from(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            _ => Err(Error::arg(format!("mode must be 1, 2 or 3, got {n}"))),
        }
    }
}

/// Dense real-valued `I × J × K` array.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl DenseTensor3 {
    /// Builds a tensor from first-index-fastest values.
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let n = dims.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::dim(format!(
                "{} values supplied for dims {:?} (expected {n})",
                data.len(),
                dims
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry at offset {pos}")));
        }
        Ok(Self { dims, data })
    }

    /// Internal constructor for values produced by finite arithmetic.
    pub(crate) fn from_raw(dims: [usize; 3], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self::from_raw(dims, vec![0.0; dims.iter().product()]))
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        check_dims(dims)?;
        let [ni, nj, nk] = dims;
        let mut data = Vec::with_capacity(ni * nj * nk);
        for k in 0..nk {
            for j in 0..nj {
                for i in 0..ni {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Frontal slice `X(:, :, k)` as an `I × J` view.
    pub fn frontal_slice(&self, k: usize) -> DMatrixView<'_, f64> {
        let [ni, nj, _] = self.dims;
        let start = ni * nj * k;
        DMatrixView::from_slice(&self.data[start..start + ni * nj], ni, nj)
    }

    /// Entrywise `self + other`.
    pub fn add(&self, other: &DenseTensor3) -> Result<DenseTensor3> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &DenseTensor3) -> Result<DenseTensor3> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> DenseTensor3 {
        Self::from_raw(self.dims, self.data.iter().map(|v| v * s).collect())
    }

    fn zip_with(&self, other: &DenseTensor3, f: impl Fn(f64, f64) -> f64) -> Result<DenseTensor3> {
        if self.dims != other.dims {
            return Err(Error::dim(format!(
                "tensor dims differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_raw(self.dims, data))
    }
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::dim(format!("tensor dims must be positive, got {dims:?}")));
    }
    Ok(())
}

/// Shape `(rows, cols)` of the mode-`mode` unfolding of a tensor with `dims`.
pub fn unfolded_shape(dims: [usize; 3], mode: Mode) -> (usize, usize) {
    let [ni, nj, nk] = dims;
    match mode {
        Mode::One => (ni, nj * nk),
        Mode::Two => (nj, ni * nk),
        Mode::Three => (nk, ni * nj),
    }
}

/// Mode-n matricization.
pub fn unfold(t: &DenseTensor3, mode: Mode) -> Matrix {
    let [ni, nj, nk] = t.dims;
    match mode {
        Mode::One => Matrix::from_column_slice(ni, nj * nk, &t.data),
        Mode::Two => {
            let mut m = Matrix::zeros(nj, ni * nk);
            for k in 0..nk {
                for j in 0..nj {
                    for i in 0..ni {
                        m[(j, i + ni * k)] = t.data[i + ni * (j + nj * k)];
                    }
                }
            }
            m
        }
        Mode::Three => Matrix::from_row_slice(nk, ni * nj, &t.data),
    }
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: Mode, dims: [usize; 3]) -> Result<DenseTensor3> {
    check_dims(dims)?;
    let expected = unfolded_shape(dims, mode);
    if m.shape() != expected {
        return Err(Error::dim(format!(
            "cannot fold a {}x{} matrix along mode {} into dims {:?} (expected {}x{})",
            m.nrows(),
            m.ncols(),
            mode.axis() + 1,
            dims,
            expected.0,
            expected.1
        )));
    }
    let [ni, nj, nk] = dims;
    let data = match mode {
        Mode::One => m.as_slice().to_vec(),
        Mode::Two => {
            let mut data = vec![0.0; ni * nj * nk];
            for k in 0..nk {
                for j in 0..nj {
                    for i in 0..ni {
                        data[i + ni * (j + nj * k)] = m[(j, i + ni * k)];
                    }
                }
            }
            data
        }
        Mode::Three => m.transpose().as_slice().to_vec(),
    };
    Ok(DenseTensor3::from_raw(dims, data))
}

/// Tensor-times-matrix along `mode`: replaces `dims[mode]` by `m.nrows()`.
pub fn mode_n_product(t: &DenseTensor3, m: &Matrix, mode: Mode) -> Result<DenseTensor3> {
    let axis = mode.axis();
    if m.ncols() != t.dims[axis] {
        return Err(Error::dim(format!(
            "mode-{} product needs a matrix with {} columns, got {}x{}",
            axis + 1,
            t.dims[axis],
            m.nrows(),
            m.ncols()
        )));
    }
    let mut dims = t.dims;
    dims[axis] = m.nrows();
    check_dims(dims)?;
    let [ni, nj, nk] = t.dims;
    match mode {
        Mode::One => {
            let x1 = DMatrixView::from_slice(&t.data, ni, nj * nk);
            let out = m * x1;
            Ok(DenseTensor3::from_raw(dims, out.as_slice().to_vec()))
        }
        Mode::Two => {
            // Slice by slice: Y_k = X_k · Mᵀ
            let mt = m.transpose();
            let mut data = Vec::with_capacity(dims.iter().product());
            for k in 0..nk {
                let yk = t.frontal_slice(k) * &mt;
                data.extend_from_slice(yk.as_slice());
            }
            Ok(DenseTensor3::from_raw(dims, data))
        }
        Mode::Three => {
            // X_(3)ᵀ is the (IJ × K) column-major view of the raw data.
            let x3t = DMatrixView::from_slice(&t.data, ni * nj, nk);
            let out = x3t * m.transpose();
            Ok(DenseTensor3::from_raw(dims, out.as_slice().to_vec()))
        }
    }
}

/// Column-wise Kronecker product; column `c` is `a[:, c] ⊗ b[:, c]`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::dim(format!(
            "Khatri-Rao product needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (ra, rb) = (a.nrows(), b.nrows());
    let mut out = Matrix::zeros(ra * rb, a.ncols());
    for c in 0..a.ncols() {
        for i in 0..ra {
            let s = a[(i, c)];
            for j in 0..rb {
                out[(i * rb + j, c)] = s * b[(j, c)];
            }
        }
    }
    Ok(out)
}

/// Standard Kronecker product.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = Matrix::zeros(ra * rb, ca * cb);
    for ja in 0..ca {
        for ia in 0..ra {
            let s = a[(ia, ja)];
            if s == 0.0 {
                continue;
            }
            for jb in 0..cb {
                for ib in 0..rb {
                    out[(ia * rb + ib, ja * cb + jb)] = s * b[(ib, jb)];
                }
            }
        }
    }
    out
}

/// Sum of squared entries.
pub fn frobenius_norm_sq(t: &DenseTensor3) -> f64 {
    t.data.iter().map(|v| v * v).sum()
}
