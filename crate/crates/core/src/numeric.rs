//! Small dense linear algebra and numerical helpers shared by the rest of the crate.
//!
//! Everything here works in `f64`. Matrices are row-major and only provide the handful of
//! products the encoders need; this is not a BLAS.

use crate::error::{Error, Result};

/// A non-empty vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("vector"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector".into()));
        }
        Ok(Vector(data))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Vector(vec![0.0; dim])
    }

    /// Wraps data produced by trusted arithmetic on finite inputs.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        Vector(data)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &Vector) {
        assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("matrix"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Stacks equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("matrix rows"))?;
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_vector(&self, r: usize) -> Vector {
        Vector::from_raw(self.row(r).to_vec())
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: rhs.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        gemm(
            (self.rows, self.cols, rhs.cols),
            (&self.data, self.cols, 1),
            (&rhs.data, rhs.cols, 1),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self · rhsᵀ`
    pub fn matmul_transposed(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: rhs.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        gemm(
            (self.rows, self.cols, rhs.rows),
            (&self.data, self.cols, 1),
            (&rhs.data, 1, rhs.cols),
            &mut out.data,
        );
        Ok(out)
    }

    /// `selfᵀ · rhs`
    pub fn transposed_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                actual: rhs.rows,
            });
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        gemm(
            (self.cols, self.rows, rhs.cols),
            (&self.data, 1, self.cols),
            (&rhs.data, rhs.cols, 1),
            &mut out.data,
        );
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out = A · B` for strided operands; `(m, k, n)` are the product dimensions and each operand
/// is `(data, row_stride, col_stride)`. `out` is dense row-major `m × n`.
fn gemm(dims: (usize, usize, usize), a: (&[f64], usize, usize), b: (&[f64], usize, usize), out: &mut [f64]) {
    let (m, k, n) = dims;
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    // SAFETY: the callers check that the operand shapes agree, so every strided index stays
    // inside its slice, and `out` holds exactly `m · n` elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(a: &Vector, b: &Vector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

pub fn sq_l2_distance(a: &Vector, b: &Vector) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

pub fn l2_distance(a: &Vector, b: &Vector) -> Result<f64> {
    sq_l2_distance(a, b).map(f64::sqrt)
}

/// `log Σ exp(vᵢ)` evaluated around the maximum so large magnitudes do not overflow.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("logsumexp input"));
    }
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite("logsumexp input".into()));
        }
        max = max.max(v);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Softmax weights, i.e. the gradient of [`logsumexp`].
pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    let lse = logsumexp(values)?;
    Ok(values.iter().map(|v| (v - lse).exp()).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub rtol: f64,
    /// Differences below this pass regardless of relative error.
    pub atol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            rtol: 1e-4,
            atol: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checks: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordinateCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn compare(index: usize, analytic: f64, numeric: f64, opts: &GradCheckOptions) -> CoordinateCheck {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    let passed = diff <= opts.atol || diff <= opts.rtol * scale;
    CoordinateCheck {
        index,
        analytic,
        numeric,
        rel_error: diff / scale.max(opts.atol),
        passed,
    }
}

/// Central-difference check of selected partial derivatives.
///
/// `f(i, h)` must return the objective with coordinate `i` displaced by `h`; this lets callers
/// check parameters that do not live in a single flat vector.
pub fn check_partials<F>(
    mut f: F,
    coords: &[usize],
    analytic: &[f64],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(usize, f64) -> f64,
{
    if coords.len() != analytic.len() {
        return Err(Error::DimensionMismatch {
            expected: coords.len(),
            actual: analytic.len(),
        });
    }
    if !(opts.eps > 0.0) {
        return Err(Error::arg("finite-difference step must be positive"));
    }
    let mut report = GradCheckReport::default();
    for (&i, &a) in coords.iter().zip(analytic) {
        let plus = f(i, opts.eps);
        let minus = f(i, -opts.eps);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * opts.eps);
        report.checks.push(compare(i, a, numeric, opts));
    }
    Ok(report)
}

/// Checks a full analytic gradient of `f` at `x` against central differences.
pub fn check_gradient<F>(
    mut f: F,
    x: &Vector,
    analytic_grad: &Vector,
    eps: f64,
    rtol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&Vector) -> f64,
{
    check_dims(x, analytic_grad)?;
    let opts = GradCheckOptions {
        eps,
        rtol,
        ..GradCheckOptions::default()
    };
    let coords: Vec<usize> = (0..x.dim()).collect();
    let mut probe = x.0.clone();
    check_partials(
        |i, h| {
            let saved = probe[i];
            probe[i] = saved + h;
            let v = f(&Vector(probe.clone()));
            probe[i] = saved;
            v
        },
        &coords,
        analytic_grad.as_slice(),
        &opts,
    )
}
