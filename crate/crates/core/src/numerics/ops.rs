//! Differentiable primitives. Each forward function has a matching
//! `*_backward` that maps the output gradient to input gradients.

use rand::Rng;

use super::array::{ensure_same_shape, gemm, MatMut, MatRef};
use super::{DenseArray, NumericsError, Real};

fn ensure_2d<T: Real>(op: &'static str, a: &DenseArray<T>) -> Result<(), NumericsError> {
    if a.shape().len() != 2 {
        return Err(NumericsError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: vec![],
        });
    }
    Ok(())
}

pub fn matmul<T: Real>(
    a: &DenseArray<T>,
    b: &DenseArray<T>,
) -> Result<DenseArray<T>, NumericsError> {
    ensure_2d("matmul", a)?;
    ensure_2d("matmul", b)?;
    if a.cols() != b.rows() {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = DenseArray::zeros(&[a.rows(), b.cols()]);
    let (r, c) = (out.rows(), out.cols());
    gemm(
        T::one(),
        a.view(),
        b.view(),
        T::zero(),
        MatMut::new(out.data_mut(), r, c),
    );
    Ok(out)
}

/// Returns `(d_a, d_b)` for `c = a @ b`.
pub fn matmul_backward<T: Real>(
    a: &DenseArray<T>,
    b: &DenseArray<T>,
    d_out: &DenseArray<T>,
) -> Result<(DenseArray<T>, DenseArray<T>), NumericsError> {
    if d_out.rows() != a.rows() || d_out.cols() != b.cols() {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul_backward",
            left: d_out.shape().to_vec(),
            right: vec![a.rows(), b.cols()],
        });
    }
    let mut da = DenseArray::zeros(a.shape());
    let mut db = DenseArray::zeros(b.shape());
    let (ar, ac) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    gemm(
        T::one(),
        d_out.view(),
        b.view().t(),
        T::zero(),
        MatMut::new(da.data_mut(), ar, ac),
    );
    gemm(
        T::one(),
        a.view().t(),
        d_out.view(),
        T::zero(),
        MatMut::new(db.data_mut(), br, bc),
    );
    Ok((da, db))
}

pub fn add<T: Real>(a: &DenseArray<T>, b: &DenseArray<T>) -> Result<DenseArray<T>, NumericsError> {
    ensure_same_shape("add", a, b)?;
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

/// Gradient of `a + b` flows unchanged to both operands.
pub fn add_backward<T: Real>(d_out: &DenseArray<T>) -> (DenseArray<T>, DenseArray<T>) {
    (d_out.clone(), d_out.clone())
}

/// Adds a `1 x cols` bias to every row.
pub fn add_row_bias<T: Real>(
    x: &DenseArray<T>,
    bias: &DenseArray<T>,
) -> Result<DenseArray<T>, NumericsError> {
    if bias.len() != x.cols() {
        return Err(NumericsError::ShapeMismatch {
            op: "add_row_bias",
            left: x.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let mut out = x.clone();
    add_bias_rows(out.data_mut(), bias.data());
    Ok(out)
}

pub fn add_row_bias_backward<T: Real>(d_out: &DenseArray<T>) -> (DenseArray<T>, DenseArray<T>) {
    let mut db = DenseArray::zeros(&[1, d_out.cols()]);
    accumulate_column_sums(d_out.data(), db.data_mut());
    (d_out.clone(), db)
}

pub fn concat_cols<T: Real>(parts: &[&DenseArray<T>]) -> Result<DenseArray<T>, NumericsError> {
    let rows = parts.first().map(|p| p.rows()).unwrap_or(0);
    for p in parts {
        if p.rows() != rows {
            return Err(NumericsError::ShapeMismatch {
                op: "concat_cols",
                left: parts[0].shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
    }
    let width: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = DenseArray::zeros(&[rows, width]);
    for r in 0..rows {
        let mut c0 = 0;
        for p in parts {
            let w = p.cols();
            out.row_mut(r)[c0..c0 + w].copy_from_slice(p.row(r));
            c0 += w;
        }
    }
    Ok(out)
}

/// Splits the output gradient back into per-part column blocks.
pub fn concat_cols_backward<T: Real>(
    d_out: &DenseArray<T>,
    widths: &[usize],
) -> Result<Vec<DenseArray<T>>, NumericsError> {
    if widths.iter().sum::<usize>() != d_out.cols() {
        return Err(NumericsError::ShapeMismatch {
            op: "concat_cols_backward",
            left: d_out.shape().to_vec(),
            right: widths.to_vec(),
        });
    }
    let rows = d_out.rows();
    let mut c0 = 0;
    let mut parts = Vec::with_capacity(widths.len());
    for &w in widths {
        let part = DenseArray::from_fn(rows, w, |r, c| d_out.get(r, c0 + c));
        parts.push(part);
        c0 += w;
    }
    Ok(parts)
}

/// Row-wise softmax. Entries with `mask[i] == true` are excluded (treated as
/// `-inf` logits) and receive exactly zero weight.
pub fn row_softmax<T: Real>(
    x: &DenseArray<T>,
    mask: Option<&[bool]>,
) -> Result<DenseArray<T>, NumericsError> {
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "row_softmax",
                left: x.shape().to_vec(),
                right: vec![m.len()],
            });
        }
    }
    let mut out = x.clone();
    let cols = x.cols();
    for r in 0..x.rows() {
        let row_mask = mask.map(|m| &m[r * cols..(r + 1) * cols]);
        softmax_in_place(out.row_mut(r), row_mask)?;
    }
    Ok(out)
}

pub fn row_softmax_backward<T: Real>(
    y: &DenseArray<T>,
    d_out: &DenseArray<T>,
) -> Result<DenseArray<T>, NumericsError> {
    ensure_same_shape("row_softmax_backward", y, d_out)?;
    let mut dx = DenseArray::zeros(y.shape());
    let cols = y.cols();
    for r in 0..y.rows() {
        softmax_backward_row(
            y.row(r),
            d_out.row(r),
            &mut dx.data_mut()[r * cols..(r + 1) * cols],
        );
    }
    Ok(dx)
}

pub fn gelu<T: Real>(x: &DenseArray<T>) -> DenseArray<T> {
    x.map(gelu_scalar)
}

pub fn gelu_backward<T: Real>(
    x: &DenseArray<T>,
    d_out: &DenseArray<T>,
) -> Result<DenseArray<T>, NumericsError> {
    ensure_same_shape("gelu_backward", x, d_out)?;
    let mut dx = d_out.clone();
    for (g, &xi) in dx.data_mut().iter_mut().zip(x.data()) {
        *g *= gelu_grad_scalar(xi);
    }
    Ok(dx)
}

pub fn sigmoid<T: Real>(x: &DenseArray<T>) -> DenseArray<T> {
    x.map(sigmoid_scalar)
}

/// Uses the forward output `y = sigmoid(x)`.
pub fn sigmoid_backward<T: Real>(
    y: &DenseArray<T>,
    d_out: &DenseArray<T>,
) -> Result<DenseArray<T>, NumericsError> {
    ensure_same_shape("sigmoid_backward", y, d_out)?;
    let mut dx = d_out.clone();
    for (g, &yi) in dx.data_mut().iter_mut().zip(y.data()) {
        *g *= yi * (T::one() - yi);
    }
    Ok(dx)
}

// Written this way so NaN is rejected too.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn log<T: Real>(x: &DenseArray<T>) -> Result<DenseArray<T>, NumericsError> {
    if let Some((index, &v)) = x.data().iter().enumerate().find(|(_, &v)| !(v > T::zero())) {
        return Err(NumericsError::NonPositiveLog {
            index,
            value: v.as_f64(),
        });
    }
    Ok(x.map(|v| v.ln()))
}

pub fn log_backward<T: Real>(
    x: &DenseArray<T>,
    d_out: &DenseArray<T>,
) -> Result<DenseArray<T>, NumericsError> {
    ensure_same_shape("log_backward", x, d_out)?;
    let mut dx = d_out.clone();
    for (g, &xi) in dx.data_mut().iter_mut().zip(x.data()) {
        *g /= xi;
    }
    Ok(dx)
}

/// Embedding lookup: row `i` of the output is `table[ids[i]]`.
pub fn gather_rows<T: Real>(
    table: &DenseArray<T>,
    ids: &[usize],
) -> Result<DenseArray<T>, NumericsError> {
    let rows = table.rows();
    let cols = table.cols();
    let mut out = DenseArray::zeros(&[ids.len(), cols]);
    for (i, &id) in ids.iter().enumerate() {
        if id >= rows {
            return Err(NumericsError::IndexOutOfRange {
                index: id,
                len: rows,
            });
        }
        out.row_mut(i).copy_from_slice(table.row(id));
    }
    Ok(out)
}

/// Scatter-add backward of [`gather_rows`]: repeated ids accumulate.
pub fn gather_rows_backward<T: Real>(
    table_shape: &[usize],
    ids: &[usize],
    d_out: &DenseArray<T>,
) -> Result<DenseArray<T>, NumericsError> {
    let mut d_table = DenseArray::zeros(table_shape);
    if d_out.rows() != ids.len() || d_out.cols() != d_table.cols() {
        return Err(NumericsError::ShapeMismatch {
            op: "gather_rows_backward",
            left: d_out.shape().to_vec(),
            right: vec![ids.len(), d_table.cols()],
        });
    }
    scatter_add_rows(&mut d_table, ids, d_out.data());
    Ok(d_table)
}

pub fn scatter_add_rows<T: Real>(d_table: &mut DenseArray<T>, ids: &[usize], d_rows: &[T]) {
    let cols = d_table.cols();
    for (i, &id) in ids.iter().enumerate() {
        let src = &d_rows[i * cols..(i + 1) * cols];
        for (dst, &g) in d_table.row_mut(id).iter_mut().zip(src) {
            *dst += g;
        }
    }
}

/// Per-entry multipliers of an inverted-dropout draw: `0` for dropped
/// entries and `1/(1-p)` for kept ones. `None` means identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T> {
    scale: Option<Vec<T>>,
}

impl<T: Real> DropoutMask<T> {
    pub fn identity() -> Self {
        Self { scale: None }
    }

    pub fn draw(len: usize, rate: f64, rng: &mut impl Rng) -> Result<Self, NumericsError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::InvalidRate(rate));
        }
        if rate == 0.0 {
            return Ok(Self::identity());
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let scale = (0..len)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        Ok(Self { scale: Some(scale) })
    }

    pub fn is_identity(&self) -> bool {
        self.scale.is_none()
    }

    /// Applies the mask in place (also used for the backward pass).
    pub fn apply(&self, values: &mut [T]) {
        if let Some(scale) = &self.scale {
            debug_assert_eq!(scale.len(), values.len());
            for (v, &s) in values.iter_mut().zip(scale) {
                *v *= s;
            }
        }
    }
}

/// Inverted dropout. In evaluation mode (`training == false`) this is the
/// exact identity.
pub fn dropout_mask_apply<T: Real>(
    x: &DenseArray<T>,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(DenseArray<T>, DropoutMask<T>), NumericsError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NumericsError::InvalidRate(rate));
    }
    let mask = if training {
        DropoutMask::draw(x.len(), rate, rng)?
    } else {
        DropoutMask::identity()
    };
    let mut out = x.clone();
    mask.apply(out.data_mut());
    Ok((out, mask))
}

pub fn dropout_backward<T: Real>(mask: &DropoutMask<T>, d_out: &DenseArray<T>) -> DenseArray<T> {
    let mut dx = d_out.clone();
    mask.apply(dx.data_mut());
    dx
}

// ---- scalar and slice helpers shared with the model kernels ----

pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn gelu_scalar<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    let cdf = half * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::lit(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// Stable softmax of one row in place; masked entries become exactly zero.
pub fn softmax_in_place<T: Real>(
    row: &mut [T],
    mask: Option<&[bool]>,
) -> Result<(), NumericsError> {
    let live = |i: usize| mask.is_none_or(|m| !m[i]);
    let mut max = T::neg_infinity();
    for (i, &v) in row.iter().enumerate() {
        if live(i) && v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        return Err(NumericsError::FullyMasked);
    }
    let mut total = T::zero();
    for (i, v) in row.iter_mut().enumerate() {
        if live(i) {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = T::zero();
        }
    }
    for v in row.iter_mut() {
        *v /= total;
    }
    Ok(())
}

/// `dx = y * (dy - <dy, y>)` for one row.
pub fn softmax_backward_row<T: Real>(y: &[T], dy: &[T], dx: &mut [T]) {
    let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    for ((o, &yi), &gi) in dx.iter_mut().zip(y).zip(dy) {
        *o = yi * (gi - dot);
    }
}

pub fn add_bias_rows<T: Real>(data: &mut [T], bias: &[T]) {
    let cols = bias.len();
    for row in data.chunks_mut(cols) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

pub fn accumulate_column_sums<T: Real>(data: &[T], out: &mut [T]) {
    let cols = out.len();
    for row in data.chunks(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// `out = x @ w` for row-major `x: rows x inner` and `w: inner x cols`.
pub fn matmul_slices<T: Real>(x: &[T], rows: usize, w: &DenseArray<T>, out: &mut [T]) {
    let (inner, cols) = (w.rows(), w.cols());
    gemm(
        T::one(),
        MatRef::new(x, rows, inner),
        w.view(),
        T::zero(),
        MatMut::new(out, rows, cols),
    );
}
