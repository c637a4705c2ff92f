//! Dense complex vectors and matrices and the handful of operations the
//! channel model, objective and baselines need.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex;

use super::Real;
use crate::error::{Error, Result};

pub type CVector<T> = Array1<Complex<T>>;
pub type CMatrix<T> = Array2<Complex<T>>;

/// Conjugate transpose.
pub fn hermitian<T: Real>(a: ArrayView2<Complex<T>>) -> CMatrix<T> {
    a.t().mapv(|z| z.conj())
}

pub fn matvec<T: Real>(a: ArrayView2<Complex<T>>, x: ArrayView1<Complex<T>>) -> Result<CVector<T>> {
    if a.ncols() != x.len() {
        return Err(Error::dimension("matvec", a.ncols(), x.len()));
    }
    Ok(a.dot(&x))
}

pub fn matmul<T: Real>(a: ArrayView2<Complex<T>>, b: ArrayView2<Complex<T>>) -> Result<CMatrix<T>> {
    if a.ncols() != b.nrows() {
        return Err(Error::dimension("matmul", a.ncols(), b.nrows()));
    }
    Ok(a.dot(&b))
}

pub fn diag<T: Real>(x: ArrayView1<Complex<T>>) -> CMatrix<T> {
    let mut out = Array2::zeros((x.len(), x.len()));
    for (i, &z) in x.iter().enumerate() {
        out[(i, i)] = z;
    }
    out
}

/// Maps real phases θ to unit-modulus entries e^{jθ}.
pub fn elementwise_exp_i<T: Real>(phases: ArrayView1<T>) -> CVector<T> {
    phases.mapv(|theta| Complex::new(theta.cos(), theta.sin()))
}

pub fn norm2<T: Real>(x: ArrayView1<Complex<T>>) -> T {
    norm2_sqr(x).sqrt()
}

pub fn norm2_sqr<T: Real>(x: ArrayView1<Complex<T>>) -> T {
    x.iter().map(|z| z.norm_sqr()).sum()
}

/// `x^H y` (conjugate-linear in the first argument).
pub fn inner<T: Real>(x: ArrayView1<Complex<T>>, y: ArrayView1<Complex<T>>) -> Result<Complex<T>> {
    if x.len() != y.len() {
        return Err(Error::dimension("inner", x.len(), y.len()));
    }
    Ok(x.iter()
        .zip(y.iter())
        .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a.conj() * b))
}

/// Result of a square solve.
#[derive(Debug, Clone)]
pub struct Inverse<T: Real> {
    pub matrix: CMatrix<T>,
    /// Set when a diagonal ridge had to be added to invert a (numerically)
    /// singular matrix.
    pub ridge: Option<T>,
}

/// Inverts a square complex matrix by Gauss-Jordan elimination with partial
/// pivoting. When a pivot collapses below `1e-12` of the largest diagonal
/// magnitude, the matrix is retried with a ridge of `ridge_rel` times its mean
/// diagonal magnitude added.
pub fn inverse<T: Real>(a: ArrayView2<Complex<T>>, ridge_rel: T) -> Result<Inverse<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dimension("inverse (square)", n, a.ncols()));
    }
    if let Some(m) = gauss_jordan(a.to_owned()) {
        return Ok(Inverse { matrix: m, ridge: None });
    }
    let scale = (0..n).map(|i| a[(i, i)].norm()).sum::<T>() / T::from_usize(n.max(1)).unwrap();
    let ridge = if scale > T::zero() { ridge_rel * scale } else { ridge_rel };
    let mut regularized = a.to_owned();
    for i in 0..n {
        regularized[(i, i)] += Complex::new(ridge, T::zero());
    }
    gauss_jordan(regularized)
        .map(|m| Inverse { matrix: m, ridge: Some(ridge) })
        .ok_or(Error::Singular)
}

fn gauss_jordan<T: Real>(mut a: CMatrix<T>) -> Option<CMatrix<T>> {
    let n = a.nrows();
    let mut inv: CMatrix<T> = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            Complex::new(T::one(), T::zero())
        } else {
            Complex::new(T::zero(), T::zero())
        }
    });
    let max_diag = (0..n).map(|i| a[(i, i)].norm()).fold(T::zero(), T::max);
    let tol = max_diag * T::lit(1e-12);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].norm().partial_cmp(&a[(j, col)].norm()).unwrap())?;
        if !(a[(pivot, col)].norm() > tol) {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                a.swap((pivot, c), (col, c));
                inv.swap((pivot, c), (col, c));
            }
        }
        let p = a[(col, col)];
        for c in 0..n {
            a[(col, c)] /= p;
            inv[(col, c)] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[(r, col)];
            if factor.norm_sqr() == T::zero() {
                continue;
            }
            for c in 0..n {
                let (ac, ic) = (a[(col, c)], inv[(col, c)]);
                a[(r, c)] -= factor * ac;
                inv[(r, c)] -= factor * ic;
            }
        }
    }
    Some(inv)
}

/// `[re, im]` pairs, the on-disk encoding of complex numbers.
pub fn to_pairs<T: Real>(x: ArrayView1<Complex<T>>) -> Vec<[f64; 2]> {
    x.iter().map(|z| [z.re.as_f64(), z.im.as_f64()]).collect()
}

pub fn from_pairs<T: Real>(pairs: &[[f64; 2]]) -> CVector<T> {
    pairs.iter().map(|&[re, im]| Complex::new(T::lit(re), T::lit(im))).collect()
}

pub fn matrix_to_pairs<T: Real>(a: ArrayView2<Complex<T>>) -> Vec<Vec<[f64; 2]>> {
    a.rows().into_iter().map(to_pairs).collect()
}

pub fn matrix_from_pairs<T: Real>(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix<T>> {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((rows.len(), ncols));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::dimension("ragged complex matrix", ncols, row.len()));
        }
        out.row_mut(i).assign(&from_pairs::<T>(row));
    }
    Ok(out)
}
