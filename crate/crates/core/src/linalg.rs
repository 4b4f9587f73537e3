//! Small dense and sparse linear algebra used by the solvers.
//!
//! Nothing here tries to compete with a BLAS; the matrices are either 2×2,
//! at most a few hundred rows dense, or banded/sparse from grid operators.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// 2×2 matrix stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2<T: Real> {
    pub m: [[T; 2]; 2],
}

impl<T: Real> Mat2<T> {
    pub fn new(a: T, b: T, c: T, d: T) -> Self {
        Self { m: [[a, b], [c, d]] }
    }

    pub fn identity() -> Self {
        Self::diag(T::one(), T::one())
    }

    pub fn diag(a: T, d: T) -> Self {
        Self::new(a, T::zero(), T::zero(), d)
    }

    pub fn scalar(a: T) -> Self {
        Self::diag(a, a)
    }

    pub fn det(&self) -> T {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return None;
        }
        Some(Self::new(
            self.m[1][1] / d,
            -self.m[0][1] / d,
            -self.m[1][0] / d,
            self.m[0][0] / d,
        ))
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut r = [[T::zero(); 2]; 2];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j];
            }
        }
        Self { m: r }
    }

    pub fn apply(&self, v: [T; 2]) -> [T; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    /// Max-norm of the entrywise difference.
    pub fn max_diff(&self, o: &Self) -> T {
        let mut r = T::zero();
        for i in 0..2 {
            for j in 0..2 {
                r = r.max((self.m[i][j] - o.m[i][j]).abs());
            }
        }
        r
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> (T, T) {
        let a = self.m[0][0];
        let d = self.m[1][1];
        let b = (self.m[0][1] + self.m[1][0]) * T::half();
        let mean = (a + d) * T::half();
        let r = (((a - d) * T::half()).powi(2) + b * b).sqrt();
        (mean - r, mean + r)
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (self.m[0][1] - self.m[1][0]).abs() <= tol
    }

    /// Upper-triangular `M` with `MᵀM = self` (self must be SPD).
    pub fn cholesky_upper(&self) -> Option<Self> {
        let a = self.m[0][0];
        if !(a > T::zero()) {
            return None;
        }
        let r00 = a.sqrt();
        let r01 = self.m[0][1] / r00;
        let s = self.m[1][1] - r01 * r01;
        if !(s > T::zero()) {
            return None;
        }
        Some(Self::new(r00, r01, T::zero(), s.sqrt()))
    }
}

/// Dense square or rectangular matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DMat<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(Error::InvalidParameter("ragged matrix rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.concat() })
    }

    pub fn from_diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.rows)
            .map(|i| dot(self.row(i), x))
            .collect()
    }

    pub fn add(&self, o: &Self) -> Self {
        let data = self.data.iter().zip(&o.data).map(|(&a, &b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: T) -> Self {
        let data = self.data.iter().map(|&a| a * s).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    /// `xᵀ self y`.
    pub fn bilinear(&self, x: &[T], y: &[T]) -> T {
        dot(x, &self.matvec(y))
    }

    pub fn max_asymmetry(&self) -> T {
        let mut r = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                r = r.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        r
    }

    /// Lower Cholesky factor; fails if a pivot drops below `tol` times the
    /// largest diagonal entry. Work is restricted to the envelope (leading
    /// zeros of each row stay zero in the factor).
    pub fn cholesky(&self, tol: T) -> Result<Cholesky<T>> {
        let n = self.rows;
        if self.cols != n {
            return Err(Error::NotSpd("matrix is not square".into()));
        }
        let scale = (0..n).map(|i| self[(i, i)].abs()).fold(T::zero(), T::max);
        let first: Vec<usize> = (0..n)
            .map(|i| (0..i).find(|&k| self[(i, k)] != T::zero()).unwrap_or(i))
            .collect();
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut s = self[(j, j)];
            for k in first[j]..j {
                s = s - l[(j, k)] * l[(j, k)];
            }
            if !(s > tol * scale) {
                return Err(Error::NotSpd(format!("pivot {j} is {s}")));
            }
            let d = s.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                if first[i] > j {
                    continue;
                }
                let mut s = self[(i, j)];
                for k in first[i].max(first[j])..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn is_spd(&self, tol: T) -> bool {
        self.max_asymmetry() <= tol && self.cholesky(tol).is_ok()
    }
}

impl<T: Real> std::ops::Index<(usize, usize)> for DMat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Real> std::ops::IndexMut<(usize, usize)> for DMat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub struct Cholesky<T: Real> {
    l: DMat<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn factor(&self) -> &DMat<T> {
        &self.l
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub fn norm_inf<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |s, &x| s.max(x.abs()))
}

/// Sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T: Real> {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<T>,
}

impl<T: Real> Csr<T> {
    /// Builds from triplets, summing duplicates and sorting columns.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, T)>) -> Self {
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(trip.len());
        let mut val: Vec<T> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trip {
            if last == Some((i, j)) {
                let k = val.len() - 1;
                val[k] = val[k] + v;
            } else {
                col.push(j);
                val.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, col, val }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// Iterator over `(col, value)` of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col[k], self.val[k]))
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i).find(|&(c, _)| c == j).map_or(T::zero(), |(_, v)| v)
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| self.row(i).fold(T::zero(), |s, (j, v)| s + v * x[j]))
            .collect()
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn column_sums(&self) -> Vec<T> {
        let mut s = vec![T::zero(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                s[j] = s[j] + v;
            }
        }
        s
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    /// `alpha I + beta self`.
    pub fn shifted(&self, alpha: T, beta: T) -> Self {
        let mut trip: Vec<(usize, usize, T)> =
            self.triplets().into_iter().map(|(i, j, v)| (i, j, beta * v)).collect();
        trip.extend((0..self.n).map(|i| (i, i, alpha)));
        Self::from_triplets(self.n, trip)
    }
}

/// Banded LU factorization without pivoting.
///
/// Only used on diagonally dominant M-matrices, where no pivoting is needed
/// and skipping it keeps the band structure intact.
pub struct BandedLu<T: Real> {
    n: usize,
    kl: usize,
    ku: usize,
    // row i holds columns i-kl ..= i+ku
    band: Vec<T>,
}

impl<T: Real> BandedLu<T> {
    pub fn factor(a: &Csr<T>) -> Result<Self> {
        let n = a.n();
        let (kl, ku) = a.bandwidths();
        let w = kl + ku + 1;
        let mut band = vec![T::zero(); n * w];
        for (i, j, v) in a.triplets() {
            band[i * w + (j + kl - i)] = v;
        }
        for k in 0..n {
            let piv = band[k * w + kl];
            if piv == T::zero() || !piv.is_finite() {
                return Err(Error::SolverFailure(format!("zero pivot at row {k}")));
            }
            let imax = (k + kl).min(n - 1);
            let jmax = (k + ku).min(n - 1);
            for i in k + 1..=imax {
                let idx = i * w + (k + kl - i);
                let f = band[idx] / piv;
                band[idx] = f;
                if f == T::zero() {
                    continue;
                }
                for j in k + 1..=jmax {
                    let u = band[k * w + (j + kl - k)];
                    let t = i * w + (j + kl - i);
                    band[t] = band[t] - f * u;
                }
            }
        }
        Ok(Self { n, kl, ku, band })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let w = kl + ku + 1;
        let mut y = b.to_vec();
        for i in 0..n {
            let j0 = i.saturating_sub(kl);
            let mut s = y[i];
            for j in j0..i {
                s = s - self.band[i * w + (j + kl - i)] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let j1 = (i + ku).min(n - 1);
            let mut s = y[i];
            for j in i + 1..=j1 {
                s = s - self.band[i * w + (j + kl - i)] * y[j];
            }
            y[i] = s / self.band[i * w + kl];
        }
        y
    }
}

/// Jacobi-preconditioned BiCGSTAB. Returns the solution and the number of
/// iterations, or `SolverFailure` if the relative residual does not reach
/// `tol` within `max_iter`.
pub fn bicgstab<T: Real>(a: &Csr<T>, b: &[T], x0: &[T], tol: T, max_iter: usize) -> Result<(Vec<T>, usize)> {
    let n = a.n();
    let dinv: Vec<T> = a
        .diagonal()
        .into_iter()
        .map(|d| if d != T::zero() { T::one() / d } else { T::one() })
        .collect();
    let precond = |v: &[T]| -> Vec<T> { v.iter().zip(&dinv).map(|(&x, &d)| x * d).collect() };
    let bnorm = dot(b, b).sqrt().max(T::min_positive_value());
    let mut x = x0.to_vec();
    let ax = a.matvec(&x);
    let mut r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
    if dot(&r, &r).sqrt() <= tol * bnorm {
        return Ok((x, 0));
    }
    let r_hat = r.clone();
    let mut rho = T::one();
    let mut alpha = T::one();
    let mut omega = T::one();
    let mut v = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == T::zero() {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        v = a.matvec(&y);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<T> = r.iter().zip(&v).map(|(&ri, &vi)| ri - alpha * vi).collect();
        if dot(&s, &s).sqrt() <= tol * bnorm {
            for i in 0..n {
                x[i] = x[i] + alpha * y[i];
            }
            return Ok((x, it));
        }
        let z = precond(&s);
        let t = a.matvec(&z);
        let tt = dot(&t, &t);
        omega = if tt > T::zero() { dot(&t, &s) / tt } else { T::zero() };
        for i in 0..n {
            x[i] = x[i] + alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Ok((x, it));
        }
        if omega == T::zero() {
            break;
        }
    }
    Err(Error::SolverFailure("BiCGSTAB did not converge".into()))
}
