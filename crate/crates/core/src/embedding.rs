//! Mobility fields and isometric embeddings `b` with `(∇b)ᵀ∇b = B = A⁻¹`.
//!
//! Three families have an analytic construction: constant SPD matrices
//! (linear `b`), scalar fields on a line (`b' = √B`) and separable diagonal
//! fields in 2D (one 1D embedding per axis). Everything else is rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::Mat2;
use crate::scalar::Real;

const SPD_TOL: f64 = 1e-10;
const DIAG_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityFamily {
    Constant,
    Scalar1d,
    SeparableDiagonal,
}

/// Per-node mobility `A` and friction `B = A⁻¹`.
///
/// On a line only the `[0][0]` entries are meaningful; the other diagonal
/// entry is kept at one.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityField<T: Real> {
    grid: Grid<T>,
    a: Vec<Mat2<T>>,
    b: Vec<Mat2<T>>,
    c0: T,
    family: MobilityFamily,
}

fn check_spd<T: Real>(m: &Mat2<T>, dim: usize) -> Result<T> {
    let tol = T::lit(SPD_TOL);
    if dim == 1 {
        let v = m.m[0][0];
        if !(v > tol) || !v.is_finite() {
            return Err(Error::NotSpd(format!("scalar {v}")));
        }
        return Ok(v);
    }
    if !m.is_symmetric(tol) {
        return Err(Error::NotSpd("matrix is not symmetric".into()));
    }
    let (lo, _) = m.sym_eigenvalues();
    if !(lo > tol) || !lo.is_finite() {
        return Err(Error::NotSpd(format!("smallest eigenvalue {lo}")));
    }
    Ok(lo)
}

fn embed_1d_matrix<T: Real>(v: T) -> Mat2<T> {
    Mat2::diag(v, T::one())
}

impl<T: Real> MobilityField<T> {
    /// Constant mobility matrix `A` on the grid (only `a[0][0]` used in 1D).
    pub fn constant(grid: &Grid<T>, a: Mat2<T>) -> Result<Self> {
        let a = if grid.dim() == 1 { embed_1d_matrix(a.m[0][0]) } else { a };
        check_spd(&a, grid.dim())?;
        let b = a
            .inverse()
            .ok_or_else(|| Error::NotSpd("singular mobility".into()))?;
        let c0 = check_spd(&b, grid.dim())?;
        let n = grid.len();
        Ok(Self {
            grid: grid.clone(),
            a: vec![a; n],
            b: vec![b; n],
            c0,
            family: MobilityFamily::Constant,
        })
    }

    /// Scalar friction `B(x)` sampled at the nodes of a 1D grid.
    pub fn scalar_1d(grid: &Grid<T>, b: &[T]) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, found: grid.dim() });
        }
        if b.len() != grid.len() {
            return Err(Error::InvalidParameter("one friction sample per node expected".into()));
        }
        for (i, &v) in b.iter().enumerate() {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::NonPositiveMobility { node: i, value: v.to_f64_lossy() });
            }
        }
        let bm: Vec<Mat2<T>> = b.iter().map(|&v| embed_1d_matrix(v)).collect();
        let am: Vec<Mat2<T>> = b.iter().map(|&v| embed_1d_matrix(T::one() / v)).collect();
        let c0 = b.iter().copied().fold(T::infinity(), T::min);
        Ok(Self { grid: grid.clone(), a: am, b: bm, c0, family: MobilityFamily::Scalar1d })
    }

    pub fn scalar_1d_fn(grid: &Grid<T>, b: impl Fn(T) -> T) -> Result<Self> {
        let v: Vec<T> = (0..grid.len()).map(|i| b(grid.node(i)[0])).collect();
        Self::scalar_1d(grid, &v)
    }

    /// Diagonal friction `diag(β₁(x₁), β₂(x₂))` on a 2D grid.
    pub fn separable(grid: &Grid<T>, beta1: impl Fn(T) -> T, beta2: impl Fn(T) -> T) -> Result<Self> {
        let b: Vec<Mat2<T>> = (0..grid.len())
            .map(|i| {
                let x = grid.node(i);
                Mat2::diag(beta1(x[0]), beta2(x[1]))
            })
            .collect();
        Self::separable_from_matrices(grid, b)
    }

    /// Per-node friction matrices that must be diagonal with each entry
    /// depending only on its own coordinate.
    pub fn separable_from_matrices(grid: &Grid<T>, b: Vec<Mat2<T>>) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, found: grid.dim() });
        }
        if b.len() != grid.len() {
            return Err(Error::InvalidParameter("one friction matrix per node expected".into()));
        }
        let tol = T::lit(DIAG_TOL);
        for m in &b {
            let off = m.m[0][1].abs().max(m.m[1][0].abs());
            if off > tol {
                return Err(Error::NotDiagonal(off.to_f64_lossy()));
            }
        }
        for (i, m) in b.iter().enumerate() {
            for k in 0..2 {
                let v = m.m[k][k];
                if !(v > T::zero()) || !v.is_finite() {
                    return Err(Error::NonPositiveMobility { node: i, value: v.to_f64_lossy() });
                }
            }
        }
        // β₁ may depend on x₁ only and β₂ on x₂ only.
        let [n0, n1] = [grid.axis(0).n, grid.axis(1).n];
        for j in 0..n1 {
            for i in 0..n0 {
                let m = &b[grid.flat_index(i, j)];
                let r0 = &b[grid.flat_index(i, 0)];
                let c0 = &b[grid.flat_index(0, j)];
                let scale0 = T::one().max(r0.m[0][0].abs());
                let scale1 = T::one().max(c0.m[1][1].abs());
                if (m.m[0][0] - r0.m[0][0]).abs() > T::lit(1e-12) * scale0
                    || (m.m[1][1] - c0.m[1][1]).abs() > T::lit(1e-12) * scale1
                {
                    return Err(Error::UnsupportedMobility(
                        "diagonal friction entries must each depend on their own coordinate".into(),
                    ));
                }
            }
        }
        let b: Vec<Mat2<T>> = b.into_iter().map(|m| Mat2::diag(m.m[0][0], m.m[1][1])).collect();
        let a: Vec<Mat2<T>> = b
            .iter()
            .map(|m| Mat2::diag(T::one() / m.m[0][0], T::one() / m.m[1][1]))
            .collect();
        let c0 = b
            .iter()
            .map(|m| m.m[0][0].min(m.m[1][1]))
            .fold(T::infinity(), T::min);
        Ok(Self {
            grid: grid.clone(),
            a,
            b,
            c0,
            family: MobilityFamily::SeparableDiagonal,
        })
    }

    /// Classifies arbitrary per-node friction matrices into a supported family.
    pub fn from_friction(grid: &Grid<T>, b: Vec<Mat2<T>>) -> Result<Self> {
        if b.len() != grid.len() {
            return Err(Error::InvalidParameter("one friction matrix per node expected".into()));
        }
        let first = b[0];
        let constant = b.iter().all(|m| m.max_diff(&first) <= T::lit(1e-14) * T::one().max(first.m[0][0].abs()));
        if grid.dim() == 1 {
            let v: Vec<T> = b.iter().map(|m| m.m[0][0]).collect();
            if constant {
                let a = first
                    .inverse()
                    .filter(|_| first.m[0][0] > T::zero())
                    .ok_or(Error::NonPositiveMobility { node: 0, value: first.m[0][0].to_f64_lossy() })?;
                return Self::constant(grid, Mat2::scalar(a.m[0][0]));
            }
            return Self::scalar_1d(grid, &v);
        }
        if constant {
            check_spd(&first, 2)?;
            let a = first.inverse().ok_or_else(|| Error::NotSpd("singular".into()))?;
            return Self::constant(grid, a);
        }
        match Self::separable_from_matrices(grid, b) {
            Err(Error::NotDiagonal(_)) => Err(Error::UnsupportedMobility(
                "non-constant friction with off-diagonal entries needs a non-analytic embedding".into(),
            )),
            r => r,
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn family(&self) -> MobilityFamily {
        self.family
    }

    /// Positive lower bound on the eigenvalues of `B`.
    #[inline]
    pub fn c0(&self) -> T {
        self.c0
    }

    #[inline]
    pub fn a(&self, i: usize) -> &Mat2<T> {
        &self.a[i]
    }

    #[inline]
    pub fn b(&self, i: usize) -> &Mat2<T> {
        &self.b[i]
    }

    /// `A[0][0]`; the mobility itself on a line.
    #[inline]
    pub fn a_scalar(&self, i: usize) -> T {
        self.a[i].m[0][0]
    }

    #[inline]
    pub fn b_scalar(&self, i: usize) -> T {
        self.b[i].m[0][0]
    }

    /// Max-norm defect of `A·B − I` over the nodes.
    pub fn inverse_defect(&self) -> T {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| a.mul(b).max_diff(&Mat2::identity()))
            .fold(T::zero(), T::max)
    }
}

/// Which node is pinned to `b = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Anchor {
    /// The origin if it is a node, otherwise the first node.
    #[default]
    Auto,
    /// The origin; fails if the grid has no node there.
    Origin,
    Node(usize),
}

/// Monotone cubic Hermite interpolant of `x` as a function of `b(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneInverse<T: Real> {
    knots: Vec<T>,
    values: Vec<T>,
    slopes: Vec<T>,
}

impl<T: Real> MonotoneInverse<T> {
    /// `knots` strictly increasing, `slopes` the exact derivatives `dx/db`.
    pub fn new(knots: Vec<T>, values: Vec<T>, mut slopes: Vec<T>) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n || slopes.len() != n {
            return Err(Error::InvalidParameter("inverse needs at least two knots".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::NotInvertible("embedding is not strictly increasing".into()));
        }
        // Fritsch-Carlson limiter keeps the interpolant monotone.
        for k in 0..n - 1 {
            let delta = (values[k + 1] - values[k]) / (knots[k + 1] - knots[k]);
            let a = slopes[k] / delta;
            let b = slopes[k + 1] / delta;
            let s = a * a + b * b;
            if s > T::lit(9.0) {
                let t = T::lit(3.0) / s.sqrt();
                slopes[k] = t * a * delta;
                slopes[k + 1] = t * b * delta;
            }
        }
        Ok(Self { knots, values, slopes })
    }

    pub fn domain(&self) -> (T, T) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    /// Evaluates the interpolant; arguments outside the knot range are clamped.
    pub fn eval(&self, y: T) -> T {
        let n = self.knots.len();
        if y <= self.knots[0] {
            return self.values[0];
        }
        if y >= self.knots[n - 1] {
            return self.values[n - 1];
        }
        let k = match self.knots.binary_search_by(|p| p.partial_cmp(&y).unwrap()) {
            Ok(k) => return self.values[k],
            Err(k) => k - 1,
        };
        let h = self.knots[k + 1] - self.knots[k];
        let t = (y - self.knots[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let two = T::two();
        let three = T::lit(3.0);
        let h00 = two * t3 - three * t2 + T::one();
        let h10 = t3 - two * t2 + t;
        let h01 = -two * t3 + three * t2;
        let h11 = t3 - t2;
        h00 * self.values[k] + h10 * h * self.slopes[k] + h01 * self.values[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

/// Node values of an embedding `b`, plus what is needed to invert it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap<T: Real> {
    grid: Grid<T>,
    family: MobilityFamily,
    values: Vec<[T; 2]>,
    jacobians: Vec<Mat2<T>>,
    anchor: usize,
    shift: [T; 2],
    linear: Option<Mat2<T>>,
    axis_inverse: Vec<MonotoneInverse<T>>,
    gram_residual: Option<T>,
}

/// Cumulative composite Simpson integral of node samples `f` with spacing `h`.
pub fn cumulative_simpson<T: Real>(f: &[T], h: T) -> Vec<T> {
    let n = f.len();
    let mut out = vec![T::zero(); n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = h * T::half() * (f[0] + f[1]);
        return out;
    }
    let h12 = h / T::lit(12.0);
    let h3 = h / T::lit(3.0);
    let (five, eight, four) = (T::lit(5.0), T::lit(8.0), T::lit(4.0));
    out[1] = h12 * (five * f[0] + eight * f[1] - f[2]);
    for i in 2..n {
        out[i] = if i % 2 == 0 {
            out[i - 2] + h3 * (f[i - 2] + four * f[i - 1] + f[i])
        } else {
            out[i - 1] + h12 * (-f[i - 2] + eight * f[i - 1] + five * f[i])
        };
    }
    out
}

fn resolve_anchor<T: Real>(grid: &Grid<T>, anchor: Anchor) -> Result<usize> {
    match anchor {
        Anchor::Auto => Ok(grid.origin_node().unwrap_or(0)),
        Anchor::Origin => grid
            .origin_node()
            .ok_or_else(|| Error::AnchorMissing("grid has no node at the origin".into())),
        Anchor::Node(k) if k < grid.len() => Ok(k),
        Anchor::Node(k) => Err(Error::AnchorMissing(format!("node {k} is outside the grid"))),
    }
}

/// Integrates `√β` along one axis, anchored at axis index `k0`.
fn axis_embedding<T: Real>(beta: &[T], h: T, k0: usize) -> Vec<T> {
    let f: Vec<T> = beta.iter().map(|v| v.sqrt()).collect();
    let cum = cumulative_simpson(&f, h);
    let z = cum[k0];
    cum.into_iter().map(|v| v - z).collect()
}

fn axis_inverse<T: Real>(vals: &[T], coords: Vec<T>, beta: &[T]) -> Result<MonotoneInverse<T>> {
    let slopes = beta.iter().map(|v| T::one() / v.sqrt()).collect();
    MonotoneInverse::new(vals.to_vec(), coords, slopes)
}

impl<T: Real> EmbeddingMap<T> {
    /// Builds the embedding for any supported family.
    pub fn build(field: &MobilityField<T>, anchor: Anchor) -> Result<Self> {
        match field.family() {
            MobilityFamily::Scalar1d => {
                let b: Vec<T> = (0..field.grid().len()).map(|i| field.b_scalar(i)).collect();
                Self::build_1d(field.grid(), &b, anchor)
            }
            MobilityFamily::Constant if field.grid().dim() == 1 => {
                let b = vec![field.b_scalar(0); field.grid().len()];
                let mut e = Self::build_1d(field.grid(), &b, anchor)?;
                e.family = MobilityFamily::Constant;
                e.linear = Some(Mat2::diag(field.b_scalar(0).sqrt(), T::one()));
                Ok(e)
            }
            MobilityFamily::Constant => Self::build_constant(*field.a(0), field.grid()),
            MobilityFamily::SeparableDiagonal => Self::build_separable(field, anchor),
        }
    }

    /// `b(x) = ∫√B` on a line.
    pub fn build_1d(grid: &Grid<T>, b: &[T], anchor: Anchor) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, found: grid.dim() });
        }
        if b.len() != grid.len() {
            return Err(Error::InvalidParameter("one friction sample per node expected".into()));
        }
        for (i, &v) in b.iter().enumerate() {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::NonPositiveMobility { node: i, value: v.to_f64_lossy() });
            }
        }
        let k0 = resolve_anchor(grid, anchor)?;
        let vals = axis_embedding(b, grid.h(0), k0);
        let coords: Vec<T> = (0..grid.len()).map(|i| grid.node(i)[0]).collect();
        let inv = axis_inverse(&vals, coords, b)?;
        Ok(Self {
            grid: grid.clone(),
            family: MobilityFamily::Scalar1d,
            values: vals.iter().map(|&v| [v, T::zero()]).collect(),
            jacobians: b.iter().map(|&v| Mat2::diag(v.sqrt(), T::one())).collect(),
            anchor: k0,
            shift: grid.node(k0),
            linear: None,
            axis_inverse: vec![inv],
            gram_residual: None,
        })
    }

    pub fn build_1d_fn(grid: &Grid<T>, b: impl Fn(T) -> T, anchor: Anchor) -> Result<Self> {
        let v: Vec<T> = (0..grid.len()).map(|i| b(grid.node(i)[0])).collect();
        Self::build_1d(grid, &v, anchor)
    }

    /// Linear `b(x) = Mx` with `M` upper triangular and `MᵀM = A⁻¹`.
    pub fn build_constant(a: Mat2<T>, grid: &Grid<T>) -> Result<Self> {
        let field = MobilityField::constant(grid, a)?;
        let bmat = *field.b(0);
        let m = if grid.dim() == 1 {
            Mat2::diag(bmat.m[0][0].sqrt(), T::one())
        } else {
            let sym = Mat2::new(
                bmat.m[0][0],
                (bmat.m[0][1] + bmat.m[1][0]) * T::half(),
                (bmat.m[0][1] + bmat.m[1][0]) * T::half(),
                bmat.m[1][1],
            );
            sym.cholesky_upper()
                .ok_or_else(|| Error::NotSpd("factorization failed".into()))?
        };
        if grid.dim() == 1 {
            let mut e = Self::build_1d(grid, &vec![bmat.m[0][0]; grid.len()], Anchor::Auto)?;
            // The analytic map is exact; replace quadrature values.
            for i in 0..grid.len() {
                e.values[i] = [m.m[0][0] * grid.node(i)[0], T::zero()];
            }
            e.anchor = grid.origin_node().unwrap_or(0);
            e.shift = [T::zero(); 2];
            e.family = MobilityFamily::Constant;
            e.linear = Some(m);
            let coords: Vec<T> = (0..grid.len()).map(|i| grid.node(i)[0]).collect();
            let vals: Vec<T> = e.values.iter().map(|v| v[0]).collect();
            e.axis_inverse = vec![axis_inverse(&vals, coords, &vec![bmat.m[0][0]; grid.len()])?];
            return Ok(e);
        }
        let values = (0..grid.len()).map(|i| m.apply(grid.node(i))).collect();
        Ok(Self {
            grid: grid.clone(),
            family: MobilityFamily::Constant,
            values,
            jacobians: vec![m; grid.len()],
            anchor: grid.origin_node().unwrap_or(0),
            shift: [T::zero(); 2],
            linear: Some(m),
            axis_inverse: vec![],
            gram_residual: None,
        })
    }

    /// Componentwise embeddings for `B = diag(β₁(x₁), β₂(x₂))`.
    pub fn build_separable(field: &MobilityField<T>, anchor: Anchor) -> Result<Self> {
        let grid = field.grid();
        if field.family() != MobilityFamily::SeparableDiagonal {
            if field.family() == MobilityFamily::Constant && grid.dim() == 2 {
                let b = field.b(0);
                let off = b.m[0][1].abs().max(b.m[1][0].abs());
                if off > T::lit(DIAG_TOL) {
                    return Err(Error::NotDiagonal(off.to_f64_lossy()));
                }
            } else {
                return Err(Error::DimensionMismatch { expected: 2, found: grid.dim() });
            }
        }
        let k0 = resolve_anchor(grid, anchor)?;
        let [a0, a1] = grid.multi_index(k0);
        let (n0, n1) = (grid.axis(0).n, grid.axis(1).n);
        let beta1: Vec<T> = (0..n0).map(|i| field.b(grid.flat_index(i, 0)).m[0][0]).collect();
        let beta2: Vec<T> = (0..n1).map(|j| field.b(grid.flat_index(0, j)).m[1][1]).collect();
        let e1 = axis_embedding(&beta1, grid.h(0), a0);
        let e2 = axis_embedding(&beta2, grid.h(1), a1);
        let x1: Vec<T> = (0..n0).map(|i| grid.axis(0).coord(i)).collect();
        let x2: Vec<T> = (0..n1).map(|j| grid.axis(1).coord(j)).collect();
        let inv1 = axis_inverse(&e1, x1, &beta1)?;
        let inv2 = axis_inverse(&e2, x2, &beta2)?;
        let mut values = Vec::with_capacity(grid.len());
        let mut jacobians = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let [i, j] = grid.multi_index(idx);
            values.push([e1[i], e2[j]]);
            jacobians.push(Mat2::diag(beta1[i].sqrt(), beta2[j].sqrt()));
        }
        Ok(Self {
            grid: grid.clone(),
            family: MobilityFamily::SeparableDiagonal,
            values,
            jacobians,
            anchor: k0,
            shift: grid.node(k0),
            linear: None,
            axis_inverse: vec![inv1, inv2],
            gram_residual: None,
        })
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn family(&self) -> MobilityFamily {
        self.family
    }

    /// Embedding dimension (always equal to the grid dimension here).
    #[inline]
    pub fn q(&self) -> usize {
        self.grid.dim()
    }

    #[inline]
    pub fn value(&self, i: usize) -> [T; 2] {
        self.values[i]
    }

    pub fn values(&self) -> &[[T; 2]] {
        &self.values
    }

    /// First component of every node value; the embedded line in 1D.
    pub fn line_values(&self) -> Vec<T> {
        self.values.iter().map(|v| v[0]).collect()
    }

    /// Exact Jacobian `∇b` at a node.
    #[inline]
    pub fn jacobian(&self, i: usize) -> &Mat2<T> {
        &self.jacobians[i]
    }

    #[inline]
    pub fn anchor(&self) -> usize {
        self.anchor
    }

    /// Coordinates of the anchor node; zero when anchored at the origin.
    #[inline]
    pub fn shift(&self) -> [T; 2] {
        self.shift
    }

    pub fn is_linear(&self) -> bool {
        self.linear.is_some()
    }

    pub fn gram_residual(&self) -> Option<T> {
        self.gram_residual
    }

    pub fn has_inverse(&self) -> bool {
        self.linear.is_some() || !self.axis_inverse.is_empty()
    }

    /// Squared embedded distance between two nodes.
    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> T {
        let a = self.values[i];
        let b = self.values[j];
        let d0 = a[0] - b[0];
        let d1 = a[1] - b[1];
        d0 * d0 + d1 * d1
    }

    /// Maps an embedded point back to physical coordinates.
    pub fn invert(&self, y: [T; 2]) -> Result<[T; 2]> {
        if !self.axis_inverse.is_empty() {
            let x0 = self.axis_inverse[0].eval(y[0]);
            let x1 = if self.grid.dim() == 2 {
                self.axis_inverse[1].eval(y[1])
            } else {
                T::zero()
            };
            return Ok([x0, x1]);
        }
        if let Some(m) = &self.linear {
            let inv = m
                .inverse()
                .ok_or_else(|| Error::NotInvertible("singular linear embedding".into()))?;
            return Ok(inv.apply(y));
        }
        Err(Error::NotInvertible(format!("{:?} embedding has no inverse", self.family)))
    }

    /// Runs [`verify_embedding`] and stores the residual.
    pub fn verify(&mut self, field: &MobilityField<T>) -> Result<T> {
        let r = verify_embedding(self, field)?;
        self.gram_residual = Some(r);
        Ok(r)
    }

    /// `min |b(x)|² / |x|²` over nodes other than the origin. Only meaningful
    /// when anchored at the origin.
    pub fn coercivity_ratio(&self) -> T {
        let mut r = T::infinity();
        for i in 0..self.grid.len() {
            let x = self.grid.node(i);
            let nx = x[0] * x[0] + x[1] * x[1];
            if nx <= T::lit(1e-24) {
                continue;
            }
            let b = self.values[i];
            r = r.min((b[0] * b[0] + b[1] * b[1]) / nx);
        }
        r
    }
}

/// Max over interior nodes of `‖(D_h b)ᵀ(D_h b) − B‖_max` with central
/// differences.
pub fn verify_embedding<T: Real>(b: &EmbeddingMap<T>, field: &MobilityField<T>) -> Result<T> {
    b.grid.check_same(field.grid())?;
    let g = &b.grid;
    let d = g.dim();
    let mut res = T::zero();
    for idx in 0..g.len() {
        if g.is_boundary(idx) {
            continue;
        }
        let m = g.multi_index(idx);
        // Column k of the Jacobian is ∂b/∂x_k.
        let mut jac = [[T::zero(); 2]; 2];
        for k in 0..d {
            let (mut lo, mut hi) = (m, m);
            lo[k] -= 1;
            hi[k] += 1;
            let vl = b.values[g.flat_index(lo[0], lo[1])];
            let vh = b.values[g.flat_index(hi[0], hi[1])];
            let two_h = T::two() * g.h(k);
            for r in 0..d {
                jac[r][k] = (vh[r] - vl[r]) / two_h;
            }
        }
        let bm = field.b(idx);
        for p in 0..d {
            for q in 0..d {
                let mut s = T::zero();
                for r in 0..d {
                    s = s + jac[r][p] * jac[r][q];
                }
                res = res.max((s - bm.m[p][q]).abs());
            }
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize) -> Grid<f64> {
        Grid::line(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn identity_and_scaling() {
        let g = line(11);
        let e = EmbeddingMap::build_1d_fn(&g, |_| 1.0, Anchor::Origin).unwrap();
        for i in 0..11 {
            assert!((e.value(i)[0] - g.node(i)[0]).abs() < 1e-15);
        }
        let e = EmbeddingMap::build_1d_fn(&g, |_| 4.0, Anchor::Origin).unwrap();
        for i in 0..11 {
            assert!((e.value(i)[0] - 2.0 * g.node(i)[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn exponential_matches_gauss_quadrature() {
        // independent oracle: 5-point Gauss-Legendre per cell of ∫ e^s ds
        let gl_x = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        let gl_w = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let n = 2048;
        let g = line(n);
        let e = EmbeddingMap::build_1d_fn(&g, |x| (2.0 * x).exp(), Anchor::Origin).unwrap();
        let h = g.h(0);
        let mut acc = 0.0;
        let mut err: f64 = 0.0;
        for i in 1..n {
            let a = g.node(i - 1)[0];
            let mut s = 0.0;
            for k in 0..5 {
                s += gl_w[k] * (a + 0.5 * h * (1.0 + gl_x[k])).exp();
            }
            acc += 0.5 * h * s;
            err = err.max((e.value(i)[0] - acc).abs());
        }
        assert!(err <= 1e-8, "err {err}");
    }

    #[test]
    fn missing_origin_and_nonpositive() {
        let g = Grid::line(0.5, 1.5, 9).unwrap();
        assert!(matches!(
            EmbeddingMap::build_1d_fn(&g, |_| 1.0, Anchor::Origin),
            Err(Error::AnchorMissing(_))
        ));
        let e = EmbeddingMap::build_1d_fn(&g, |_| 1.0, Anchor::Auto).unwrap();
        assert_eq!(e.anchor(), 0);
        assert_eq!(e.shift()[0], 0.5);
        let g = line(5);
        assert!(matches!(
            EmbeddingMap::build_1d(&g, &[1.0, 1.0, 0.0, 1.0, 1.0], Anchor::Auto),
            Err(Error::NonPositiveMobility { node: 2, .. })
        ));
    }

    #[test]
    fn constant_2d_factorization() {
        let g = Grid::<f64>::rect((-1.0, 1.0, 9), (-1.0, 1.0, 9)).unwrap();
        let e = EmbeddingMap::build_constant(Mat2::diag(4.0, 1.0), &g).unwrap();
        for i in 0..g.len() {
            let x = g.node(i);
            let v = e.value(i);
            assert!((v[0] - x[0] / 2.0).abs() < 1e-15 && (v[1] - x[1]).abs() < 1e-15);
        }
        let bmat = Mat2::new(2.0, 1.0, 1.0, 2.0);
        let a = bmat.inverse().unwrap();
        let field = MobilityField::constant(&g, a).unwrap();
        let mut e = EmbeddingMap::build(&field, Anchor::Auto).unwrap();
        let m = *e.jacobian(0);
        assert!(m.m[1][0] == 0.0);
        assert!(m.transpose().mul(&m).max_diff(&bmat) <= 1e-12);
        assert!(e.verify(&field).unwrap() <= 1e-12);
        assert!(field.inverse_defect() <= 1e-12);
        let bad = Mat2::new(1.0, 2.0, 2.0, 1.0);
        assert!(matches!(EmbeddingMap::build_constant(bad, &g), Err(Error::NotSpd(_))));
    }

    #[test]
    fn separable_examples() {
        let g = Grid::<f64>::rect((0.0, 1.0, 17), (0.0, 1.0, 9)).unwrap();
        let f = MobilityField::separable(&g, |_| 4.0, |_| 1.0).unwrap();
        let e = EmbeddingMap::build(&f, Anchor::Origin).unwrap();
        for i in 0..g.len() {
            let x = g.node(i);
            assert!((e.value(i)[0] - 2.0 * x[0]).abs() < 1e-14);
            assert!((e.value(i)[1] - x[1]).abs() < 1e-14);
        }
        let f = MobilityField::separable(&g, |x: f64| (2.0 * x).exp(), |_| 1.0).unwrap();
        let e = EmbeddingMap::build(&f, Anchor::Origin).unwrap();
        for i in 0..g.len() {
            let x = g.node(i);
            let err = (e.value(i)[0] - (x[0].exp() - 1.0)).abs();
            assert!(err < 5e-6, "err {err}");
        }
        let mut m = vec![Mat2::diag(1.0, 1.0); g.len()];
        m[3].m[0][1] = 1e-13;
        assert!(matches!(
            MobilityField::separable_from_matrices(&g, m),
            Err(Error::NotDiagonal(_))
        ));
    }

    #[test]
    fn general_field_rejected() {
        let g = Grid::rect((0.0, 1.0, 5), (0.0, 1.0, 5)).unwrap();
        let b = (0..g.len())
            .map(|i| {
                let x = g.node(i);
                Mat2::new(2.0 + x[0], 0.3 * x[1], 0.3 * x[1], 2.0)
            })
            .collect();
        assert!(matches!(
            MobilityField::from_friction(&g, b),
            Err(Error::UnsupportedMobility(_))
        ));
        // β₁ depending on x₂ is also outside the separable family
        let b = (0..g.len())
            .map(|i| Mat2::diag(1.0 + g.node(i)[1], 1.0))
            .collect();
        assert!(matches!(
            MobilityField::from_friction(&g, b),
            Err(Error::UnsupportedMobility(_))
        ));
    }

    #[test]
    fn gram_residual_second_order() {
        let r = |n: usize| {
            let g = line(n);
            let f = MobilityField::scalar_1d_fn(&g, |x| (2.0 * x).exp()).unwrap();
            let e = EmbeddingMap::build(&f, Anchor::Origin).unwrap();
            verify_embedding(&e, &f).unwrap()
        };
        let ratio = r(65) / r(129);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn inverse_hits_knots_and_is_monotone() {
        let g = line(33);
        let e = EmbeddingMap::build_1d_fn(&g, |x| (2.0 * x).exp(), Anchor::Origin).unwrap();
        for i in 0..g.len() {
            assert!((e.invert(e.value(i)).unwrap()[0] - g.node(i)[0]).abs() < 1e-10);
        }
        let mut prev = -1.0;
        for k in 0..=1000 {
            let y = (1f64.exp() - 1.0) * k as f64 / 1000.0;
            let x = e.invert([y, 0.0]).unwrap()[0];
            assert!(x >= prev);
            // smooth exact inverse ln(1+y)
            assert!((x - (1.0 + y).ln()).abs() < 1e-5);
            prev = x;
        }
    }

    proptest! {
        #[test]
        fn embedding_1d_properties(
            amp in 0.0f64..1.5,
            freq in 0.5f64..4.0,
            n in 9usize..80,
            lo in -1.0f64..-0.1,
        ) {
            let g = Grid::line(lo, lo + 2.0, n).unwrap();
            let beta = move |x: f64| 1.0 + amp * (freq * x).sin().powi(2);
            let f = MobilityField::scalar_1d_fn(&g, beta).unwrap();
            let e = EmbeddingMap::build(&f, Anchor::Auto).unwrap();
            let v = e.line_values();
            prop_assert!(v.windows(2).all(|w| w[1] > w[0]));
            for i in 0..n {
                prop_assert!((e.invert(e.value(i)).unwrap()[0] - g.node(i)[0]).abs() <= 1e-10);
            }
            if g.origin_node().is_some() {
                prop_assert!(e.coercivity_ratio() >= f.c0() * (1.0 - 1e-9));
            }
        }
    }
}
