//! Uniform rectangular grids on boxes in one or two dimensions and the
//! densities that live on them.
//!
//! Nodes sit at `min + i*h` along each axis. Each node owns a control volume
//! of width `h` (halved on the boundary), so the weights of all nodes sum to
//! the volume of the box and densities are stored per unit volume.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Real};

/// Mass tolerance used when validating densities.
pub fn mass_tolerance<T: Real>() -> T {
    T::lit(1e-12).max(T::lit(1e3) * T::epsilon())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Axis<T: Real> {
    pub min: T,
    pub max: T,
    pub n: usize,
}

impl<T: Real> Axis<T> {
    #[inline]
    pub fn h(&self) -> T {
        (self.max - self.min) / T::from_usize_lossy(self.n - 1)
    }

    #[inline]
    pub fn coord(&self, i: usize) -> T {
        self.min + T::from_usize_lossy(i) * self.h()
    }

    #[inline]
    fn weight(&self, i: usize) -> T {
        if i == 0 || i + 1 == self.n {
            self.h() * T::half()
        } else {
            self.h()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Grid<T: Real> {
    axes: Vec<Axis<T>>,
}

impl<T: Real> Grid<T> {
    pub fn new(axes: Vec<Axis<T>>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {}",
                axes.len()
            )));
        }
        for (k, a) in axes.iter().enumerate() {
            if a.n < 2 {
                return Err(Error::InvalidGrid(format!("axis {k} needs at least 2 nodes")));
            }
            if !(a.max > a.min) || !a.min.is_finite() || !a.max.is_finite() {
                return Err(Error::InvalidGrid(format!("axis {k} has an empty extent")));
            }
        }
        Ok(Self { axes })
    }

    pub fn line(min: T, max: T, n: usize) -> Result<Self> {
        Self::new(vec![Axis { min, max, n }])
    }

    pub fn rect(x: (T, T, usize), y: (T, T, usize)) -> Result<Self> {
        Self::new(vec![
            Axis { min: x.0, max: x.1, n: x.2 },
            Axis { min: y.0, max: y.1, n: y.2 },
        ])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    #[inline]
    pub fn axes(&self) -> &[Axis<T>] {
        &self.axes
    }

    #[inline]
    pub fn axis(&self, k: usize) -> &Axis<T> {
        &self.axes[k]
    }

    /// Total number of nodes.
    #[inline]
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn h(&self, axis: usize) -> T {
        self.axes[axis].h()
    }

    /// Product of the spacings.
    pub fn cell_volume(&self) -> T {
        self.axes.iter().fold(T::one(), |acc, a| acc * a.h())
    }

    /// Smallest spacing over the axes.
    pub fn min_spacing(&self) -> T {
        self.axes.iter().map(|a| a.h()).fold(T::infinity(), T::min)
    }

    /// Axis indices of a flat node index (axis 0 runs fastest).
    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let n0 = self.axes[0].n;
        [idx % n0, idx / n0]
    }

    #[inline]
    pub fn flat_index(&self, i: usize, j: usize) -> usize {
        i + self.axes[0].n * j
    }

    /// Node coordinates; the second component is zero on a line.
    #[inline]
    pub fn node(&self, idx: usize) -> [T; 2] {
        let [i, j] = self.multi_index(idx);
        let x = self.axes[0].coord(i);
        let y = if self.dim() == 2 { self.axes[1].coord(j) } else { T::zero() };
        [x, y]
    }

    pub fn nodes(&self) -> Vec<[T; 2]> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Control-volume weight of a node.
    #[inline]
    pub fn weight(&self, idx: usize) -> T {
        let [i, j] = self.multi_index(idx);
        let mut w = self.axes[0].weight(i);
        if self.dim() == 2 {
            w = w * self.axes[1].weight(j);
        }
        w
    }

    pub fn weights(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// Volume of the box (sum of all weights).
    pub fn volume(&self) -> T {
        self.axes.iter().fold(T::one(), |acc, a| acc * (a.max - a.min))
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let m = self.multi_index(idx);
        (0..self.dim()).any(|k| m[k] == 0 || m[k] + 1 == self.axes[k].n)
    }

    /// Node located at the origin, if the grid has one.
    pub fn origin_node(&self) -> Option<usize> {
        let mut m = [0usize; 2];
        for (k, a) in self.axes.iter().enumerate() {
            let t = -a.min / a.h();
            let r = t.round();
            if r < T::zero() || r > T::from_usize_lossy(a.n - 1) {
                return None;
            }
            if (t - r).abs() > T::lit(1e-9) {
                return None;
            }
            m[k] = r.to_usize().unwrap_or(0);
        }
        Some(self.flat_index(m[0], m[1]))
    }

    /// Index of the node nearest to `x` (clamped to the box).
    pub fn nearest_node(&self, x: [T; 2]) -> usize {
        let mut m = [0usize; 2];
        for (k, a) in self.axes.iter().enumerate() {
            let t = ((x[k] - a.min) / a.h()).round();
            let t = t.max(T::zero()).min(T::from_usize_lossy(a.n - 1));
            m[k] = t.to_usize().unwrap_or(0);
        }
        self.flat_index(m[0], m[1])
    }

    pub(crate) fn check_same(&self, other: &Grid<T>) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Nonnegative density of unit mass on a grid (values per unit volume).
#[derive(Debug, Clone, PartialEq)]
pub struct Density<T: Real> {
    grid: Grid<T>,
    values: Vec<T>,
    total_mass: T,
}

impl<T: Real> Density<T> {
    /// Validates nonnegativity and unit mass.
    pub fn new(grid: Grid<T>, values: Vec<T>) -> Result<Self> {
        let d = Self::unchecked(grid, values)?;
        if (d.total_mass - T::one()).abs() > mass_tolerance::<T>() {
            return Err(Error::InvalidDensity(format!(
                "total mass {} differs from 1",
                d.total_mass
            )));
        }
        Ok(d)
    }

    /// Rescales nonnegative values to unit mass.
    pub fn normalized(grid: Grid<T>, values: Vec<T>) -> Result<Self> {
        let d = Self::unchecked(grid, values)?;
        if !(d.total_mass > T::zero()) {
            return Err(Error::InvalidDensity("zero total mass".into()));
        }
        let s = d.total_mass;
        let values: Vec<T> = d.values.into_iter().map(|v| v / s).collect();
        Self::unchecked(d.grid, values)
    }

    /// Builds a density from per-node masses summing to one.
    pub fn from_masses(grid: Grid<T>, masses: &[T]) -> Result<Self> {
        if masses.len() != grid.len() {
            return Err(Error::InvalidDensity("length does not match grid".into()));
        }
        let values = masses
            .iter()
            .enumerate()
            .map(|(i, &m)| m / grid.weight(i))
            .collect();
        Self::new(grid, values)
    }

    /// Like [`Density::from_masses`] but rescales to unit mass.
    pub fn from_masses_normalized(grid: Grid<T>, masses: &[T]) -> Result<Self> {
        if masses.len() != grid.len() {
            return Err(Error::InvalidDensity("length does not match grid".into()));
        }
        let values = masses
            .iter()
            .enumerate()
            .map(|(i, &m)| m / grid.weight(i))
            .collect();
        Self::normalized(grid, values)
    }

    /// Samples `f` at the nodes and normalises.
    pub fn from_fn(grid: Grid<T>, f: impl Fn([T; 2]) -> T) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        Self::normalized(grid, values)
    }

    pub fn uniform(grid: Grid<T>) -> Self {
        let v = T::one() / grid.volume();
        let values = vec![v; grid.len()];
        Self::unchecked(grid, values).expect("uniform density is valid")
    }

    fn unchecked(grid: Grid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidDensity(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= T::zero()) || !v.is_finite())
        {
            return Err(Error::InvalidDensity(format!("value {v} at node {i}")));
        }
        let masses: Vec<T> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| v * grid.weight(i))
            .collect();
        let total_mass = pairwise_sum(&masses);
        Ok(Self { grid, values, total_mass })
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn total_mass(&self) -> T {
        self.total_mass
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn mass(&self, i: usize) -> T {
        self.values[i] * self.grid.weight(i)
    }

    pub fn masses(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.mass(i)).collect()
    }

    /// `sum_i f(x_i) rho_i w_i`.
    pub fn integrate(&self, f: impl Fn([T; 2]) -> T) -> T {
        let terms: Vec<T> = (0..self.len())
            .map(|i| f(self.grid.node(i)) * self.mass(i))
            .collect();
        pairwise_sum(&terms)
    }

    pub fn l1_distance(&self, other: &Density<T>) -> Result<T> {
        self.grid.check_same(&other.grid)?;
        let terms: Vec<T> = (0..self.len())
            .map(|i| (self.values[i] - other.values[i]).abs() * self.grid.weight(i))
            .collect();
        Ok(pairwise_sum(&terms))
    }

    /// `(1-s) self + s other`.
    pub fn mix(&self, other: &Density<T>, s: T) -> Result<Density<T>> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (T::one() - s) * a + s * b)
            .collect();
        Density::normalized(self.grid.clone(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_volume() {
        let g = Grid::<f64>::line(0.0, 1.0, 11).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        let g2 = Grid::<f64>::rect((0.0, 2.0, 5), (-1.0, 1.0, 7)).unwrap();
        let s2: f64 = g2.weights().iter().sum();
        assert!((s2 - 4.0).abs() < 1e-14);
        assert!((g2.cell_volume() - 0.5 * (1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn node_coordinates_reproducible() {
        let g = Grid::<f64>::rect((-1.0, 1.0, 5), (0.0, 3.0, 4)).unwrap();
        let idx = g.flat_index(3, 2);
        assert_eq!(g.node(idx), [-1.0 + 3.0 * 0.5, 2.0]);
        assert_eq!(g.multi_index(idx), [3, 2]);
        assert_eq!(g.origin_node(), Some(g.flat_index(2, 0)));
    }

    #[test]
    fn rejects_degenerate_axes() {
        assert!(Grid::<f64>::line(0.0, 1.0, 1).is_err());
        assert!(Grid::<f64>::line(1.0, 1.0, 4).is_err());
        assert!(Grid::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn density_validation() {
        let g = Grid::<f64>::line(0.0, 1.0, 5).unwrap();
        assert!(Density::new(g.clone(), vec![1.0; 5]).is_ok());
        assert!(Density::new(g.clone(), vec![2.0; 5]).is_err());
        assert!(Density::new(g.clone(), vec![1.0, -1.0, 1.0, 1.0, 1.0]).is_err());
        let d = Density::normalized(g.clone(), vec![3.0; 5]).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-15);
        assert!(Density::normalized(g, vec![0.0; 5]).is_err());
    }

    #[test]
    fn mixture_and_l1() {
        let g = Grid::<f64>::line(0.0, 1.0, 3).unwrap();
        let a = Density::from_masses(g.clone(), &[1.0, 0.0, 0.0]).unwrap();
        let b = Density::from_masses(g, &[0.0, 0.0, 1.0]).unwrap();
        assert!((a.l1_distance(&b).unwrap() - 2.0).abs() < 1e-15);
        let m = a.mix(&b, 0.25).unwrap();
        assert!((m.mass(0) - 0.75).abs() < 1e-15);
    }
}
