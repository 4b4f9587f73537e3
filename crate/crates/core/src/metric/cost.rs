use rayon::prelude::*;

use crate::embedding::EmbeddingMap;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;

/// Largest grid for which a dense cost matrix is assembled.
pub const MAX_DENSE_NODES: usize = 20_000;

/// Dense symmetric matrix `c_ij = |b(x_i) − b(x_j)|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T: Real> {
    grid: Grid<T>,
    n: usize,
    data: Vec<T>,
}

impl<T: Real> CostMatrix<T> {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::zero(), T::max)
    }

    /// Median over pairs of grid neighbours along each axis.
    pub fn median_neighbour_cost(&self) -> T {
        let g = &self.grid;
        let mut v = Vec::new();
        for idx in 0..g.len() {
            let m = g.multi_index(idx);
            for k in 0..g.dim() {
                if m[k] + 1 < g.axis(k).n {
                    let mut m2 = m;
                    m2[k] += 1;
                    v.push(self.get(idx, g.flat_index(m2[0], m2[1])));
                }
            }
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    /// Builds a cost matrix from explicit entries (used for scaled costs).
    pub fn from_fn(grid: &Grid<T>, f: impl Fn(usize, usize) -> T + Sync) -> Result<Self> {
        let n = grid.len();
        if n > MAX_DENSE_NODES {
            return Err(Error::SizeExceeded { size: n, limit: MAX_DENSE_NODES });
        }
        let mut data = vec![T::zero(); n * n];
        data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, e) in row.iter_mut().enumerate() {
                *e = f(i, j);
            }
        });
        Ok(Self { grid: grid.clone(), n, data })
    }
}

pub fn cost_matrix<T: Real>(b: &EmbeddingMap<T>) -> Result<CostMatrix<T>> {
    CostMatrix::from_fn(b.grid(), |i, j| b.cost(i, j))
}
