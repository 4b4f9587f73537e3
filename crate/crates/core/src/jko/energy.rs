use crate::embedding::EmbeddingMap;
use crate::error::{Error, Result};
use crate::grid::{Density, Grid};
use crate::scalar::{pairwise_sum, xlogx, Real};

/// Free energy `F(ρ) = ∫ ρ log ρ + ρ Ψ`; linear diffusion plus confinement.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySpec<T: Real> {
    grid: Grid<T>,
    psi: Vec<T>,
    grad_psi: Vec<[T; 2]>,
}

impl<T: Real> EnergySpec<T> {
    /// `Ψ` sampled at the nodes; its gradient is taken by finite differences
    /// (central inside, one-sided on the boundary).
    pub fn new(grid: &Grid<T>, psi: Vec<T>) -> Result<Self> {
        if psi.len() != grid.len() {
            return Err(Error::InvalidParameter("one confinement value per node expected".into()));
        }
        if let Some((i, v)) = psi.iter().enumerate().find(|(_, v)| !(**v >= T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("confinement must be finite and >= 0, got {v} at node {i}")));
        }
        let grad_psi = (0..grid.len())
            .map(|idx| {
                let m = grid.multi_index(idx);
                let mut gr = [T::zero(); 2];
                for k in 0..grid.dim() {
                    let n = grid.axis(k).n;
                    let (lo, hi) = if m[k] == 0 {
                        (0, 1)
                    } else if m[k] + 1 == n {
                        (n - 2, n - 1)
                    } else {
                        (m[k] - 1, m[k] + 1)
                    };
                    let (mut a, mut b) = (m, m);
                    a[k] = lo;
                    b[k] = hi;
                    let d = T::from_usize_lossy(hi - lo) * grid.h(k);
                    gr[k] = (psi[grid.flat_index(b[0], b[1])] - psi[grid.flat_index(a[0], a[1])]) / d;
                }
                gr
            })
            .collect();
        Ok(Self { grid: grid.clone(), psi, grad_psi })
    }

    pub fn from_fn(grid: &Grid<T>, psi: impl Fn([T; 2]) -> T) -> Result<Self> {
        Self::new(grid, (0..grid.len()).map(|i| psi(grid.node(i))).collect())
    }

    pub fn zero(grid: &Grid<T>) -> Self {
        Self::new(grid, vec![T::zero(); grid.len()]).expect("zero confinement is valid")
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn psi(&self) -> &[T] {
        &self.psi
    }

    pub fn grad_psi(&self, i: usize) -> [T; 2] {
        self.grad_psi[i]
    }

    /// `Σ (ρ log ρ + ρ Ψ) w` with `0 log 0 = 0`.
    pub fn free_energy(&self, rho: &Density<T>) -> T {
        let g = rho.grid();
        let v = rho.values();
        let t: Vec<T> = (0..v.len())
            .map(|i| (xlogx(v[i]) + v[i] * self.psi[i]) * g.weight(i))
            .collect();
        pairwise_sum(&t)
    }

    /// `e^{−Ψ}/Z` and `log Z`; its free energy is `−log Z`, the minimum of `F`.
    pub fn gibbs(&self) -> (Density<T>, T) {
        let m = self.psi.iter().copied().fold(T::infinity(), T::min);
        let vals: Vec<T> = self.psi.iter().map(|&p| (m - p).exp()).collect();
        let z: Vec<T> = (0..vals.len()).map(|i| vals[i] * self.grid.weight(i)).collect();
        let zs = pairwise_sum(&z);
        let log_z = zs.ln() - m;
        let d = Density::normalized(self.grid.clone(), vals).expect("Gibbs density is valid");
        (d, log_z)
    }

    /// `inf F = F(Gibbs) = −log Z`.
    pub fn min_free_energy(&self) -> T {
        -self.gibbs().1
    }
}

/// `S(ρ) = Σ ρ log ρ w`.
pub fn entropy<T: Real>(rho: &Density<T>) -> T {
    let g = rho.grid();
    let t: Vec<T> = rho
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| xlogx(v) * g.weight(i))
        .collect();
    pairwise_sum(&t)
}

/// `M_b(ρ) = Σ |b(x)|² ρ w`.
pub fn embedded_moment<T: Real>(rho: &Density<T>, b: &EmbeddingMap<T>) -> T {
    let t: Vec<T> = (0..rho.len())
        .map(|i| {
            let y = b.value(i);
            (y[0] * y[0] + y[1] * y[1]) * rho.mass(i)
        })
        .collect();
    pairwise_sum(&t)
}

/// `free_energy` without building an [`EnergySpec`].
pub fn free_energy<T: Real>(rho: &Density<T>, e: &EnergySpec<T>) -> T {
    e.free_energy(rho)
}
