//! The weighted transport distance: cost assembly, Kantorovich solvers,
//! geodesics, the dynamic action and the tangent-space pairing.
//!
//! The distance is normalised with unit time horizon, so `wa_squared` is the
//! plain optimal value of `Σ π_ij |b(x_i) − b(x_j)|²`.

mod action;
mod cost;
mod entropic;
mod exact;
mod geodesic;
mod oned;
mod tangent;

use serde::{Deserialize, Serialize};

pub use action::{dynamic_action, velocities_from_path, ActionReport};
pub use cost::{cost_matrix, CostMatrix, MAX_DENSE_NODES};
pub use entropic::{solve_kantorovich_entropic, EntropicOptions};
pub use exact::{solve_kantorovich_exact, MAX_EXACT_NODES};
pub use geodesic::{deposit, geodesic_interpolate, geodesic_path};
pub use oned::{quantile_coupling, wa_distance_1d};
pub use tangent::{minimality_check, optimal_velocity, potential, tangent_pairing, MinimalityReport};

use crate::error::{Error, Result};
use crate::grid::Density;
use crate::linalg::DMat;
use crate::scalar::{pairwise_sum, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactLp,
    Entropic,
    ClosedForm1d,
}

/// Nonnegative transport plan between two densities on the same grid,
/// stored as a list of `(source, target, mass)` atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling<T: Real> {
    atoms: Vec<(usize, usize, T)>,
    row_marginal: Density<T>,
    col_marginal: Density<T>,
    transport_cost: T,
    marginal_defect: T,
    dual_phi: Option<Vec<T>>,
    dual_psi: Option<Vec<T>>,
}

impl<T: Real> Coupling<T> {
    pub(crate) fn new(
        atoms: Vec<(usize, usize, T)>,
        rho0: &Density<T>,
        rho1: &Density<T>,
        cost: impl Fn(usize, usize) -> T,
        duals: Option<(Vec<T>, Vec<T>)>,
    ) -> Self {
        let terms: Vec<T> = atoms.iter().map(|&(i, j, m)| m * cost(i, j)).collect();
        let transport_cost = pairwise_sum(&terms);
        let mut c = Self {
            atoms,
            row_marginal: rho0.clone(),
            col_marginal: rho1.clone(),
            transport_cost,
            marginal_defect: T::zero(),
            dual_phi: None,
            dual_psi: None,
        };
        c.marginal_defect = c.measure_marginal_defect();
        if let Some((phi, psi)) = duals {
            c.dual_phi = Some(phi);
            c.dual_psi = Some(psi);
        }
        c
    }

    /// Sum of absolute row and column mass defects.
    fn measure_marginal_defect(&self) -> T {
        let n = self.row_marginal.len();
        let mut rows = vec![T::zero(); n];
        let mut cols = vec![T::zero(); n];
        for &(i, j, m) in &self.atoms {
            rows[i] = rows[i] + m;
            cols[j] = cols[j] + m;
        }
        let mut d = T::zero();
        for i in 0..n {
            d = d + (rows[i] - self.row_marginal.mass(i)).abs();
            d = d + (cols[i] - self.col_marginal.mass(i)).abs();
        }
        d
    }

    pub fn atoms(&self) -> &[(usize, usize, T)] {
        &self.atoms
    }

    /// Atoms with mass above `threshold`.
    pub fn support(&self, threshold: T) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.atoms.iter().copied().filter(move |a| a.2 > threshold)
    }

    pub fn row_marginal(&self) -> &Density<T> {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &Density<T> {
        &self.col_marginal
    }

    /// `⟨c, π⟩`.
    pub fn transport_cost(&self) -> T {
        self.transport_cost
    }

    pub fn marginal_defect(&self) -> T {
        self.marginal_defect
    }

    pub fn dual_phi(&self) -> Option<&[T]> {
        self.dual_phi.as_deref()
    }

    pub fn dual_psi(&self) -> Option<&[T]> {
        self.dual_psi.as_deref()
    }

    pub fn duals(&self) -> Result<(&[T], &[T])> {
        match (&self.dual_phi, &self.dual_psi) {
            (Some(p), Some(q)) => Ok((p, q)),
            _ => Err(Error::MissingDuals),
        }
    }

    /// Dense `n × n` plan.
    pub fn dense(&self) -> DMat<T> {
        let n = self.row_marginal.len();
        let mut m = DMat::zeros(n, n);
        for &(i, j, v) in &self.atoms {
            m[(i, j)] = m[(i, j)] + v;
        }
        m
    }

    /// Largest violation of `φ_i + ψ_j ≤ c_ij` over all pairs, and of
    /// equality over support atoms above `threshold`.
    pub fn dual_violation(&self, cost: &CostMatrix<T>, threshold: T) -> Result<(T, T)> {
        let (phi, psi) = self.duals()?;
        let n = phi.len();
        let mut feas = T::zero();
        for i in 0..n {
            for j in 0..n {
                feas = feas.max(phi[i] + psi[j] - cost.get(i, j));
            }
        }
        let mut slack = T::zero();
        for (i, j, _) in self.support(threshold) {
            slack = slack.max((cost.get(i, j) - phi[i] - psi[j]).abs());
        }
        Ok((feas, slack))
    }

    /// Swaps source and target.
    pub fn transposed(&self) -> Self {
        Self {
            atoms: self.atoms.iter().map(|&(i, j, m)| (j, i, m)).collect(),
            row_marginal: self.col_marginal.clone(),
            col_marginal: self.row_marginal.clone(),
            transport_cost: self.transport_cost,
            marginal_defect: self.marginal_defect,
            dual_phi: self.dual_psi.clone(),
            dual_psi: self.dual_phi.clone(),
        }
    }
}

/// Outcome of a distance computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DistanceReport<T: Real> {
    pub wa_squared: T,
    pub method: Method,
    pub dual_value: Option<T>,
    pub gap: Option<T>,
    pub marginal_defect: T,
    pub iterations: usize,
    pub converged: bool,
}

/// `Σ φ_i p_i + Σ ψ_j q_j` with masses `p`, `q`.
pub(crate) fn dual_objective<T: Real>(phi: &[T], psi: &[T], p: &Density<T>, q: &Density<T>) -> T {
    let terms: Vec<T> = (0..phi.len())
        .map(|i| phi[i] * p.mass(i) + psi[i] * q.mass(i))
        .collect();
    pairwise_sum(&terms)
}

pub(crate) fn check_marginals<T: Real>(rho0: &Density<T>, rho1: &Density<T>) -> Result<()> {
    rho0.grid().check_same(rho1.grid())?;
    let (a, b) = (rho0.total_mass(), rho1.total_mass());
    if (a - b).abs() > T::lit(1e-10) {
        return Err(Error::InfeasibleMarginals(a.to_f64_lossy(), b.to_f64_lossy()));
    }
    Ok(())
}
