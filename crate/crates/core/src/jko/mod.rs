//! Minimizing-movement (JKO) scheme `ρⁿ⁺¹ = argmin (1/2τ) W_A(ρⁿ, ρ)² + F(ρ)`
//! for `F(ρ) = ∫ ρ log ρ + ρ Ψ`.
//!
//! Each step is solved over couplings `π` with row marginal `ρⁿ`; the new
//! density is the column marginal. Two inner solvers are provided: an
//! entropy-regularised one for production runs and a slow unregularised one
//! (at most 64 nodes) that serves as its oracle.

mod apriori;
mod el;
mod energy;
mod entropic_step;
mod exact_step;
mod scheme;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::CostMatrix;
use crate::scalar::Real;

pub use apriori::{apriori_report, AprioriReport, BoundCheck};
pub use el::{el_residual, ElReport, ElTerm, TestFunction};
pub use energy::{embedded_moment, entropy, free_energy, EnergySpec};
pub use entropic_step::{jko_step_entropic, jko_step_entropic_alternating};
pub use exact_step::{jko_step_exact_small, jko_step_exact_small_from, MAX_EXACT_SMALL_NODES};
pub use scheme::{run_jko, JkoTrajectory, LedgerEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    Entropic,
    ExactSmall,
}

/// How the entropic regularisation is chosen for a given time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "")]
pub enum EpsilonSchedule<T: Real> {
    /// Median cost between grid neighbours, clamped to `[eps_floor, 1e-2]`.
    Auto,
    Fixed(T),
    /// `factor · h_min² · (τ/tau_ref)²`; keeps the entropic bias `O(τ)` when
    /// `τ` is refined.
    Matched { factor: T, tau_ref: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct JkoTolerances<T: Real> {
    /// Column-marginal defect (mass units, l¹) at which a Newton solve stops.
    pub marginal: T,
    /// Relative dual stall that also ends a Newton solve.
    pub stall: T,
    pub max_newton: usize,
    /// KKT residual required from the exact inner solver.
    pub kkt: T,
    pub max_mirror: usize,
}

impl<T: Real> Default for JkoTolerances<T> {
    fn default() -> Self {
        Self {
            marginal: T::lit(1e-11),
            stall: T::lit(1e-11),
            max_newton: 200,
            kkt: T::lit(1e-8),
            max_mirror: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct JkoConfig<T: Real> {
    pub tau: T,
    pub n_steps: usize,
    pub inner_solver: InnerSolver,
    pub epsilon: EpsilonSchedule<T>,
    pub eps_floor: T,
    pub tolerances: JkoTolerances<T>,
}

impl<T: Real> JkoConfig<T> {
    pub fn new(tau: T, n_steps: usize) -> Result<Self> {
        let c = Self {
            tau,
            n_steps,
            inner_solver: InnerSolver::Entropic,
            epsilon: EpsilonSchedule::Auto,
            eps_floor: T::lit(1e-4),
            tolerances: JkoTolerances::default(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_solver(mut self, s: InnerSolver) -> Self {
        self.inner_solver = s;
        self
    }

    pub fn with_epsilon(mut self, e: EpsilonSchedule<T>) -> Self {
        self.epsilon = e;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.eps_floor > T::zero()) {
            return Err(Error::InvalidParameter("epsilon floor must be positive".into()));
        }
        match self.epsilon {
            EpsilonSchedule::Fixed(e) if !(e > T::zero()) => {
                Err(Error::InvalidParameter("epsilon must be positive".into()))
            }
            EpsilonSchedule::Matched { factor, tau_ref } if !(factor > T::zero() && tau_ref > T::zero()) => {
                Err(Error::InvalidParameter("matched schedule needs positive factor and tau_ref".into()))
            }
            _ => Ok(()),
        }
    }

    /// Regularisation used for every step of a run with this cost.
    pub fn resolve_epsilon(&self, c: &CostMatrix<T>) -> T {
        let e = match self.epsilon {
            EpsilonSchedule::Auto => c.median_neighbour_cost().min(T::lit(1e-2)),
            EpsilonSchedule::Fixed(e) => e,
            EpsilonSchedule::Matched { factor, tau_ref } => {
                let h = c.grid().min_spacing();
                let r = self.tau / tau_ref;
                factor * h * h * r * r
            }
        };
        e.max(self.eps_floor)
    }
}

/// Diagnostics of one inner solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StepReport<T: Real> {
    pub solver: InnerSolver,
    pub epsilon: Option<T>,
    pub iterations: usize,
    pub converged: bool,
    /// `⟨c, π⟩` of the returned plan; an upper bound on `W²(ρⁿ, ρⁿ⁺¹)`.
    pub plan_cost: T,
    /// `G_n(ρⁿ) = F(ρⁿ)`.
    pub objective_start: T,
    /// `(1/2τ)⟨c, π⟩ + F(ρⁿ⁺¹)`.
    pub objective: T,
    /// l¹ defect between the plan's column marginal and the prox image.
    pub marginal_defect: T,
    pub duality_gap: T,
    pub kkt_residual: T,
    /// Certified bound on `objective − objective_start`.
    pub dissipation_slack: T,
}
