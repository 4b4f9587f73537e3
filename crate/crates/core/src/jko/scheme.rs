use serde::{Deserialize, Serialize};

use super::energy::{embedded_moment, entropy, EnergySpec};
use super::entropic_step::EntropicProblem;
use super::exact_step::jko_step_exact_small;
use super::{InnerSolver, JkoConfig, StepReport};
use crate::embedding::EmbeddingMap;
use crate::error::{Error, Result};
use crate::grid::Density;
use crate::metric::{cost_matrix, solve_kantorovich_exact, wa_distance_1d, MAX_EXACT_NODES};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StepSlacks<T: Real> {
    /// Certified excess allowed in `F(ρⁿ⁺¹) + W²/2τ ≤ F(ρⁿ)`.
    pub dissipation: T,
    pub kkt: T,
    pub duality_gap: T,
}

/// One row of the trajectory ledger; row 0 describes `ρ⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LedgerEntry<T: Real> {
    pub step: usize,
    pub time: T,
    #[serde(rename = "F")]
    pub free_energy: T,
    #[serde(rename = "S")]
    pub entropy: T,
    #[serde(rename = "M_b")]
    pub moment_b: T,
    /// `W²(ρⁿ⁻¹, ρⁿ)`; zero on row 0.
    pub wa_squared: T,
    /// `⟨c, π⟩` of the inner plan, an upper bound on `wa_squared`.
    pub plan_cost: T,
    pub solver_iters: usize,
    pub converged: bool,
    pub slacks: StepSlacks<T>,
}

#[derive(Debug, Clone)]
pub struct JkoTrajectory<T: Real> {
    pub tau: T,
    pub solver: InnerSolver,
    pub epsilon: Option<T>,
    pub densities: Vec<Density<T>>,
    pub ledger: Vec<LedgerEntry<T>>,
    pub reports: Vec<StepReport<T>>,
    /// `F` at the Gibbs density, the minimum of `F` on the grid.
    pub inf_free_energy: T,
    /// Set when a step failed; the trajectory holds the steps before it.
    pub aborted: Option<String>,
    embedding: EmbeddingMap<T>,
}

impl<T: Real> JkoTrajectory<T> {
    pub fn steps(&self) -> usize {
        self.densities.len() - 1
    }

    pub fn embedding(&self) -> &EmbeddingMap<T> {
        &self.embedding
    }

    pub fn last(&self) -> &Density<T> {
        self.densities.last().expect("trajectory holds rho0")
    }

    /// Piecewise-constant interpolant: `ρ_τ(t) = ρⁿ` for `t ∈ ((n−1)τ, nτ]`.
    pub fn at_time(&self, t: T) -> &Density<T> {
        if !(t > T::zero()) {
            return &self.densities[0];
        }
        let k = (t / self.tau - T::lit(1e-9)).ceil().to_usize().unwrap_or(0);
        &self.densities[k.min(self.steps())]
    }

    pub fn free_energies(&self) -> Vec<T> {
        self.ledger.iter().map(|e| e.free_energy).collect()
    }

    /// Largest per-step violation of the dissipation inequality beyond its
    /// recorded slack (non-positive when every step is certified).
    pub fn dissipation_excess(&self) -> T {
        self.ledger
            .windows(2)
            .map(|w| {
                w[1].free_energy + w[1].wa_squared / (T::two() * self.tau) - w[0].free_energy - w[1].slacks.dissipation
            })
            .fold(T::neg_infinity(), T::max)
    }
}

pub(crate) fn distance_squared<T: Real>(a: &Density<T>, b: &Density<T>, emb: &EmbeddingMap<T>) -> Result<Option<T>> {
    if emb.grid().dim() == 1 {
        return Ok(Some(wa_distance_1d(a, b, emb)?.wa_squared));
    }
    if a.len() <= MAX_EXACT_NODES {
        let c = cost_matrix(emb)?;
        return Ok(Some(solve_kantorovich_exact(a, b, &c)?.1.wa_squared));
    }
    Ok(None)
}

fn entry<T: Real>(
    step: usize,
    tau: T,
    rho: &Density<T>,
    e: &EnergySpec<T>,
    b: &EmbeddingMap<T>,
    prev: Option<(&Density<T>, &StepReport<T>)>,
) -> Result<LedgerEntry<T>> {
    let (wa, plan, iters, conv, slacks) = match prev {
        None => (T::zero(), T::zero(), 0, true, StepSlacks { dissipation: T::zero(), kkt: T::zero(), duality_gap: T::zero() }),
        Some((r0, s)) => {
            // on large 2D grids the plan cost is the best available bound
            let wa = distance_squared(r0, rho, b)?.unwrap_or(s.plan_cost);
            let sl = StepSlacks { dissipation: s.dissipation_slack, kkt: s.kkt_residual, duality_gap: s.duality_gap };
            (wa, s.plan_cost, s.iterations, s.converged, sl)
        }
    };
    Ok(LedgerEntry {
        step,
        time: T::from_usize_lossy(step) * tau,
        free_energy: e.free_energy(rho),
        entropy: entropy(rho),
        moment_b: embedded_moment(rho, b),
        wa_squared: wa,
        plan_cost: plan,
        solver_iters: iters,
        converged: conv,
        slacks,
    })
}

/// `config.n_steps` JKO steps from `rho0`. A failing step ends the run
/// early; the error is recorded in `aborted`.
pub fn run_jko<T: Real>(
    rho0: &Density<T>,
    e: &EnergySpec<T>,
    b: &EmbeddingMap<T>,
    config: &JkoConfig<T>,
) -> Result<JkoTrajectory<T>> {
    config.validate()?;
    rho0.grid().check_same(b.grid())?;
    rho0.grid().check_same(e.grid())?;
    let f0 = e.free_energy(rho0);
    if !f0.is_finite() {
        return Err(Error::InvalidDensity("initial free energy is not finite".into()));
    }
    let cost = match config.inner_solver {
        InnerSolver::Entropic => Some(cost_matrix(b)?),
        InnerSolver::ExactSmall => None,
    };
    let epsilon = cost.as_ref().map(|c| config.resolve_epsilon(c));
    let mut traj = JkoTrajectory {
        tau: config.tau,
        solver: config.inner_solver,
        epsilon,
        densities: vec![rho0.clone()],
        ledger: vec![entry(0, config.tau, rho0, e, b, None)?],
        reports: Vec::new(),
        inf_free_energy: e.min_free_energy(),
        aborted: None,
        embedding: b.clone(),
    };
    let tol = &config.tolerances;
    let mut warm: Option<Vec<T>> = None;
    for k in 0..config.n_steps {
        let cur = traj.last().clone();
        let step = match (&cost, epsilon) {
            (Some(c), Some(eps)) => EntropicProblem::new(&cur, e, c, config.tau, eps).and_then(|pb| {
                let (g, it, ok) = pb.newton(warm.as_deref(), tol.marginal, tol.stall, tol.max_newton)?;
                let out = pb.finish(&cur, e, &g, it, ok)?;
                warm = Some(g);
                Ok(out)
            }),
            _ => jko_step_exact_small(&cur, e, b, config),
        };
        match step.and_then(|(r, s)| entry(k + 1, config.tau, &r, e, b, Some((&cur, &s))).map(|en| (r, s, en))) {
            Ok((r, s, en)) => {
                traj.densities.push(r);
                traj.reports.push(s);
                traj.ledger.push(en);
            }
            Err(err) => {
                traj.aborted = Some(format!("step {}: {err}", k + 1));
                break;
            }
        }
    }
    Ok(traj)
}
