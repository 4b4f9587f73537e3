//! Finite-volume reference solver for `∂ₜρ = ∇·(A(∇ρ + ρ∇Ψ))` with zero-flux
//! boundaries.
//!
//! Unknowns are node masses on the vertex-centred control volumes. Face
//! fluxes use exponential fitting (Scharfetter–Gummel): across a face of
//! length `h` with `d = Ψ_k − Ψ_i`,
//! `J = A_f |face| / h · (B(d) ρ_i − B(−d) ρ_k)`, `B(z) = z/(eᶻ − 1)`,
//! which vanishes identically on `ρ ∝ e^{−Ψ}`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{MobilityFamily, MobilityField};
use crate::error::{Error, Result};
use crate::grid::{Density, Grid};
use crate::jko::EnergySpec;
use crate::linalg::{bicgstab, BandedLu, Csr};
use crate::scalar::{pairwise_sum, Real};

/// Above this many unknowns the implicit solve is iterative.
pub const MAX_DIRECT_UNKNOWNS: usize = 100_000;

/// Off-diagonal entries of `A` above this are rejected in 2D.
const ANISOTROPY_TOL: f64 = 1e-14;

/// `z/(eᶻ − 1)`, with its Taylor expansion near zero.
pub fn bernoulli<T: Real>(z: T) -> T {
    if z.abs() < T::lit(1e-6) {
        T::one() - z * T::half() + z * z / T::lit(12.0)
    } else {
        z / z.exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvOperator<T: Real> {
    grid: Grid<T>,
    /// `dm/dt = L m` on node masses.
    matrix: Csr<T>,
    family: MobilityFamily,
    psi: Vec<T>,
}

/// Face list: `(i, k, axis, A_f · |face| / h)`.
fn faces<T: Real>(field: &MobilityField<T>) -> Result<Vec<(usize, usize, usize, T)>> {
    let g = field.grid();
    if g.dim() == 2 {
        for i in 0..g.len() {
            let a = field.a(i);
            let off = a.m[0][1].abs().max(a.m[1][0].abs());
            if off > T::lit(ANISOTROPY_TOL) * a.m[0][0].abs().max(a.m[1][1].abs()) {
                return Err(Error::UnsupportedAnisotropy(format!(
                    "off-diagonal mobility {off} at node {i}; two-point fluxes need diagonal A"
                )));
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..g.len() {
        let m = g.multi_index(i);
        for k in 0..g.dim() {
            if m[k] + 1 >= g.axis(k).n {
                continue;
            }
            let mut m2 = m;
            m2[k] += 1;
            let j = g.flat_index(m2[0], m2[1]);
            let af = (field.a(i).m[k][k] + field.a(j).m[k][k]) * T::half();
            // face length: control-volume width along the other axis
            let area = if g.dim() == 2 {
                let o = 1 - k;
                let ax = g.axis(o);
                if m[o] == 0 || m[o] + 1 == ax.n {
                    ax.h() * T::half()
                } else {
                    ax.h()
                }
            } else {
                T::one()
            };
            out.push((i, j, k, af * area / g.h(k)));
        }
    }
    Ok(out)
}

pub fn assemble_operator<T: Real>(field: &MobilityField<T>, e: &EnergySpec<T>) -> Result<FvOperator<T>> {
    let g = field.grid();
    g.check_same(e.grid())?;
    let psi = e.psi();
    let w = g.weights();
    let trip: Vec<(usize, usize, T)> = faces(field)?
        .par_iter()
        .flat_map_iter(|&(i, k, _, kf)| {
            let d = psi[k] - psi[i];
            // flux i → k = kf (B(d) m_i/w_i − B(−d) m_k/w_k)
            let ci = kf * bernoulli(d) / w[i];
            let ck = kf * bernoulli(-d) / w[k];
            [(i, i, -ci), (k, i, ci), (i, k, ck), (k, k, -ck)]
        })
        .collect();
    Ok(FvOperator {
        grid: g.clone(),
        matrix: Csr::from_triplets(g.len(), trip),
        family: field.family(),
        psi: psi.to_vec(),
    })
}

impl<T: Real> FvOperator<T> {
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn matrix(&self) -> &Csr<T> {
        &self.matrix
    }

    pub fn family(&self) -> MobilityFamily {
        self.family
    }

    pub fn psi(&self) -> &[T] {
        &self.psi
    }

    /// `L m` for node masses `m`.
    pub fn apply(&self, masses: &[T]) -> Vec<T> {
        self.matrix.matvec(masses)
    }

    pub fn max_column_sum(&self) -> T {
        self.matrix.column_sums().iter().fold(T::zero(), |s, c| s.max(c.abs()))
    }

    /// Whether off-diagonals are `≥ 0` and the diagonal `≤ 0`.
    pub fn is_m_matrix(&self) -> bool {
        self.matrix
            .triplets()
            .iter()
            .all(|&(i, j, v)| if i == j { v <= T::zero() } else { v >= T::zero() })
    }

    /// Max-norm of `L m` for the masses of `ρ`.
    pub fn residual(&self, rho: &Density<T>) -> T {
        self.apply(&rho.masses()).iter().fold(T::zero(), |s, v| s.max(v.abs()))
    }

    /// Coordinate triplets in MatrixMarket form (1-based).
    pub fn write_triplets(&self, mut out: impl Write) -> std::io::Result<()> {
        let t = self.matrix.triplets();
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.matrix.n(), self.matrix.n(), t.len())?;
        for (i, j, v) in t {
            writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v.to_f64_lossy())?;
        }
        Ok(())
    }
}

/// Prepared `(I − dt L)` solve.
enum Solver<T: Real> {
    Direct(BandedLu<T>),
    Iterative,
}

struct Stepper<T: Real> {
    m: Csr<T>,
    solver: Solver<T>,
}

impl<T: Real> Stepper<T> {
    fn new(op: &FvOperator<T>, dt: T) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        let m = op.matrix.shifted(T::one(), -dt);
        let solver = if m.n() <= MAX_DIRECT_UNKNOWNS {
            Solver::Direct(BandedLu::factor(&m).map_err(|e| Error::SolverFailure(e.to_string()))?)
        } else {
            Solver::Iterative
        };
        Ok(Self { m, solver })
    }

    fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        let scale = rhs.iter().fold(T::zero(), |s, v| s.max(v.abs())).max(T::min_positive_value());
        let tol = T::lit(1e-12);
        let mut x = match &self.solver {
            Solver::Direct(lu) => lu.solve(rhs),
            Solver::Iterative => bicgstab(&self.m, rhs, rhs, T::lit(1e-14), 10_000)?.0,
        };
        for _ in 0..3 {
            let r: Vec<T> = self.m.matvec(&x).iter().zip(rhs).map(|(&a, &b)| b - a).collect();
            let rn = r.iter().fold(T::zero(), |s, v| s.max(v.abs()));
            if rn <= tol * scale {
                return Ok(x);
            }
            let dx = match &self.solver {
                Solver::Direct(lu) => lu.solve(&r),
                Solver::Iterative => bicgstab(&self.m, &r, &vec![T::zero(); r.len()], T::lit(1e-14), 10_000)?.0,
            };
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi = *xi + d;
            }
        }
        let r: Vec<T> = self.m.matvec(&x).iter().zip(rhs).map(|(&a, &b)| b - a).collect();
        let rn = r.iter().fold(T::zero(), |s, v| s.max(v.abs()));
        if rn <= tol * scale {
            Ok(x)
        } else {
            Err(Error::SolverFailure(format!("implicit step residual {rn}")))
        }
    }

    fn step(&self, rho: &Density<T>) -> Result<Density<T>> {
        let x = self.solve(&rho.masses())?;
        // the exact solution is nonnegative (M-matrix); drop rounding noise
        let x: Vec<T> = x.into_iter().map(|v| v.max(T::zero())).collect();
        Density::from_masses_normalized(rho.grid().clone(), &x)
    }
}

/// One implicit Euler step `(I − dt L) m⁺ = m`.
pub fn implicit_euler_step<T: Real>(op: &FvOperator<T>, rho: &Density<T>, dt: T) -> Result<Density<T>> {
    rho.grid().check_same(&op.grid)?;
    Stepper::new(op, dt)?.step(rho)
}

#[derive(Debug, Clone)]
pub struct FvTrajectory<T: Real> {
    pub dt: T,
    pub times: Vec<T>,
    pub densities: Vec<Density<T>>,
    pub free_energy: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FvLedgerEntry<T: Real> {
    pub step: usize,
    pub time: T,
    #[serde(rename = "F")]
    pub free_energy: T,
    pub mass: T,
}

impl<T: Real> FvTrajectory<T> {
    pub fn last(&self) -> &Density<T> {
        self.densities.last().expect("trajectory holds rho0")
    }

    pub fn ledger(&self) -> Vec<FvLedgerEntry<T>> {
        (0..self.densities.len())
            .map(|k| FvLedgerEntry {
                step: k,
                time: self.times[k],
                free_energy: self.free_energy[k],
                mass: self.densities[k].total_mass(),
            })
            .collect()
    }

    /// Largest increase of `F` between consecutive steps (≤ 0 when `F` is
    /// nonincreasing).
    pub fn max_energy_increase(&self) -> T {
        self.free_energy.windows(2).map(|w| w[1] - w[0]).fold(T::neg_infinity(), T::max)
    }
}

/// Implicit Euler from `rho0` to `t_end` with `round(t_end/dt)` steps.
pub fn run_reference<T: Real>(
    field: &MobilityField<T>,
    e: &EnergySpec<T>,
    rho0: &Density<T>,
    dt: T,
    t_end: T,
) -> Result<FvTrajectory<T>> {
    rho0.grid().check_same(field.grid())?;
    if !(t_end >= T::zero()) {
        return Err(Error::InvalidParameter("horizon must be nonnegative".into()));
    }
    let op = assemble_operator(field, e)?;
    let stepper = Stepper::new(&op, dt)?;
    let n = (t_end / dt).round().to_usize().unwrap_or(0);
    let mut traj = FvTrajectory {
        dt,
        times: vec![T::zero()],
        densities: vec![rho0.clone()],
        free_energy: vec![e.free_energy(rho0)],
    };
    for k in 0..n {
        let next = stepper.step(traj.last())?;
        traj.times.push(T::from_usize_lossy(k + 1) * dt);
        traj.free_energy.push(e.free_energy(&next));
        traj.densities.push(next);
    }
    Ok(traj)
}

/// Weak-form residual of a piecewise-constant-in-time density sequence
/// (`ρ(t) = ρᵏ⁺¹` on `(t_k, t_{k+1}]`) against space-time test functions:
/// `Σ_k (mᵏ⁺¹ − mᵏ)·ψ(t_k) + Σ_k S(ρᵏ⁺¹, ∫_{t_k}^{t_{k+1}} ψ dt)` where
/// `S(ρ, φ) = ∫ A(∇ρ + ρ∇Ψ)·∇φ` by central face differences. The time
/// integral uses two-point Gauss. Terminal values of `ψ` are accounted for,
/// so `ψ ≡ 1` returns the mass defect.
pub fn weak_form_residual<T: Real>(
    densities: &[Density<T>],
    field: &MobilityField<T>,
    e: &EnergySpec<T>,
    test_functions: &[&(dyn Fn([T; 2], T) -> T + Sync)],
    dt: T,
) -> Result<Vec<T>> {
    let g = field.grid();
    g.check_same(e.grid())?;
    for d in densities {
        d.grid().check_same(g)?;
    }
    let fc = faces(field)?;
    let psi = e.psi();
    let nodes = g.nodes();
    let gq = T::half() / T::lit(3.0).sqrt();
    let out = test_functions
        .iter()
        .map(|tf| {
            let mut terms = Vec::new();
            for k in 0..densities.len().saturating_sub(1) {
                let t0 = T::from_usize_lossy(k) * dt;
                let (a, b) = (&densities[k], &densities[k + 1]);
                let ta = t0 + dt * (T::half() - gq);
                let tb = t0 + dt * (T::half() + gq);
                let phi: Vec<T> = nodes.iter().map(|&x| (tf(x, ta) + tf(x, tb)) * T::half() * dt).collect();
                for i in 0..g.len() {
                    terms.push((b.mass(i) - a.mass(i)) * tf(nodes[i], t0));
                }
                let r = b.values();
                for &(i, j, _, kf) in &fc {
                    // kf = A_f |face| / h
                    let flux = (r[j] - r[i]) + (r[i] + r[j]) * T::half() * (psi[j] - psi[i]);
                    terms.push(kf * flux * (phi[j] - phi[i]));
                }
            }
            pairwise_sum(&terms).abs()
        })
        .collect();
    Ok(out)
}
