//! Entropy-regularised JKO step.
//!
//! With `γ = ε/(2τ)` and `C = c/(2τ)` the step minimises
//! `P(π) = ⟨C, π⟩ + γ Σ π log π + F(πᵀ1)` over `π ≥ 0` with row sums `p`.
//! Writing `a_j = w_j e^{−1−Ψ_j}`, its concave dual in the column potential is
//! `D(g) = −γ Σ_i p_i LSE_j((g_j − C_ij)/γ) + γ Σ p log p − Σ_j a_j e^{−g_j}`,
//! whose gradient is `q(g) − πᵀ1` with `q_j = a_j e^{−g_j}` the F-proximal
//! image. Maximising `D` block-wise gives the alternating scaling
//! `q = s^{γ/(1+γ)} a^{1/(1+γ)}` (`s = Kᵀu`), which converges at a rate
//! close to `1/(1+γ)`; the production path is damped Newton on `D`.

use rayon::prelude::*;

use super::energy::EnergySpec;
use super::{InnerSolver, JkoConfig, StepReport};
use crate::embedding::EmbeddingMap;
use crate::error::{Error, Result};
use crate::grid::Density;
use crate::linalg::DMat;
use crate::metric::{cost_matrix, CostMatrix};
use crate::scalar::{log_sum_exp, pairwise_sum, underflow_cut, xlogx, Real};

pub(crate) struct EntropicProblem<T: Real> {
    n: usize,
    tau: T,
    gamma: T,
    p: Vec<T>,
    plogp: T,
    /// `c/(2τ)`, row-major.
    cs: Vec<T>,
    c: Vec<T>,
    /// `log a_j = log w_j − 1 − Ψ_j`.
    log_a: Vec<T>,
}

struct Eval<T: Real> {
    dual: T,
    /// Row-major plan.
    plan: Vec<T>,
    /// `log π_ij − log p_i`, row-major (only meaningful where `p_i > 0`).
    log_ratio: Vec<T>,
    col: Vec<T>,
    q: Vec<T>,
}

impl<T: Real> EntropicProblem<T> {
    pub(crate) fn new(rho_n: &Density<T>, e: &EnergySpec<T>, c: &CostMatrix<T>, tau: T, eps: T) -> Result<Self> {
        rho_n.grid().check_same(e.grid())?;
        rho_n.grid().check_same(c.grid())?;
        if !(eps > T::zero()) || !(tau > T::zero()) {
            return Err(Error::InvalidParameter("tau and epsilon must be positive".into()));
        }
        let n = rho_n.len();
        let p = rho_n.masses();
        let plogp = pairwise_sum(&p.iter().map(|&m| xlogx(m)).collect::<Vec<_>>());
        let inv = (T::two() * tau).recip();
        let mut cv = Vec::with_capacity(n * n);
        for i in 0..n {
            cv.extend_from_slice(c.row(i));
        }
        let cs = cv.iter().map(|&x| x * inv).collect();
        let g = rho_n.grid();
        let log_a = (0..n).map(|j| g.weight(j).ln() - T::one() - e.psi()[j]).collect();
        Ok(Self { n, tau, gamma: eps * inv, p, plogp, cs, c: cv, log_a })
    }

    fn row_lse(&self, g: &[T], i: usize) -> T {
        let row = &self.cs[i * self.n..(i + 1) * self.n];
        let gm = self.gamma;
        log_sum_exp((0..self.n).map(|j| (g[j] - row[j]) / gm))
    }

    fn q_of(&self, g: &[T]) -> Vec<T> {
        (0..self.n).map(|j| (self.log_a[j] - g[j]).exp()).collect()
    }

    fn dual(&self, g: &[T]) -> T {
        let terms: Vec<T> = (0..self.n)
            .into_par_iter()
            .map(|i| if self.p[i] > T::zero() { self.p[i] * self.row_lse(g, i) } else { T::zero() })
            .collect();
        let q = self.q_of(g);
        -self.gamma * pairwise_sum(&terms) + self.gamma * self.plogp - pairwise_sum(&q)
    }

    fn eval(&self, g: &[T]) -> Eval<T> {
        let n = self.n;
        let gm = self.gamma;
        let mut plan = vec![T::zero(); n * n];
        let mut log_ratio = vec![T::zero(); n * n];
        let cut = underflow_cut::<T>();
        let lse: Vec<T> = plan
            .par_chunks_mut(n)
            .zip(log_ratio.par_chunks_mut(n))
            .enumerate()
            .map(|(i, (prow, lrow))| {
                if !(self.p[i] > T::zero()) {
                    return T::zero();
                }
                let crow = &self.cs[i * n..(i + 1) * n];
                let l = self.row_lse(g, i);
                for j in 0..n {
                    let lr = (g[j] - crow[j]) / gm - l;
                    lrow[j] = lr;
                    prow[j] = if lr > cut { self.p[i] * lr.exp() } else { T::zero() };
                }
                self.p[i] * l
            })
            .collect();
        let col: Vec<T> = (0..n)
            .into_par_iter()
            .map(|j| pairwise_sum(&(0..n).map(|i| plan[i * n + j]).collect::<Vec<_>>()))
            .collect();
        let q = self.q_of(g);
        let dual = -gm * pairwise_sum(&lse) + gm * self.plogp - pairwise_sum(&q);
        Eval { dual, plan, log_ratio, col, q }
    }

    /// `−∇²D = (1/γ)[diag(col) − Σ_i π_i π_iᵀ/p_i] + diag(q)`. Entries of a
    /// row below `1e-18·p_i` are dropped from the outer products; the plan is
    /// concentrated near the diagonal, so this makes assembly nearly linear.
    fn neg_hessian(&self, ev: &Eval<T>) -> DMat<T> {
        let n = self.n;
        let thr = T::lit(1e-18);
        let mut h = DMat::zeros(n, n);
        let mut idx: Vec<usize> = Vec::with_capacity(n);
        for i in 0..n {
            if !(self.p[i] > T::zero()) {
                continue;
            }
            let row = &ev.plan[i * n..(i + 1) * n];
            idx.clear();
            idx.extend((0..n).filter(|&j| row[j] > thr * self.p[i]));
            let inv_p = self.p[i].recip();
            for &j in &idx {
                let a = row[j] * inv_p;
                for &k in &idx {
                    h[(j, k)] = h[(j, k)] - a * row[k];
                }
            }
        }
        let inv = self.gamma.recip();
        for j in 0..n {
            for k in 0..n {
                h[(j, k)] = h[(j, k)] * inv;
            }
            h[(j, j)] = h[(j, j)] + ev.col[j] * inv + ev.q[j];
        }
        h
    }

    fn initial_potential(&self) -> Vec<T> {
        // q(g) = p, i.e. the prox image of the current density
        let floor = T::min_positive_value();
        (0..self.n).map(|j| self.log_a[j] - self.p[j].max(floor).ln()).collect()
    }

    /// Damped Newton ascent on `D`; returns the final potential, iteration
    /// count and whether the stopping rule was met.
    pub(crate) fn newton(&self, g0: Option<&[T]>, tol: T, stall: T, max_iter: usize) -> Result<(Vec<T>, usize, bool)> {
        let mut g = match g0 {
            Some(g0) if g0.len() == self.n => g0.to_vec(),
            _ => self.initial_potential(),
        };
        let mut prev: Option<T> = None;
        let mut stalled = 0usize;
        for it in 0..=max_iter {
            let ev = self.eval(&g);
            let grad: Vec<T> = (0..self.n).map(|j| ev.q[j] - ev.col[j]).collect();
            let gnorm: T = grad.iter().map(|x| x.abs()).sum();
            if gnorm <= tol {
                return Ok((g, it, true));
            }
            if let Some(d0) = prev {
                if (ev.dual - d0).abs() <= stall * ev.dual.abs().max(T::one()) {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                if stalled >= 10 && gnorm <= tol.sqrt() {
                    return Ok((g, it, true));
                }
            }
            prev = Some(ev.dual);
            if it == max_iter {
                return Ok((g, it, false));
            }
            let h = self.neg_hessian(&ev);
            let chol = match h.cholesky(T::zero()) {
                Ok(c) => c,
                Err(_) => {
                    let mut hr = h.clone();
                    let shift = T::lit(1e-12) * (0..self.n).map(|k| h[(k, k)]).fold(T::zero(), T::max);
                    for k in 0..self.n {
                        hr[(k, k)] = hr[(k, k)] + shift;
                    }
                    hr.cholesky(T::zero()).map_err(|_| Error::SolverFailure("JKO Newton system is singular".into()))?
                }
            };
            let d = chol.solve(&grad);
            let slope: T = grad.iter().zip(&d).map(|(&a, &b)| a * b).sum();
            let mut t = T::one();
            loop {
                let trial: Vec<T> = g.iter().zip(&d).map(|(&a, &b)| a + t * b).collect();
                let dv = self.dual(&trial);
                if dv >= ev.dual + T::lit(1e-4) * t * slope || t < T::lit(1e-10) {
                    g = trial;
                    break;
                }
                t = t * T::half();
            }
        }
        unreachable!()
    }

    /// Reference solver: alternating exact maximisation over the row and
    /// column potentials.
    pub(crate) fn alternating(&self, tol: T, max_iter: usize) -> (Vec<T>, usize, bool) {
        let n = self.n;
        let gm = self.gamma;
        let mut g = self.initial_potential();
        let mut f = vec![T::zero(); n];
        let lp: Vec<T> = self.p.iter().map(|&m| m.max(T::min_positive_value()).ln()).collect();
        let wr = gm / (T::one() + gm);
        let wa = T::one() / (T::one() + gm);
        for it in 1..=max_iter {
            f.par_iter_mut().enumerate().for_each(|(i, fi)| {
                *fi = gm * (lp[i] - self.row_lse(&g, i));
            });
            // log s_j = LSE_i((f_i − C_ij)/γ)
            let log_s: Vec<T> = (0..n)
                .into_par_iter()
                .map(|j| log_sum_exp((0..n).filter(|&i| self.p[i] > T::zero()).map(|i| (f[i] - self.cs[i * n + j]) / gm)))
                .collect();
            // col_j of the plan after the row update, then the prox image
            let mut defect = T::zero();
            for j in 0..n {
                let col = (log_s[j] + g[j] / gm).exp();
                let log_q = wr * log_s[j] + wa * self.log_a[j];
                defect = defect + ((log_q).exp() - col).abs();
                g[j] = self.log_a[j] - log_q;
            }
            if defect <= tol {
                return (g, it, true);
            }
        }
        (g, max_iter, false)
    }

    /// New density and certified report for the plan induced by `g`.
    pub(crate) fn finish(
        &self,
        rho_n: &Density<T>,
        e: &EnergySpec<T>,
        g: &[T],
        iterations: usize,
        converged: bool,
    ) -> Result<(Density<T>, StepReport<T>)> {
        let n = self.n;
        let ev = self.eval(g);
        let rho = Density::from_masses_normalized(rho_n.grid().clone(), &ev.col)?;
        let per_row: Vec<(T, T)> = (0..n)
            .into_par_iter()
            .map(|i| {
                if !(self.p[i] > T::zero()) {
                    return (T::zero(), T::zero());
                }
                let lpi = self.p[i].ln();
                let mut cost = Vec::with_capacity(n);
                let mut ent = Vec::with_capacity(n);
                for j in 0..n {
                    let m = ev.plan[i * n + j];
                    if m > T::zero() {
                        cost.push(m * self.c[i * n + j]);
                        ent.push(m * (lpi + ev.log_ratio[i * n + j]));
                    }
                }
                (pairwise_sum(&cost), pairwise_sum(&ent))
            })
            .collect();
        let plan_cost = pairwise_sum(&per_row.iter().map(|r| r.0).collect::<Vec<_>>());
        let pilogpi = pairwise_sum(&per_row.iter().map(|r| r.1).collect::<Vec<_>>());
        let two_tau = T::two() * self.tau;
        let f_new = e.free_energy(&rho);
        let f_old = e.free_energy(rho_n);
        let primal = plan_cost / two_tau + self.gamma * pilogpi + f_new;
        let gap = primal - ev.dual;
        let defect: T = (0..n).map(|j| (ev.q[j] - ev.col[j]).abs()).sum();
        let report = StepReport {
            solver: InnerSolver::Entropic,
            epsilon: Some(self.gamma * two_tau),
            iterations,
            converged,
            plan_cost,
            objective_start: f_old,
            objective: plan_cost / two_tau + f_new,
            marginal_defect: defect,
            duality_gap: gap,
            kkt_residual: defect,
            dissipation_slack: self.gamma * (self.plogp - pilogpi) + gap.max(T::zero()),
        };
        Ok((rho, report))
    }
}

/// One JKO step with the entropic inner solver; the regularisation comes
/// from `config.epsilon`.
pub fn jko_step_entropic<T: Real>(
    rho_n: &Density<T>,
    e: &EnergySpec<T>,
    b: &EmbeddingMap<T>,
    config: &JkoConfig<T>,
) -> Result<(Density<T>, StepReport<T>)> {
    config.validate()?;
    rho_n.grid().check_same(b.grid())?;
    let c = cost_matrix(b)?;
    let eps = config.resolve_epsilon(&c);
    let pb = EntropicProblem::new(rho_n, e, &c, config.tau, eps)?;
    let tol = &config.tolerances;
    let (g, it, ok) = pb.newton(None, tol.marginal, tol.stall, tol.max_newton)?;
    pb.finish(rho_n, e, &g, it, ok)
}

/// Same step by plain alternating scaling; slow for small `ε/τ`, kept as an
/// independent check of the Newton solver.
pub fn jko_step_entropic_alternating<T: Real>(
    rho_n: &Density<T>,
    e: &EnergySpec<T>,
    b: &EmbeddingMap<T>,
    config: &JkoConfig<T>,
    max_iter: usize,
) -> Result<(Density<T>, StepReport<T>)> {
    config.validate()?;
    rho_n.grid().check_same(b.grid())?;
    let c = cost_matrix(b)?;
    let eps = config.resolve_epsilon(&c);
    let pb = EntropicProblem::new(rho_n, e, &c, config.tau, eps)?;
    let (g, it, ok) = pb.alternating(config.tolerances.marginal, max_iter);
    pb.finish(rho_n, e, &g, it, ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Anchor;
    use crate::grid::Grid;
    use crate::jko::EpsilonSchedule;

    fn setup(n: usize) -> (Grid<f64>, EmbeddingMap<f64>) {
        let g = Grid::line(0.0, 1.0, n).unwrap();
        let b = EmbeddingMap::build_1d_fn(&g, |x: f64| (2.0 * x).exp(), Anchor::Origin).unwrap();
        (g, b)
    }

    #[test]
    fn newton_matches_alternating_scaling() {
        let (g, b) = setup(24);
        let e = EnergySpec::from_fn(&g, |x| 3.0 * (x[0] - 0.6).powi(2)).unwrap();
        let rho = Density::from_fn(g.clone(), |x| 1.0 + (6.0 * x[0]).sin() * 0.5).unwrap();
        // large eps/tau so that the alternating method converges quickly
        let cfg = JkoConfig::new(0.05, 1).unwrap().with_epsilon(EpsilonSchedule::Fixed(0.05));
        let (r1, s1) = jko_step_entropic(&rho, &e, &b, &cfg).unwrap();
        let (r2, s2) = jko_step_entropic_alternating(&rho, &e, &b, &cfg, 100_000).unwrap();
        assert!(s1.converged && s2.converged);
        assert!(r1.l1_distance(&r2).unwrap() < 1e-9);
        assert!(s1.duality_gap.abs() < 1e-10, "gap {}", s1.duality_gap);
    }

    #[test]
    fn mass_and_dissipation() {
        let (g, b) = setup(64);
        let e = EnergySpec::from_fn(&g, |x| 5.0 * (x[0] - 0.3).powi(2)).unwrap();
        let rho = Density::from_fn(g.clone(), |x| (-(x[0] - 0.7).powi(2) / 0.01).exp() + 0.05).unwrap();
        let cfg = JkoConfig::new(1e-2, 1).unwrap();
        let (r, s) = jko_step_entropic(&rho, &e, &b, &cfg).unwrap();
        assert!(s.converged);
        assert!((r.total_mass() - 1.0).abs() < 1e-12);
        assert!(s.objective <= s.objective_start + s.dissipation_slack + 1e-13);
        assert!(s.dissipation_slack >= 0.0);
        // energy decreased
        assert!(e.free_energy(&r) < e.free_energy(&rho));
    }
}
