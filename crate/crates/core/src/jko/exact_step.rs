//! Unregularised JKO step for small grids, used as the oracle for the
//! entropic solver.
//!
//! Exponentiated-gradient descent on the row simplices of the objective
//! `⟨C, π⟩ + F(πᵀ1)` (`C = c/2τ`). Every 50 iterations the support is
//! identified (maximum spanning forest of the significant entries) and the
//! KKT system on that forest is solved in closed form: on each tree
//! `λ_i = C_ij + h_j` with `h_j = log(q_j/w_j) + 1 + Ψ_j`, one additive
//! constant per tree fixed by mass balance, flows by leaf elimination. Edges
//! that come out with negative flow are dropped and the smaller forest is
//! solved again; the result is accepted only if it is dual feasible.

use rayon::prelude::*;

use super::energy::EnergySpec;
use super::{InnerSolver, JkoConfig, StepReport};
use crate::embedding::EmbeddingMap;
use crate::error::{Error, Result};
use crate::grid::Density;
use crate::metric::cost_matrix;
use crate::scalar::{log_sum_exp, pairwise_sum, Real};

pub const MAX_EXACT_SMALL_NODES: usize = 64;

const STEP: f64 = 0.5;
const POLISH_EVERY: usize = 50;

struct Problem<T: Real> {
    n: usize,
    p: Vec<T>,
    log_w: Vec<T>,
    psi: Vec<T>,
    cs: Vec<T>,
}

impl<T: Real> Problem<T> {
    fn h_of(&self, j: usize, log_q: T) -> T {
        log_q - self.log_w[j] + T::one() + self.psi[j]
    }

    fn objective(&self, plan: &[T]) -> T {
        let n = self.n;
        let mut t = Vec::with_capacity(n * n + n);
        for k in 0..n * n {
            t.push(plan[k] * self.cs[k]);
        }
        for j in 0..n {
            let q: T = (0..n).map(|i| plan[i * n + j]).sum();
            if q > T::zero() {
                t.push(q * (q.ln() - self.log_w[j] + self.psi[j]));
            }
        }
        pairwise_sum(&t)
    }

    /// One exponentiated-gradient sweep in log space.
    fn mirror_step(&self, lpi: &mut [T]) {
        let n = self.n;
        let log_q: Vec<T> = (0..n)
            .map(|j| log_sum_exp((0..n).filter(|&i| self.p[i] > T::zero()).map(|i| lpi[i * n + j])))
            .collect();
        let h: Vec<T> = (0..n).map(|j| self.h_of(j, log_q[j])).collect();
        let eta = T::lit(STEP);
        lpi.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            if !(self.p[i] > T::zero()) {
                return;
            }
            let crow = &self.cs[i * n..(i + 1) * n];
            let m = (0..n).map(|j| crow[j] + h[j]).fold(T::infinity(), T::min);
            for j in 0..n {
                row[j] = row[j] - eta * (crow[j] + h[j] - m);
            }
            let l = log_sum_exp(row.iter().copied());
            let lp = self.p[i].ln();
            for v in row.iter_mut() {
                *v = *v - l + lp;
            }
        });
    }

    /// Complementary-slackness gap `max_i Σ_j π_ij (G_ij − min_j G_ij) / p_i`.
    fn slackness(&self, plan: &[T]) -> T {
        let n = self.n;
        let h: Vec<T> = (0..n)
            .map(|j| {
                let q: T = (0..n).map(|i| plan[i * n + j]).sum();
                self.h_of(j, q.max(T::min_positive_value()).ln())
            })
            .collect();
        (0..n)
            .filter(|&i| self.p[i] > T::zero())
            .map(|i| {
                let crow = &self.cs[i * n..(i + 1) * n];
                let m = (0..n).map(|j| crow[j] + h[j]).fold(T::infinity(), T::min);
                (0..n).map(|j| plan[i * n + j] * (crow[j] + h[j] - m)).sum::<T>() / self.p[i]
            })
            .fold(T::zero(), T::max)
    }

    /// Closed-form KKT solve on the support forest of `plan`; returns the
    /// exact plan and its KKT residual when it is feasible.
    fn polish(&self, plan: &[T]) -> Option<(Vec<T>, T)> {
        let n = self.n;
        let q: Vec<T> = (0..n).map(|j| (0..n).map(|i| plan[i * n + j]).sum()).collect();
        // candidate edges: significant for the row, plus the heaviest entry of each column
        let mut cand: Vec<(usize, usize, T)> = Vec::new();
        let thr = T::lit(1e-6);
        for i in 0..n {
            if self.p[i] > T::zero() {
                for j in 0..n {
                    let m = plan[i * n + j];
                    if m > thr * self.p[i] {
                        cand.push((i, j, m / self.p[i].min(q[j])));
                    }
                }
            }
        }
        for j in 0..n {
            if let Some(i) = (0..n)
                .filter(|&i| self.p[i] > T::zero())
                .max_by(|&a, &b| plan[a * n + j].partial_cmp(&plan[b * n + j]).unwrap())
            {
                let m = plan[i * n + j];
                if m > T::zero() && m <= thr * self.p[i] {
                    cand.push((i, j, m / self.p[i].min(q[j])));
                }
            }
        }
        cand.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then((a.0, a.1).cmp(&(b.0, b.1))));
        // Kruskal on rows 0..n and columns n..2n
        let mut parent: Vec<usize> = (0..2 * n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &(i, j, _) in &cand {
            let (a, b) = (find(&mut parent, i), find(&mut parent, n + j));
            if a != b {
                parent[a] = b;
                edges.push((i, j));
            }
        }
        // A degenerate optimum has fewer support edges than a spanning tree;
        // an edge that closes the forest wrongly shows up with negative flow
        // and is dropped before solving again.
        loop {
            let (flow, lam, hv, imbalance) = self.solve_forest(&edges)?;
            let (worst, neg_flow) = flow
                .iter()
                .enumerate()
                .fold((0, T::zero()), |(k, m), (e, &f)| if -f > m { (e, -f) } else { (k, m) });
            if neg_flow > T::zero() && edges.len() > 1 {
                edges.swap_remove(worst);
                continue;
            }
            let mut dual_viol = T::zero();
            for i in 0..n {
                if self.p[i] > T::zero() {
                    for j in 0..n {
                        dual_viol = dual_viol.max(lam[i] - self.cs[i * n + j] - hv[j]);
                    }
                }
            }
            if dual_viol > T::lit(1e-10) {
                return None;
            }
            let mut out = vec![T::zero(); n * n];
            for (e, &(i, j)) in edges.iter().enumerate() {
                out[i * n + j] = flow[e];
            }
            return Some((out, imbalance.max(dual_viol)));
        }
    }

    /// KKT solution on a forest: `λ_i = C_ij + h_j` along its edges, one
    /// additive constant per tree fixed by mass balance, flows by leaf
    /// elimination. Returns flows, `λ`, `h` and the worst nodal imbalance.
    fn solve_forest(&self, edges: &[(usize, usize)]) -> Option<(Vec<T>, Vec<T>, Vec<T>, T)> {
        let n = self.n;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); 2 * n];
        for (e, &(i, j)) in edges.iter().enumerate() {
            adj[i].push(e);
            adj[n + j].push(e);
        }
        let other = |e: usize, v: usize| if v < n { n + edges[e].1 } else { edges[e].0 };

        let mut offset = vec![T::zero(); 2 * n];
        let mut comp = vec![usize::MAX; 2 * n];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for root in 0..2 * n {
            if comp[root] != usize::MAX || (root < n && !(self.p[root] > T::zero())) {
                continue;
            }
            let id = comps.len();
            let mut members = vec![root];
            comp[root] = id;
            let mut k = 0;
            while k < members.len() {
                let v = members[k];
                k += 1;
                for &e in &adj[v] {
                    let u = other(e, v);
                    if comp[u] == usize::MAX {
                        comp[u] = id;
                        let (i, j) = edges[e];
                        let c = self.cs[i * n + j];
                        // λ_i = C_ij + h_j
                        offset[u] = if u < n { offset[v] + c } else { offset[v] - c };
                        members.push(u);
                    }
                }
            }
            comps.push(members);
        }

        let mut lam = vec![T::zero(); n];
        let mut hv = vec![T::zero(); n];
        let mut qn = vec![T::zero(); n];
        for members in &comps {
            let rows: Vec<usize> = members.iter().copied().filter(|&v| v < n).collect();
            let cols: Vec<usize> = members.iter().copied().filter(|&v| v >= n).map(|v| v - n).collect();
            if rows.is_empty() || cols.is_empty() {
                return None;
            }
            let supply = pairwise_sum(&rows.iter().map(|&i| self.p[i]).collect::<Vec<_>>());
            let l = log_sum_exp(cols.iter().map(|&j| self.log_w[j] + offset[n + j] - T::one() - self.psi[j]));
            let t = supply.ln() - l;
            for &i in &rows {
                lam[i] = t + offset[i];
            }
            for &j in &cols {
                hv[j] = t + offset[n + j];
                qn[j] = (self.log_w[j] + hv[j] - T::one() - self.psi[j]).exp();
            }
        }

        let mut resid: Vec<T> = (0..2 * n).map(|v| if v < n { self.p[v] } else { qn[v - n] }).collect();
        let mut deg: Vec<usize> = adj.iter().map(|a| a.len()).collect();
        let mut done = vec![false; edges.len()];
        let mut flow = vec![T::zero(); edges.len()];
        let mut stack: Vec<usize> = (0..2 * n).filter(|&v| deg[v] == 1).collect();
        while let Some(v) = stack.pop() {
            if deg[v] != 1 {
                continue;
            }
            let e = match adj[v].iter().copied().find(|&e| !done[e]) {
                Some(e) => e,
                None => continue,
            };
            done[e] = true;
            flow[e] = resid[v];
            resid[v] = T::zero();
            deg[v] = 0;
            let u = other(e, v);
            resid[u] = resid[u] - flow[e];
            deg[u] -= 1;
            if deg[u] == 1 {
                stack.push(u);
            }
        }
        let imbalance = resid.iter().map(|r| r.abs()).fold(T::zero(), T::max);
        Some((flow, lam, hv, imbalance))
    }
}

fn setup<T: Real>(
    rho_n: &Density<T>,
    e: &EnergySpec<T>,
    b: &EmbeddingMap<T>,
    config: &JkoConfig<T>,
) -> Result<Problem<T>> {
    config.validate()?;
    let n = rho_n.len();
    if n > MAX_EXACT_SMALL_NODES {
        return Err(Error::SizeExceeded { size: n, limit: MAX_EXACT_SMALL_NODES });
    }
    rho_n.grid().check_same(b.grid())?;
    rho_n.grid().check_same(e.grid())?;
    let c = cost_matrix(b)?;
    let inv = (T::two() * config.tau).recip();
    let mut cs = Vec::with_capacity(n * n);
    for i in 0..n {
        cs.extend(c.row(i).iter().map(|&x| x * inv));
    }
    let g = rho_n.grid();
    Ok(Problem {
        n,
        p: rho_n.masses(),
        log_w: (0..n).map(|j| g.weight(j).ln()).collect(),
        psi: e.psi().to_vec(),
        cs,
    })
}

/// One JKO step solved to the configured KKT tolerance (at most 64 nodes).
pub fn jko_step_exact_small<T: Real>(
    rho_n: &Density<T>,
    e: &EnergySpec<T>,
    b: &EmbeddingMap<T>,
    config: &JkoConfig<T>,
) -> Result<(Density<T>, StepReport<T>)> {
    let n = rho_n.len();
    let p = rho_n.masses();
    let mut start = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            start[i * n + j] = p[i] / T::from_usize_lossy(n);
        }
    }
    jko_step_exact_small_from(rho_n, e, b, config, &start)
}

/// As [`jko_step_exact_small`], started from the given plan (row-major,
/// strictly positive where the row mass is; rows are rescaled to `ρⁿ`).
pub fn jko_step_exact_small_from<T: Real>(
    rho_n: &Density<T>,
    e: &EnergySpec<T>,
    b: &EmbeddingMap<T>,
    config: &JkoConfig<T>,
    start: &[T],
) -> Result<(Density<T>, StepReport<T>)> {
    let pb = setup(rho_n, e, b, config)?;
    let n = pb.n;
    if start.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, found: start.len() });
    }
    let mut lpi = vec![T::neg_infinity(); n * n];
    for i in 0..n {
        if pb.p[i] > T::zero() {
            let row = &start[i * n..(i + 1) * n];
            if row.iter().any(|&v| !(v > T::zero())) {
                return Err(Error::InvalidParameter("start plan must be positive on occupied rows".into()));
            }
            let s: T = row.iter().copied().sum();
            for j in 0..n {
                lpi[i * n + j] = (row[j] / s * pb.p[i]).ln();
            }
        }
    }
    let tol = config.tolerances.kkt;
    let max_iter = config.tolerances.max_mirror;
    let to_plan = |lpi: &[T]| lpi.iter().map(|&v| v.exp()).collect::<Vec<T>>();
    let mut result: Option<(Vec<T>, T, usize)> = None;
    for it in 1..=max_iter {
        pb.mirror_step(&mut lpi);
        if it % POLISH_EVERY == 0 {
            if let Some((plan, r)) = pb.polish(&to_plan(&lpi)) {
                if r <= tol {
                    result = Some((plan, r, it));
                    break;
                }
            }
        }
    }
    let (plan, kkt, iterations, converged) = match result {
        Some((plan, r, it)) => (plan, r, it, true),
        None => {
            let plan = to_plan(&lpi);
            let r = pb.slackness(&plan);
            if r > tol {
                return Err(Error::NoConvergence { iterations: max_iter, residual: r.to_f64_lossy() });
            }
            (plan, r, max_iter, true)
        }
    };
    let col: Vec<T> = (0..n).map(|j| pairwise_sum(&(0..n).map(|i| plan[i * n + j]).collect::<Vec<_>>())).collect();
    let rho = Density::from_masses_normalized(rho_n.grid().clone(), &col)?;
    let two_tau = T::two() * config.tau;
    let plan_cost = pairwise_sum(&(0..n * n).map(|k| plan[k] * pb.cs[k]).collect::<Vec<_>>()) * two_tau;
    let f_new = e.free_energy(&rho);
    debug_assert!((pb.objective(&plan) - (plan_cost / two_tau + f_new)).abs() < T::lit(1e-9));
    let report = StepReport {
        solver: InnerSolver::ExactSmall,
        epsilon: None,
        iterations,
        converged,
        plan_cost,
        objective_start: e.free_energy(rho_n),
        objective: plan_cost / two_tau + f_new,
        marginal_defect: (rho.total_mass() - T::one()).abs(),
        duality_gap: T::zero(),
        kkt_residual: kkt,
        dissipation_slack: T::lit(10.0) * tol,
    };
    Ok((rho, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Anchor;
    use crate::grid::Grid;
    use crate::jko::{jko_step_entropic, EpsilonSchedule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize) -> (Grid<f64>, EmbeddingMap<f64>) {
        let g = Grid::line(0.0, 1.0, n).unwrap();
        let b = EmbeddingMap::build_1d_fn(&g, |x: f64| (2.0 * x).exp(), Anchor::Origin).unwrap();
        (g, b)
    }

    #[test]
    fn two_nodes_symmetric() {
        let g = Grid::<f64>::line(0.0, 1.0, 2).unwrap();
        let b = EmbeddingMap::build_1d_fn(&g, |_| 1.0, Anchor::Origin).unwrap();
        let r = Density::uniform(g.clone());
        let (out, s) = jko_step_exact_small(&r, &EnergySpec::zero(&g), &b, &JkoConfig::new(0.1, 1).unwrap()).unwrap();
        assert!(s.converged);
        assert!((out.values()[0] - out.values()[1]).abs() < 1e-12);
    }

    #[test]
    fn size_limit() {
        let (g, b) = line(65);
        let r = Density::uniform(g.clone());
        let res = jko_step_exact_small(&r, &EnergySpec::zero(&g), &b, &JkoConfig::new(0.1, 1).unwrap());
        assert!(matches!(res, Err(Error::SizeExceeded { .. })));
    }

    #[test]
    fn unique_minimizer_from_two_random_starts() {
        let (g, b) = line(16);
        let e = EnergySpec::from_fn(&g, |x| 2.0 * x[0]).unwrap();
        let r = Density::from_fn(g.clone(), |x| 1.0 + 0.8 * (5.0 * x[0]).cos()).unwrap();
        let cfg = JkoConfig::new(0.02, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut outs = Vec::new();
        for _ in 0..2 {
            let s: Vec<f64> = (0..256).map(|_| rng.gen_range(0.1..1.0)).collect();
            let (o, rep) = jko_step_exact_small_from(&r, &e, &b, &cfg, &s).unwrap();
            assert!(rep.kkt_residual <= 1e-8);
            outs.push(o);
        }
        assert!(outs[0].l1_distance(&outs[1]).unwrap() < 1e-7);
    }

    #[test]
    fn entropic_objective_tends_to_exact() {
        let (g, b) = line(16);
        let e = EnergySpec::from_fn(&g, |x| 3.0 * (x[0] - 0.4).powi(2)).unwrap();
        let r = Density::from_fn(g.clone(), |x| (-(x[0] - 0.8).powi(2) / 0.02).exp() + 0.1).unwrap();
        let cfg = JkoConfig::new(0.02, 1).unwrap();
        let (ex, se) = jko_step_exact_small(&r, &e, &b, &cfg).unwrap();
        // objective of the exact solution is below any feasible plan
        assert!(se.objective <= se.objective_start + se.dissipation_slack);
        let mut last = f64::INFINITY;
        let mut dens = Vec::new();
        for eps in [2e-5, 1e-5] {
            let mut c = cfg.with_epsilon(EpsilonSchedule::Fixed(eps));
            c.eps_floor = 1e-12;
            let (d, s) = jko_step_entropic(&r, &e, &b, &c).unwrap();
            let gap = (s.objective - se.objective).abs();
            assert!(gap < last);
            last = gap;
            dens.push(d);
        }
        assert!(last < 1e-4, "objective gap {last}");
        // Richardson extrapolation in eps against the oracle
        let extra: Vec<f64> = (0..16).map(|i| 2.0 * dens[1].values()[i] - dens[0].values()[i]).collect();
        let l1: f64 = (0..16).map(|i| (extra[i] - ex.values()[i]).abs() * g.weight(i)).sum();
        assert!(l1 < 1e-4, "extrapolated L1 {l1}");
    }
}
