//! Exact discrete Kantorovich problem by successive shortest paths.
//!
//! Sources and sinks are the grid nodes; arcs are complete bipartite with
//! unbounded capacity. Each round runs a dense Dijkstra on reduced costs
//! `c_ij + π_i − π_j` from every source with remaining supply, augments along
//! the path to the nearest sink with remaining demand, and updates the node
//! potentials. The final potentials are an optimal dual pair.

use super::{check_marginals, dual_objective, Coupling, CostMatrix, DistanceReport, Method};
use crate::error::{Error, Result};
use crate::grid::Density;
use crate::scalar::Real;

/// Largest number of nodes per marginal accepted by the exact solver.
pub const MAX_EXACT_NODES: usize = 512;

pub fn solve_kantorovich_exact<T: Real>(
    rho0: &Density<T>,
    rho1: &Density<T>,
    c: &CostMatrix<T>,
) -> Result<(Coupling<T>, DistanceReport<T>)> {
    check_marginals(rho0, rho1)?;
    rho0.grid().check_same(c.grid())?;
    let n = rho0.len();
    if n > MAX_EXACT_NODES {
        return Err(Error::SizeExceeded { size: n, limit: MAX_EXACT_NODES });
    }
    let p = rho0.masses();
    let q = rho1.masses();
    let (flow, pot_s, pot_t, rounds) = ssp(&p, &q, c)?;

    let mut phi: Vec<T> = pot_s.iter().map(|&v| -v).collect();
    let mut psi = pot_t;
    // One round of c-transforms removes rounding slack from the constraint.
    for j in 0..n {
        psi[j] = (0..n).map(|i| c.get(i, j) - phi[i]).fold(T::infinity(), T::min);
    }
    for i in 0..n {
        phi[i] = (0..n).map(|j| c.get(i, j) - psi[j]).fold(T::infinity(), T::min);
    }

    let mut atoms = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let m = flow[i * n + j];
            if m > T::zero() {
                atoms.push((i, j, m));
            }
        }
    }
    let dual = dual_objective(&phi, &psi, rho0, rho1);
    let coupling = Coupling::new(atoms, rho0, rho1, |i, j| c.get(i, j), Some((phi, psi)));
    let primal = coupling.transport_cost();
    let report = DistanceReport {
        wa_squared: primal,
        method: Method::ExactLp,
        dual_value: Some(dual),
        gap: Some(primal - dual),
        marginal_defect: coupling.marginal_defect(),
        iterations: rounds,
        converged: true,
    };
    Ok((coupling, report))
}

type SspOut<T> = (Vec<T>, Vec<T>, Vec<T>, usize);

fn ssp<T: Real>(p: &[T], q: &[T], c: &CostMatrix<T>) -> Result<SspOut<T>> {
    let n = p.len();
    let total = p.iter().copied().fold(T::zero(), |a, b| a + b);
    let eps = total * T::lit(1e-15);
    let mut supply: Vec<T> = p.iter().map(|&v| if v > eps { v } else { T::zero() }).collect();
    let mut demand: Vec<T> = q.iter().map(|&v| if v > eps { v } else { T::zero() }).collect();
    let mut flow = vec![T::zero(); n * n];
    let mut pot_s = vec![T::zero(); n];
    let mut pot_t = vec![T::zero(); n];

    let inf = T::infinity();
    let mut dist_s = vec![inf; n];
    let mut dist_t = vec![inf; n];
    let mut done_s = vec![false; n];
    let mut done_t = vec![false; n];
    // predecessor of a sink is a source, of a source is a sink (None: root)
    let mut pred_t = vec![usize::MAX; n];
    let mut pred_s = vec![usize::MAX; n];

    let max_rounds = 50 * n * n + 100;
    let mut rounds = 0;
    loop {
        let remaining = supply.iter().copied().fold(T::zero(), |a, b| a + b);
        if remaining <= eps {
            break;
        }
        if !demand.iter().any(|&d| d > T::zero()) {
            break;
        }
        rounds += 1;
        if rounds > max_rounds {
            return Err(Error::NoConvergence {
                iterations: rounds,
                residual: remaining.to_f64_lossy(),
            });
        }

        dist_s.iter_mut().for_each(|d| *d = inf);
        dist_t.iter_mut().for_each(|d| *d = inf);
        done_s.iter_mut().for_each(|d| *d = false);
        done_t.iter_mut().for_each(|d| *d = false);
        for i in 0..n {
            if supply[i] > T::zero() {
                dist_s[i] = T::zero();
                pred_s[i] = usize::MAX;
            }
        }
        // Dense Dijkstra over 2n nodes.
        let target = loop {
            let mut best = inf;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..n {
                if !done_s[i] && dist_s[i] < best {
                    best = dist_s[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..n {
                if !done_t[j] && dist_t[j] < best {
                    best = dist_t[j];
                    pick = Some((false, j));
                }
            }
            let Some((is_source, u)) = pick else {
                return Err(Error::SolverFailure("no sink reachable".into()));
            };
            if is_source {
                done_s[u] = true;
                let row = c.row(u);
                for j in 0..n {
                    if done_t[j] {
                        continue;
                    }
                    let r = (row[j] + pot_s[u] - pot_t[j]).max(T::zero());
                    let d = best + r;
                    if d < dist_t[j] {
                        dist_t[j] = d;
                        pred_t[j] = u;
                    }
                }
            } else {
                done_t[u] = true;
                if demand[u] > T::zero() {
                    break u;
                }
                // backward arcs t_u -> s_i where flow is positive
                for i in 0..n {
                    if done_s[i] || flow[i * n + u] <= T::zero() {
                        continue;
                    }
                    let r = (pot_t[u] - pot_s[i] - c.get(i, u)).max(T::zero());
                    let d = best + r;
                    if d < dist_s[i] {
                        dist_s[i] = d;
                        pred_s[i] = u;
                    }
                }
            }
        };

        let dmax = dist_t[target];
        for i in 0..n {
            pot_s[i] = pot_s[i] + dist_s[i].min(dmax);
        }
        for j in 0..n {
            pot_t[j] = pot_t[j] + dist_t[j].min(dmax);
        }

        // Bottleneck along the path.
        let mut delta = demand[target];
        let mut j = target;
        let root;
        loop {
            let i = pred_t[j];
            let k = pred_s[i];
            if k == usize::MAX {
                root = i;
                break;
            }
            delta = delta.min(flow[i * n + k]);
            j = k;
        }
        delta = delta.min(supply[root]);

        // Augment; quantities that hit the bottleneck are zeroed exactly.
        let mut j = target;
        loop {
            let i = pred_t[j];
            flow[i * n + j] = flow[i * n + j] + delta;
            let k = pred_s[i];
            if k == usize::MAX {
                break;
            }
            let f = &mut flow[i * n + k];
            *f = if *f <= delta { T::zero() } else { *f - delta };
            j = k;
        }
        supply[root] = if supply[root] <= delta { T::zero() } else { supply[root] - delta };
        demand[target] = if demand[target] <= delta { T::zero() } else { demand[target] - delta };
        if supply[root] <= eps {
            supply[root] = T::zero();
        }
        if demand[target] <= eps {
            demand[target] = T::zero();
        }
    }
    Ok((flow, pot_s, pot_t, rounds))
}
