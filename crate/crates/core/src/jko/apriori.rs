//! Audit of the a priori estimates of the scheme on a computed trajectory.
//!
//! Each check records the bound without slack (`rhs`), the worst instance
//! (`lhs`), the excess `lhs − rhs` (negative means margin) and the slack the
//! solver certified for it. `inf F` is taken as `F` at the Gibbs density,
//! which is the exact minimum of the discrete `F`.

use serde::{Deserialize, Serialize};

use super::scheme::{distance_squared, JkoTrajectory};
use crate::scalar::{pairwise_sum, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BoundCheck<T: Real> {
    pub name: String,
    pub lhs: T,
    pub rhs: T,
    pub excess: T,
    pub allowed_slack: T,
    pub holds: bool,
    /// Index (or index pair) of the worst instance.
    pub at: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AprioriReport<T: Real> {
    pub f0: T,
    pub inf_f: T,
    pub total_slack: T,
    pub checks: Vec<BoundCheck<T>>,
    pub violations: Vec<String>,
    /// Whether all pairs `(m, n)` entered the distance bounds or only
    /// `(0, n)` (2D grids, where each pair is an LP solve).
    pub all_pairs: bool,
}

impl<T: Real> AprioriReport<T> {
    pub fn all_hold(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn check(&self, name: &str) -> Option<&BoundCheck<T>> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Worst<T: Real> {
    name: &'static str,
    lhs: T,
    rhs: T,
    slack: T,
    at: (usize, usize),
    set: bool,
}

impl<T: Real> Worst<T> {
    fn new(name: &'static str) -> Self {
        Self { name, lhs: T::zero(), rhs: T::zero(), slack: T::zero(), at: (0, 0), set: false }
    }

    fn offer(&mut self, lhs: T, rhs: T, slack: T, at: (usize, usize)) {
        if !self.set || lhs - rhs - slack > self.lhs - self.rhs - self.slack {
            *self = Self { name: self.name, lhs, rhs, slack, at, set: true };
        }
    }

    fn finish(self) -> BoundCheck<T> {
        let excess = self.lhs - self.rhs;
        let round = T::lit(1e-12) * self.rhs.abs().max(self.lhs.abs()).max(T::one());
        BoundCheck {
            name: self.name.to_string(),
            lhs: self.lhs,
            rhs: self.rhs,
            excess,
            allowed_slack: self.slack,
            holds: !self.set || excess <= self.slack + round,
            at: self.at,
        }
    }
}

/// Energy (`en`), square-sum (`sq`), Hölder (`mn`, plus the chain check
/// against direct distances), entropy lower bound (`sm`), moment growth
/// (`mw`) and the interpolant estimate with constant √6 (`holder`).
pub fn apriori_report<T: Real>(traj: &JkoTrajectory<T>) -> AprioriReport<T> {
    let led = &traj.ledger;
    let nst = traj.steps();
    let tau = traj.tau;
    let f0 = led[0].free_energy;
    let inf_f = traj.inf_free_energy;
    let slacks: Vec<T> = led.iter().map(|e| e.slacks.dissipation).collect();
    let total_slack = pairwise_sum(&slacks);
    let budget = (f0 - inf_f).max(T::zero());

    let mut en = Worst::new("en");
    let mut cum = T::zero();
    for (k, e) in led.iter().enumerate() {
        cum = cum + slacks[k];
        en.offer(e.free_energy, f0, cum, (k, k));
    }

    let mut sq = Worst::new("sq");
    let w2: Vec<T> = led.iter().skip(1).map(|e| e.wa_squared).collect();
    let two_tau = T::two() * tau;
    sq.offer(pairwise_sum(&w2), two_tau * budget, two_tau * total_slack, (0, nst));

    // pairwise distances
    let emb = traj.embedding();
    let all_pairs = emb.grid().dim() == 1;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for n in 1..=nst {
        if all_pairs {
            pairs.extend((0..n).map(|m| (m, n)));
        } else {
            pairs.push((0, n));
        }
    }
    let mut mn = Worst::new("mn");
    let mut holder = Worst::new("holder");
    let mut chain = Worst::new("chain");
    let mut missing = false;
    for &(m, n) in &pairs {
        let w = if n == m + 1 {
            Some(led[n].wa_squared)
        } else {
            distance_squared(&traj.densities[m], &traj.densities[n], emb).ok().flatten()
        };
        let w = match w {
            Some(v) => v.max(T::zero()).sqrt(),
            None => {
                missing = true;
                continue;
            }
        };
        let k = T::from_usize_lossy(n - m);
        let r = (two_tau * k * budget).sqrt();
        let rs = (two_tau * k * (budget + total_slack)).sqrt();
        mn.offer(w, r, rs - r, (m, n));
        let h = (T::lit(6.0) * budget * (k * tau + tau)).sqrt();
        let hs = (T::lit(6.0) * (budget + total_slack) * (k * tau + tau)).sqrt();
        holder.offer(w, h, hs - h, (m, n));
        if m == 0 && n == nst {
            let chain_sum: T = w2.iter().map(|x| x.max(T::zero()).sqrt()).sum();
            chain.offer(w, chain_sum, T::zero(), (0, n));
        }
    }

    // entropy lower bound with eps = 1/(8 tau)
    let g = emb.grid();
    let eps = (T::lit(8.0) * tau).recip();
    let zb: Vec<T> = (0..g.len())
        .map(|i| {
            let y = emb.value(i);
            (-T::two() * (y[0] * y[0] + y[1] * y[1]).sqrt()).exp() * g.weight(i)
        })
        .collect();
    let c_eps = eps.recip() + pairwise_sum(&zb).ln();
    let mut sm = Worst::new("sm");
    let mut mw = Worst::new("mw");
    for (k, e) in led.iter().enumerate() {
        sm.offer(-c_eps - eps * e.moment_b, e.entropy, T::zero(), (k, k));
        if k > 0 {
            mw.offer(e.moment_b, T::two() * e.wa_squared + T::two() * led[k - 1].moment_b, T::zero(), (k - 1, k));
        }
    }

    let checks: Vec<BoundCheck<T>> = [en, sq, mn, chain, sm, mw, holder].into_iter().map(Worst::finish).collect();
    let mut violations: Vec<String> = checks
        .iter()
        .filter(|c| !c.holds)
        .map(|c| format!("{}: {} > {} (+{} slack) at {:?}", c.name, c.lhs, c.rhs, c.allowed_slack, c.at))
        .collect();
    if missing {
        violations.push("some pairwise distances could not be computed".into());
    }
    AprioriReport { f0, inf_f, total_slack, checks, violations, all_pairs }
}
