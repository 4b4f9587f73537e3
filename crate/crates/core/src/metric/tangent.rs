//! Tangent-space pairing on a line.
//!
//! For a zero-mean perturbation `s` the potential `p` solves
//! `−(ρ A p')' = s` with zero flux at both ends. With face flux
//! `G_{i+1/2} = k_f (p_{i+1} − p_i)/h`, `k_f = ρ_f A_f`, the balance
//! `G_{i+1/2} − G_{i−1/2} = −s_i w_i` gives `G` by a running sum and `p` by
//! integrating once more. The pairing is `Σ s₁ p₂ w`.

use serde::{Deserialize, Serialize};

use crate::embedding::MobilityField;
use crate::error::{Error, Result};
use crate::grid::Density;
use crate::scalar::{pairwise_sum, Real};

const RHO_FLOOR: f64 = 1e-300;

fn check_inputs<T: Real>(rho: &Density<T>, s: &[T], field: &MobilityField<T>) -> Result<()> {
    let g = rho.grid();
    g.check_same(field.grid())?;
    if g.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: g.dim() });
    }
    if s.len() != g.len() {
        return Err(Error::InvalidParameter("perturbation length does not match grid".into()));
    }
    let mean = pairwise_sum(&(0..g.len()).map(|i| s[i] * g.weight(i)).collect::<Vec<_>>());
    let scale = T::one().max(s.iter().fold(T::zero(), |a, &b| a.max(b.abs())));
    if mean.abs() > T::lit(1e-12) * scale {
        return Err(Error::InvalidParameter(format!("perturbation has nonzero integral {mean}")));
    }
    Ok(())
}

/// Face conductances `ρ_f A_f` with averaged (floored) density and mobility.
fn conductances<T: Real>(rho: &Density<T>, field: &MobilityField<T>) -> Vec<T> {
    let v = rho.values();
    (0..v.len() - 1)
        .map(|f| {
            let r = ((v[f] + v[f + 1]) * T::half()).max(T::lit(RHO_FLOOR));
            r * face_mobility(field, f)
        })
        .collect()
}

fn face_mobility<T: Real>(field: &MobilityField<T>, f: usize) -> T {
    (field.a_scalar(f) + field.a_scalar(f + 1)) * T::half()
}

/// Face fluxes `G` that balance `s`, i.e. `G_{i+1/2} = −Σ_{l≤i} s_l w_l`.
fn balancing_flux<T: Real>(rho: &Density<T>, s: &[T]) -> Vec<T> {
    let g = rho.grid();
    let mut acc = T::zero();
    (0..g.len() - 1)
        .map(|i| {
            acc = acc + s[i] * g.weight(i);
            -acc
        })
        .collect()
}

/// Zero-mean potential `p` of the perturbation `s`.
pub fn potential<T: Real>(rho: &Density<T>, s: &[T], field: &MobilityField<T>) -> Result<Vec<T>> {
    check_inputs(rho, s, field)?;
    let g = rho.grid();
    let h = g.h(0);
    let k = conductances(rho, field);
    let flux = balancing_flux(rho, s);
    let mut p = vec![T::zero(); g.len()];
    for f in 0..g.len() - 1 {
        if !(k[f] > T::zero()) || !k[f].is_finite() {
            return Err(Error::SingularOperator(format!("face {f} has conductance {}", k[f])));
        }
        p[f + 1] = p[f] + flux[f] * h / k[f];
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularOperator("potential overflowed".into()));
    }
    let mean = pairwise_sum(&(0..g.len()).map(|i| p[i] * g.weight(i)).collect::<Vec<_>>()) / g.volume();
    Ok(p.into_iter().map(|v| v - mean).collect())
}

/// `g_ρ(s₁, s₂) = Σ s₁ p₂ w`.
pub fn tangent_pairing<T: Real>(rho: &Density<T>, s1: &[T], s2: &[T], field: &MobilityField<T>) -> Result<T> {
    check_inputs(rho, s1, field)?;
    let p2 = potential(rho, s2, field)?;
    let g = rho.grid();
    let terms: Vec<T> = (0..g.len()).map(|i| s1[i] * p2[i] * g.weight(i)).collect();
    Ok(pairwise_sum(&terms))
}

/// Face velocity `v = A ∇p` of the minimal-action field.
pub fn optimal_velocity<T: Real>(rho: &Density<T>, s: &[T], field: &MobilityField<T>) -> Result<Vec<T>> {
    let p = potential(rho, s, field)?;
    let h = rho.grid().h(0);
    Ok((0..p.len() - 1)
        .map(|f| face_mobility(field, f) * (p[f + 1] - p[f]) / h)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MinimalityReport<T: Real> {
    /// `g_ρ(s, s)`.
    pub pairing: T,
    /// Action `Σ h ρ_f v_f² B_f` of each trial.
    pub trial_actions: Vec<T>,
    /// Action of `v = A∇p`.
    pub optimal_action: T,
    /// Smallest `action − pairing` over the trials.
    pub min_margin: T,
    pub passed: bool,
}

/// Checks that every admissible face velocity has action at least
/// `g_ρ(s, s)` and that `v = A∇p` attains it. Face friction is `1/A_f`.
pub fn minimality_check<T: Real>(
    rho: &Density<T>,
    s: &[T],
    field: &MobilityField<T>,
    trials: &[Vec<T>],
) -> Result<MinimalityReport<T>> {
    check_inputs(rho, s, field)?;
    let g = rho.grid();
    let n = g.len();
    let h = g.h(0);
    let v = rho.values();
    let rho_f: Vec<T> = (0..n - 1).map(|f| (v[f] + v[f + 1]) * T::half()).collect();
    let target = balancing_flux(rho, s);
    let scale = T::one().max(target.iter().fold(T::zero(), |a, &b| a.max(b.abs())));
    let action = |vel: &[T]| -> T {
        let t: Vec<T> = (0..n - 1)
            .map(|f| h * rho_f[f] * vel[f] * vel[f] / face_mobility(field, f))
            .collect();
        pairwise_sum(&t)
    };
    let pairing = tangent_pairing(rho, s, s, field)?;
    let mut trial_actions = Vec::with_capacity(trials.len());
    let mut min_margin = T::infinity();
    for vel in trials {
        if vel.len() != n - 1 {
            return Err(Error::InvalidParameter("one velocity per face expected".into()));
        }
        let defect = (0..n - 1)
            .map(|f| (rho_f[f] * vel[f] - target[f]).abs())
            .fold(T::zero(), T::max);
        if defect > T::lit(1e-9) * scale {
            return Err(Error::ConstraintViolated(defect.to_f64_lossy()));
        }
        let a = action(vel);
        min_margin = min_margin.min(a - pairing);
        trial_actions.push(a);
    }
    let optimal_action = action(&optimal_velocity(rho, s, field)?);
    let tol = T::lit(1e-9) * T::one().max(pairing.abs());
    let passed = min_margin >= -tol && (optimal_action - pairing).abs() <= tol;
    Ok(MinimalityReport { pairing, trial_actions, optimal_action, min_margin, passed })
}
