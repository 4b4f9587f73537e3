//! Discrete weighted kinetic action of a path of densities on a line.
//!
//! Velocities live on the `n − 1` interior faces and are constant on each
//! time interval. The face density is the average of the two adjacent nodes
//! at both ends of the interval, the face friction the average of the nodal
//! values. The discrete continuity equation reads
//! `(m_i^{k+1} − m_i^k)/Δs + J_{i+1/2} − J_{i−1/2} = 0` with `J = ρ̄ v`.

use serde::{Deserialize, Serialize};

use crate::embedding::MobilityField;
use crate::error::{Error, Result};
use crate::grid::Density;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ActionReport<T: Real> {
    pub action: T,
    pub continuity_residual: T,
}

fn face_density<T: Real>(a: &Density<T>, b: &Density<T>, f: usize) -> T {
    let (u, v) = (a.values(), b.values());
    (u[f] + u[f + 1] + v[f] + v[f + 1]) * T::lit(0.25)
}

fn check_path<T: Real>(path: &[Density<T>], field: &MobilityField<T>) -> Result<()> {
    if path.len() < 2 {
        return Err(Error::InvalidParameter("a path needs at least two densities".into()));
    }
    if field.grid().dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: field.grid().dim() });
    }
    for d in path {
        d.grid().check_same(field.grid())?;
    }
    Ok(())
}

/// Face velocities that make `path` satisfy the continuity equation.
/// Faces with zero density get zero velocity.
pub fn velocities_from_path<T: Real>(path: &[Density<T>], tau: T) -> Result<Vec<Vec<T>>> {
    let k = path.len() - 1;
    let ds = tau / T::from_usize_lossy(k);
    let n = path[0].len();
    let mut out = Vec::with_capacity(k);
    for s in 0..k {
        let (a, b) = (&path[s], &path[s + 1]);
        let mut flux = T::zero();
        let mut v = Vec::with_capacity(n - 1);
        for f in 0..n - 1 {
            flux = flux - (b.mass(f) - a.mass(f)) / ds;
            let rho = face_density(a, b, f);
            v.push(if rho > T::zero() { flux / rho } else { T::zero() });
        }
        out.push(v);
    }
    Ok(out)
}

/// `τ Σ_k Δs Σ_f h ρ̄_f v_f² B_f` after checking continuity to `tol`
/// (max-norm of the mass-rate residual).
pub fn dynamic_action<T: Real>(
    path: &[Density<T>],
    velocities: &[Vec<T>],
    field: &MobilityField<T>,
    tau: T,
    tol: T,
) -> Result<ActionReport<T>> {
    check_path(path, field)?;
    let k = path.len() - 1;
    if velocities.len() != k {
        return Err(Error::InvalidParameter(format!(
            "{} velocity slices for {} intervals",
            velocities.len(),
            k
        )));
    }
    let n = path[0].len();
    let h = field.grid().h(0);
    let ds = tau / T::from_usize_lossy(k);
    let bf: Vec<T> = (0..n - 1)
        .map(|f| (field.b_scalar(f) + field.b_scalar(f + 1)) * T::half())
        .collect();
    let mut action = T::zero();
    let mut resid = T::zero();
    for s in 0..k {
        let (a, b) = (&path[s], &path[s + 1]);
        let v = &velocities[s];
        if v.len() != n - 1 {
            return Err(Error::InvalidParameter("one velocity per face expected".into()));
        }
        let flux: Vec<T> = (0..n - 1).map(|f| face_density(a, b, f) * v[f]).collect();
        let mut slice = T::zero();
        for f in 0..n - 1 {
            slice = slice + h * face_density(a, b, f) * v[f] * v[f] * bf[f];
        }
        action = action + ds * slice;
        for i in 0..n {
            let jl = if i > 0 { flux[i - 1] } else { T::zero() };
            let jr = if i + 1 < n { flux[i] } else { T::zero() };
            let r = (b.mass(i) - a.mass(i)) / ds + jr - jl;
            resid = resid.max(r.abs());
        }
    }
    if !(resid <= tol) {
        return Err(Error::ContinuityViolated(resid.to_f64_lossy()));
    }
    Ok(ActionReport { action: tau * action, continuity_residual: resid })
}
