//! Displacement interpolation along straight lines in the embedded space.

use super::Coupling;
use crate::embedding::EmbeddingMap;
use crate::error::{Error, Result};
use crate::grid::{Density, Grid};
use crate::scalar::Real;

/// Adds mass `m` at point `x` to `masses` by linear (bilinear in 2D)
/// splitting among the bracketing nodes. Points outside the box are clamped.
pub fn deposit<T: Real>(grid: &Grid<T>, masses: &mut [T], x: [T; 2], m: T) {
    let mut lo = [0usize; 2];
    let mut fr = [T::zero(); 2];
    for k in 0..grid.dim() {
        let a = grid.axis(k);
        let t = ((x[k] - a.min) / a.h()).max(T::zero()).min(T::from_usize_lossy(a.n - 1));
        let mut i = t.floor().to_usize().unwrap_or(0);
        if i + 1 >= a.n {
            i = a.n - 2;
        }
        lo[k] = i;
        fr[k] = (t - T::from_usize_lossy(i)).max(T::zero()).min(T::one());
    }
    if grid.dim() == 1 {
        let (i, f) = (lo[0], fr[0]);
        masses[i] = masses[i] + m * (T::one() - f);
        masses[i + 1] = masses[i + 1] + m * f;
        return;
    }
    for (di, wi) in [(0usize, T::one() - fr[0]), (1, fr[0])] {
        for (dj, wj) in [(0usize, T::one() - fr[1]), (1, fr[1])] {
            let w = wi * wj;
            if w > T::zero() {
                let idx = grid.flat_index(lo[0] + di, lo[1] + dj);
                masses[idx] = masses[idx] + m * w;
            }
        }
    }
}

/// Density at time `s ∈ [0, τ]` on the geodesic generated by `coupling`.
pub fn geodesic_interpolate<T: Real>(
    coupling: &Coupling<T>,
    b: &EmbeddingMap<T>,
    s: T,
    tau: T,
) -> Result<Density<T>> {
    let grid = b.grid();
    grid.check_same(coupling.row_marginal().grid())?;
    if !(tau > T::zero()) || s < T::zero() || s > tau {
        return Err(Error::InvalidParameter(format!("need 0 <= s <= tau, got s={s}, tau={tau}")));
    }
    if !b.has_inverse() {
        return Err(Error::NotInvertible(format!("{:?} embedding", b.family())));
    }
    let t = s / tau;
    let mut masses = vec![T::zero(); grid.len()];
    for &(i, j, m) in coupling.atoms() {
        let x = if t == T::zero() {
            grid.node(i)
        } else if t == T::one() {
            grid.node(j)
        } else {
            let (bi, bj) = (b.value(i), b.value(j));
            let y = [
                (T::one() - t) * bi[0] + t * bj[0],
                (T::one() - t) * bi[1] + t * bj[1],
            ];
            b.invert(y)?
        };
        deposit(grid, &mut masses, x, m);
    }
    Density::from_masses_normalized(grid.clone(), &masses)
}

/// `k + 1` equally spaced samples of the geodesic on `[0, τ]`.
pub fn geodesic_path<T: Real>(
    coupling: &Coupling<T>,
    b: &EmbeddingMap<T>,
    slices: usize,
    tau: T,
) -> Result<Vec<Density<T>>> {
    (0..=slices)
        .map(|k| {
            let s = if k == slices {
                tau
            } else {
                tau * T::from_usize_lossy(k) / T::from_usize_lossy(slices)
            };
            geodesic_interpolate(coupling, b, s, tau)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Anchor, MobilityField};
    use crate::linalg::Mat2;
    use crate::metric::quantile_coupling;

    #[test]
    fn endpoints_are_exact() {
        let g = Grid::<f64>::line(0.0, 1.0, 40).unwrap();
        let e = EmbeddingMap::build_1d_fn(&g, |x: f64| (2.0 * x).exp(), Anchor::Origin).unwrap();
        let r0 = Density::from_fn(g.clone(), |x| (-(x[0] - 0.2).powi(2) / 0.01).exp()).unwrap();
        let r1 = Density::from_fn(g, |x| 1.0 + x[0]).unwrap();
        let pi = quantile_coupling(&r0, &r1, &e).unwrap();
        let a = geodesic_interpolate(&pi, &e, 0.0, 0.5).unwrap();
        assert!(a.l1_distance(&r0).unwrap() <= 1e-15);
        let b = geodesic_interpolate(&pi, &e, 0.5, 0.5).unwrap();
        assert!(b.l1_distance(&r1).unwrap() <= 1e-12);
    }

    #[test]
    fn midpoint_of_two_point_masses() {
        let g = Grid::<f64>::line(0.0, 1.0, 101).unwrap();
        let e = EmbeddingMap::build_1d_fn(&g, |x: f64| (2.0 * x).exp(), Anchor::Origin).unwrap();
        let mut a = vec![0.0; 101];
        let mut b = vec![0.0; 101];
        a[10] = 1.0;
        b[90] = 1.0;
        let r0 = Density::from_masses(g.clone(), &a).unwrap();
        let r1 = Density::from_masses(g.clone(), &b).unwrap();
        let pi = quantile_coupling(&r0, &r1, &e).unwrap();
        let mid = geodesic_interpolate(&pi, &e, 0.5, 1.0).unwrap();
        let target = e.invert([(e.value(10)[0] + e.value(90)[0]) / 2.0, 0.0]).unwrap()[0];
        // hand computation: b(x) = e^x - 1, midpoint ln((e^0.1 + e^0.9)/2)
        let hand = ((0.1f64.exp() + 0.9f64.exp()) / 2.0).ln();
        assert!((target - hand).abs() < 1e-6);
        let mean = mid.integrate(|x| x[0]);
        assert!((mean - target).abs() < 1e-14);
        let support: Vec<usize> = (0..101).filter(|&i| mid.mass(i) > 0.0).collect();
        assert!(support.len() <= 2 && support.windows(2).all(|w| w[1] == w[0] + 1));
    }

    #[test]
    fn identity_embedding_gives_displacement_interpolation() {
        let g = Grid::<f64>::line(0.0, 1.0, 21).unwrap();
        let e = EmbeddingMap::build_1d_fn(&g, |_| 1.0, Anchor::Origin).unwrap();
        let mut a = vec![0.0; 21];
        let mut b = vec![0.0; 21];
        a[2] = 0.5;
        a[4] = 0.5;
        b[12] = 0.5;
        b[18] = 0.5;
        let r0 = Density::from_masses(g.clone(), &a).unwrap();
        let r1 = Density::from_masses(g.clone(), &b).unwrap();
        let pi = quantile_coupling(&r0, &r1, &e).unwrap();
        let mid = geodesic_interpolate(&pi, &e, 0.5, 1.0).unwrap();
        // sorted matching 2->12, 4->18: midpoints at nodes 7 and 11
        assert!((mid.mass(7) - 0.5).abs() < 1e-12);
        assert!((mid.mass(11) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_2d_and_separable_2d() {
        let g = Grid::<f64>::rect((0.0, 1.0, 11), (0.0, 1.0, 11)).unwrap();
        let e = EmbeddingMap::build_constant(Mat2::new(1.0, 0.3, 0.3, 2.0), &g).unwrap();
        let mut a = vec![0.0; g.len()];
        let mut b = vec![0.0; g.len()];
        a[g.flat_index(1, 1)] = 1.0;
        b[g.flat_index(9, 5)] = 1.0;
        let r0 = Density::from_masses(g.clone(), &a).unwrap();
        let r1 = Density::from_masses(g.clone(), &b).unwrap();
        let pi = crate::metric::Coupling::new(vec![(g.flat_index(1, 1), g.flat_index(9, 5), 1.0)], &r0, &r1, |i, j| e.cost(i, j), None);
        let mid = geodesic_interpolate(&pi, &e, 0.5, 1.0).unwrap();
        // linear b: midpoint in x is the plain midpoint (0.5, 0.3)
        assert!((mid.integrate(|x| x[0]) - 0.5).abs() < 1e-12);
        assert!((mid.integrate(|x| x[1]) - 0.3).abs() < 1e-12);

        let f = MobilityField::separable(&g, |x: f64| (2.0 * x).exp(), |_| 1.0).unwrap();
        let es = EmbeddingMap::build(&f, Anchor::Origin).unwrap();
        let mid = geodesic_interpolate(&pi, &es, 0.5, 1.0).unwrap();
        let hand = ((0.1f64.exp() + 0.9f64.exp()) / 2.0).ln();
        assert!((mid.integrate(|x| x[0]) - hand).abs() < 1e-4);
    }
}
