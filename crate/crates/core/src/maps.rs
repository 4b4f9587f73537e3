//! Transport maps extracted from couplings, and checks of their optimality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMap, MobilityField};
use crate::error::{Error, Result};
use crate::grid::{Density, Grid};
use crate::metric::{quantile_coupling, Coupling};
use crate::scalar::{pairwise_sum, Real};

/// Support atoms below this mass are ignored by the cycle check.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// Seed used when none is given.
pub const DEFAULT_CYCLE_SEED: u64 = 0x5eed_c1c1e;

/// One piece of transported mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MapAtom<T: Real> {
    pub source: usize,
    pub target: [T; 2],
    pub embedded_target: [T; 2],
    pub mass: T,
}

/// A transport map on grid nodes.
///
/// `atoms` carries the mass-weighted targets; `image`/`embedded_image` are
/// the per-node barycentric images (`None` where the source has no mass, or
/// where the embedding cannot be inverted).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap<T: Real> {
    grid: Grid<T>,
    source: Density<T>,
    atoms: Vec<MapAtom<T>>,
    image: Vec<Option<[T; 2]>>,
    embedded_image: Vec<Option<[T; 2]>>,
}

fn barycentre<T: Real>(n: usize, atoms: &[(usize, [T; 2], T)]) -> Vec<Option<[T; 2]>> {
    let mut acc = vec![[T::zero(); 2]; n];
    let mut mass = vec![T::zero(); n];
    let mut lo = vec![[T::infinity(); 2]; n];
    let mut hi = vec![[T::neg_infinity(); 2]; n];
    for &(i, y, m) in atoms {
        for k in 0..2 {
            acc[i][k] = acc[i][k] + m * y[k];
            lo[i][k] = lo[i][k].min(y[k]);
            hi[i][k] = hi[i][k].max(y[k]);
        }
        mass[i] = mass[i] + m;
    }
    // Clamping to the hull of the targets removes rounding that would
    // otherwise break monotonicity between neighbouring rows.
    (0..n)
        .map(|i| {
            if mass[i] > T::zero() {
                let c = |k: usize| (acc[i][k] / mass[i]).max(lo[i][k]).min(hi[i][k]);
                Some([c(0), c(1)])
            } else {
                None
            }
        })
        .collect()
}

impl<T: Real> TransportMap<T> {
    fn from_node_atoms(coupling: &Coupling<T>, b: &EmbeddingMap<T>) -> Result<Self> {
        let grid = b.grid().clone();
        grid.check_same(coupling.row_marginal().grid())?;
        let atoms: Vec<MapAtom<T>> = coupling
            .atoms()
            .iter()
            .filter(|a| a.2 > T::zero())
            .map(|&(i, j, m)| MapAtom {
                source: i,
                target: grid.node(j),
                embedded_target: b.value(j),
                mass: m,
            })
            .collect();
        let emb: Vec<(usize, [T; 2], T)> = atoms.iter().map(|a| (a.source, a.embedded_target, a.mass)).collect();
        let embedded_image = barycentre(grid.len(), &emb);
        let image = embedded_image
            .iter()
            .map(|e| match e {
                Some(y) if b.has_inverse() => b.invert(*y).ok(),
                _ => None,
            })
            .collect();
        Ok(Self {
            grid,
            source: coupling.row_marginal().clone(),
            atoms,
            image,
            embedded_image,
        })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn source(&self) -> &Density<T> {
        &self.source
    }

    pub fn atoms(&self) -> &[MapAtom<T>] {
        &self.atoms
    }

    pub fn image(&self, i: usize) -> Option<[T; 2]> {
        self.image[i]
    }

    pub fn embedded_image(&self, i: usize) -> Option<[T; 2]> {
        self.embedded_image[i]
    }

    /// `Σ m |b(target) − b(source)|²` over the atoms.
    pub fn transport_cost(&self, b: &EmbeddingMap<T>) -> T {
        let t: Vec<T> = self
            .atoms
            .iter()
            .map(|a| {
                let x = b.value(a.source);
                let d0 = a.embedded_target[0] - x[0];
                let d1 = a.embedded_target[1] - x[1];
                a.mass * (d0 * d0 + d1 * d1)
            })
            .collect();
        pairwise_sum(&t)
    }

    /// Same cost but using only the barycentric image of each node.
    pub fn barycentric_cost(&self, b: &EmbeddingMap<T>) -> T {
        let t: Vec<T> = (0..self.grid.len())
            .filter_map(|i| {
                self.embedded_image[i].map(|y| {
                    let x = b.value(i);
                    self.source.mass(i) * ((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2))
                })
            })
            .collect();
        pairwise_sum(&t)
    }

    /// `|Σ m f(target) − ∫ f ρ₁|` for a test function `f`.
    pub fn pushforward_defect(&self, target: &Density<T>, f: impl Fn([T; 2]) -> T) -> T {
        let t: Vec<T> = self.atoms.iter().map(|a| a.mass * f(a.target)).collect();
        (pairwise_sum(&t) - target.integrate(&f)).abs()
    }

    /// Pushes the source density through the atoms, depositing on the grid.
    pub fn pushforward(&self) -> Result<Density<T>> {
        let mut m = vec![T::zero(); self.grid.len()];
        for a in &self.atoms {
            crate::metric::deposit(&self.grid, &mut m, a.target, a.mass);
        }
        Density::from_masses_normalized(self.grid.clone(), &m)
    }

    /// Glues `self` (ρ₁ → ρ₂) with `next` (ρ₂ → ρ₃) at the shared nodes,
    /// splitting mass proportionally. Targets of `self` must be grid nodes.
    pub fn compose(&self, next: &TransportMap<T>, b: &EmbeddingMap<T>) -> Result<TransportMap<T>> {
        self.grid.check_same(&next.grid)?;
        let n = self.grid.len();
        let mut out_of: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
        for (k, a) in next.atoms.iter().enumerate() {
            out_of[a.source].push((k, a.mass));
        }
        let mid_mass: Vec<T> = (0..n).map(|j| next.source.mass(j)).collect();
        let mut atoms = Vec::new();
        for a in &self.atoms {
            let j = self.grid.nearest_node(a.target);
            if mid_mass[j] <= T::zero() {
                return Err(Error::InvalidParameter(format!("intermediate node {j} carries no mass")));
            }
            for &(k, m2) in &out_of[j] {
                let nb = &next.atoms[k];
                atoms.push(MapAtom {
                    source: a.source,
                    target: nb.target,
                    embedded_target: nb.embedded_target,
                    mass: a.mass * m2 / mid_mass[j],
                });
            }
        }
        let emb: Vec<(usize, [T; 2], T)> = atoms.iter().map(|a| (a.source, a.embedded_target, a.mass)).collect();
        let embedded_image = barycentre(n, &emb);
        let image = embedded_image
            .iter()
            .map(|e| e.and_then(|y| if b.has_inverse() { b.invert(y).ok() } else { None }))
            .collect();
        Ok(TransportMap {
            grid: self.grid.clone(),
            source: self.source.clone(),
            atoms,
            image,
            embedded_image,
        })
    }

    /// Swaps targets between two source nodes (for building counterexamples).
    pub fn with_swapped_targets(&self, i: usize, j: usize) -> TransportMap<T> {
        let mut m = self.clone();
        m.image.swap(i, j);
        m.embedded_image.swap(i, j);
        for a in &mut m.atoms {
            if a.source == i {
                a.source = j;
            } else if a.source == j {
                a.source = i;
            }
        }
        m
    }
}

/// Barycentric map of a coupling, averaged in embedded coordinates.
pub fn map_from_coupling<T: Real>(coupling: &Coupling<T>, b: &EmbeddingMap<T>) -> Result<TransportMap<T>> {
    TransportMap::from_node_atoms(coupling, b)
}

/// Monotone rearrangement on a line in embedded coordinates.
pub fn map_1d_monotone<T: Real>(
    rho0: &Density<T>,
    rho1: &Density<T>,
    b: &EmbeddingMap<T>,
) -> Result<TransportMap<T>> {
    if b.grid().dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: b.grid().dim() });
    }
    let c = quantile_coupling(rho0, rho1, b)?;
    TransportMap::from_node_atoms(&c, b)
}

/// Max over interior nodes of `|(∇b)ᵀ(b(r(x)) − b(x)) + ½∇φ(x)|` with a
/// central-difference gradient of the dual potential.
pub fn optimality_residual<T: Real>(
    map: &TransportMap<T>,
    dual_phi: Option<&[T]>,
    b: &EmbeddingMap<T>,
    field: &MobilityField<T>,
) -> Result<T> {
    let phi = dual_phi.ok_or(Error::MissingDuals)?;
    let g = &map.grid;
    g.check_same(b.grid())?;
    g.check_same(field.grid())?;
    if phi.len() != g.len() {
        return Err(Error::InvalidParameter("one potential per node expected".into()));
    }
    let d = g.dim();
    let mut res = T::zero();
    for idx in 0..g.len() {
        if g.is_boundary(idx) {
            continue;
        }
        let Some(y) = map.embedded_image[idx] else { continue };
        let x = b.value(idx);
        let diff = [y[0] - x[0], y[1] - x[1]];
        let jt = b.jacobian(idx).transpose();
        let lhs = jt.apply(diff);
        let m = g.multi_index(idx);
        let mut norm2 = T::zero();
        for k in 0..d {
            let (mut lo, mut hi) = (m, m);
            lo[k] -= 1;
            hi[k] += 1;
            let grad = (phi[g.flat_index(hi[0], hi[1])] - phi[g.flat_index(lo[0], lo[1])]) / (T::two() * g.h(k));
            let r = lhs[k] + T::half() * grad;
            norm2 = norm2 + r * r;
        }
        res = res.max(norm2.sqrt());
    }
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CycleReport<T: Real> {
    pub cycles_checked: usize,
    /// Atom indices of each violating cycle with its (negative) value.
    pub violations: Vec<(Vec<usize>, T)>,
    pub passed: bool,
}

/// Samples `samples` cycles of length `k` among support atoms and checks
/// `Σ ⟨ξ_i, η_i − η_{i+1}⟩ ≥ −1e-9` with `(ξ, η) = (b(x), b(y))`.
pub fn cyclical_monotonicity_check<T: Real>(
    coupling: &Coupling<T>,
    b: &EmbeddingMap<T>,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<CycleReport<T>> {
    if k < 2 {
        return Err(Error::InvalidParameter("cycle length must be at least 2".into()));
    }
    let support: Vec<(usize, usize)> = coupling
        .support(T::lit(SUPPORT_THRESHOLD))
        .map(|(i, j, _)| (i, j))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut checked = 0;
    if support.len() >= k {
        for _ in 0..samples {
            let idx = rand::seq::index::sample(&mut rng, support.len(), k).into_vec();
            let mut v = T::zero();
            for r in 0..k {
                let (i, j) = support[idx[r]];
                let (_, jn) = support[idx[(r + 1) % k]];
                let xi = b.value(i);
                let eta = b.value(j);
                let eta_next = b.value(jn);
                v = v + xi[0] * (eta[0] - eta_next[0]) + xi[1] * (eta[1] - eta_next[1]);
            }
            checked += 1;
            if v < T::lit(-1e-9) {
                violations.push((idx, v));
            }
        }
    } else {
        // too few support points: every cycle is trivial
        let _ = rng.gen::<u8>();
    }
    Ok(CycleReport { cycles_checked: checked, passed: violations.is_empty(), violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Anchor;
    use crate::metric::{cost_matrix, solve_kantorovich_exact, wa_distance_1d};

    fn setup(n: usize) -> (Grid<f64>, MobilityField<f64>, EmbeddingMap<f64>) {
        let g = Grid::line(0.0, 1.0, n).unwrap();
        let f = MobilityField::scalar_1d_fn(&g, |x: f64| (2.0 * x).exp()).unwrap();
        let e = EmbeddingMap::build(&f, Anchor::Origin).unwrap();
        (g, f, e)
    }

    fn pair(g: &Grid<f64>) -> (Density<f64>, Density<f64>) {
        let r0 = Density::from_fn(g.clone(), |x| (-(x[0] - 0.3).powi(2) / 0.02).exp() + 0.1).unwrap();
        let r1 = Density::from_fn(g.clone(), |x| 1.0 + (5.0 * x[0]).sin().powi(2)).unwrap();
        (r0, r1)
    }

    #[test]
    fn diagonal_is_identity() {
        let (g, _, e) = setup(20);
        let r = Density::from_fn(g.clone(), |x| 1.0 + x[0]).unwrap();
        let m = map_1d_monotone(&r, &r, &e).unwrap();
        for i in 0..20 {
            assert!((m.image(i).unwrap()[0] - g.node(i)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn translated_point_mass() {
        let (g, _, e) = setup(20);
        let mut a = vec![0.0; 20];
        let mut b = vec![0.0; 20];
        a[3] = 1.0;
        b[14] = 1.0;
        let r0 = Density::from_masses(g.clone(), &a).unwrap();
        let r1 = Density::from_masses(g.clone(), &b).unwrap();
        let c = cost_matrix(&e).unwrap();
        let (pi, _) = solve_kantorovich_exact(&r0, &r1, &c).unwrap();
        let m = map_from_coupling(&pi, &e).unwrap();
        assert_eq!(m.image(3).unwrap()[0], g.node(14)[0]);
        assert!(m.image(0).is_none());
    }

    #[test]
    fn shift_under_identity_metric() {
        let g = Grid::<f64>::line(0.0, 2.0, 81).unwrap();
        let e = EmbeddingMap::build_1d_fn(&g, |_| 1.0, Anchor::Origin).unwrap();
        let bump = |c: f64| move |x: [f64; 2]| (-(x[0] - c).powi(2) / 0.02).exp();
        let r0 = Density::from_fn(g.clone(), bump(0.6)).unwrap();
        let r1 = Density::from_fn(g.clone(), bump(1.1)).unwrap();
        let m = map_1d_monotone(&r0, &r1, &e).unwrap();
        let h = g.h(0);
        for i in 0..81 {
            let x = g.node(i)[0];
            if (x - 0.6).abs() < 0.3 {
                assert!((m.image(i).unwrap()[0] - (x + 0.5)).abs() <= h);
            }
        }
    }

    #[test]
    fn monotone_cost_equals_distance_and_barycentric_agrees() {
        let (g, _, e) = setup(32);
        let (r0, r1) = pair(&g);
        let c = cost_matrix(&e).unwrap();
        let (pi, ex) = solve_kantorovich_exact(&r0, &r1, &c).unwrap();
        let mono = map_1d_monotone(&r0, &r1, &e).unwrap();
        assert!((mono.transport_cost(&e) - wa_distance_1d(&r0, &r1, &e).unwrap().wa_squared).abs() <= 1e-8);
        assert!((mono.transport_cost(&e) - ex.wa_squared).abs() <= 1e-8);
        let bary = map_from_coupling(&pi, &e).unwrap();
        let h = g.h(0);
        for i in 0..32 {
            let a = bary.image(i).unwrap()[0];
            let b = mono.image(i).unwrap()[0];
            assert!((a - b).abs() <= h, "node {i}: {a} vs {b}");
        }
        // embedded image nondecreasing
        let ys: Vec<f64> = (0..32).map(|i| mono.embedded_image(i).unwrap()[0]).collect();
        for w in ys.windows(2) {
            assert!(w[1] >= w[0], "{} < {}", w[1], w[0]);
        }
        // pushforward for monomials up to degree 2
        for deg in 0..=2 {
            let d = mono.pushforward_defect(&r1, |x| x[0].powi(deg));
            assert!(d <= 5.0 * h * (deg.max(1) as f64));
        }
        assert!(mono.barycentric_cost(&e) <= mono.transport_cost(&e) + 1e-12);
    }

    #[test]
    fn residual_first_order_and_counterexample() {
        let res = |n: usize| {
            let (g, f, e) = setup(n);
            let r0 = Density::from_fn(g.clone(), |x| (-(x[0] - 0.3).powi(2) / 0.02).exp() + 0.2).unwrap();
            let r1 = Density::from_fn(g.clone(), |x| (-(x[0] - 0.6).powi(2) / 0.03).exp() + 0.2).unwrap();
            let pi = quantile_coupling(&r0, &r1, &e).unwrap();
            let m = map_from_coupling(&pi, &e).unwrap();
            let r = optimality_residual(&m, pi.dual_phi(), &e, &f).unwrap();
            let swapped = m.with_swapped_targets(n / 4, 3 * n / 4);
            let rs = optimality_residual(&swapped, pi.dual_phi(), &e, &f).unwrap();
            (r, rs)
        };
        let (r64, s64) = res(64);
        let (r128, _) = res(128);
        let (r256, _) = res(256);
        let o1 = (r64 / r128).log2();
        let o2 = (r128 / r256).log2();
        assert!(o1 >= 0.8 && o2 >= 0.8, "orders {o1} {o2}");
        assert!(s64 >= 10.0 * r64);
        let (_, f, e) = setup(8);
        let (g, _, _) = setup(8);
        let r = Density::uniform(g);
        let m = map_1d_monotone(&r, &r, &e).unwrap();
        assert!(matches!(optimality_residual(&m, None, &e, &f), Err(Error::MissingDuals)));
        let phi = vec![0.3; 8];
        assert!(optimality_residual(&m, Some(&phi), &e, &f).unwrap() < 1e-15);
    }

    #[test]
    fn cycles() {
        let (g, _, e) = setup(32);
        let (r0, r1) = pair(&g);
        let c = cost_matrix(&e).unwrap();
        let (pi, _) = solve_kantorovich_exact(&r0, &r1, &c).unwrap();
        let rep = cyclical_monotonicity_check(&pi, &e, 3, 200, DEFAULT_CYCLE_SEED).unwrap();
        assert_eq!(rep.cycles_checked, 200);
        assert!(rep.passed);
        let diag = quantile_coupling(&r0, &r0, &e).unwrap();
        assert!(cyclical_monotonicity_check(&diag, &e, 4, 100, 1).unwrap().passed);
        // anti-monotone plan between two uniform measures
        let r = Density::uniform(g.clone());
        let atoms: Vec<(usize, usize, f64)> = (0..32).map(|i| (i, 31 - i, r.mass(i))).collect();
        let anti = crate::metric::Coupling::new(atoms, &r, &Density::from_masses(g.clone(), &(0..32).map(|i| r.mass(31 - i)).collect::<Vec<_>>()).unwrap(), |i, j| e.cost(i, j), None);
        let rep = cyclical_monotonicity_check(&anti, &e, 2, 100, 1).unwrap();
        assert!(!rep.passed && !rep.violations.is_empty());
    }

    #[test]
    fn composition_pushes_to_third() {
        let (g, _, e) = setup(40);
        let (r1, r2) = pair(&g);
        let r3 = Density::from_fn(g.clone(), |x| 2.0 - x[0]).unwrap();
        let a = map_1d_monotone(&r1, &r2, &e).unwrap();
        let b = map_1d_monotone(&r2, &r3, &e).unwrap();
        let comp = a.compose(&b, &e).unwrap();
        let pushed = comp.pushforward().unwrap();
        assert!(pushed.l1_distance(&r3).unwrap() <= 1e-12);
        // the glued plan is admissible, hence costs at least the distance
        let w13 = wa_distance_1d(&r1, &r3, &e).unwrap().wa_squared;
        assert!(comp.transport_cost(&e) >= w13 - 1e-9);
    }
}
