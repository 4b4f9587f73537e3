//! Finite-dimensional damped dynamics `ε ÿ = −∇E(y) − B ẏ` for quadratic
//! `E(y) = ½ yᵀK y − fᵀy`, its implicit time-step discretization, and the
//! minimizing-movement scheme it relaxes to as `ε → 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, DMat};
use crate::scalar::Real;

const SPD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSystem<T: Real> {
    k: DMat<T>,
    f: Vec<T>,
    friction: DMat<T>,
    epsilon: T,
    tau: T,
}

fn check_spd<T: Real>(m: &DMat<T>, what: &str) -> Result<()> {
    let scale = (0..m.rows()).map(|i| m[(i, i)].abs()).fold(T::zero(), T::max).max(T::one());
    if m.rows() != m.cols() || m.max_asymmetry() > T::lit(SPD_TOL) * scale || m.cholesky(T::lit(SPD_TOL)).is_err() {
        return Err(Error::NotSpd(format!("{what} is not symmetric positive definite")));
    }
    Ok(())
}

impl<T: Real> QuadraticSystem<T> {
    pub fn new(k: DMat<T>, f: Vec<T>, friction: DMat<T>, epsilon: T, tau: T) -> Result<Self> {
        check_spd(&k, "stiffness")?;
        check_spd(&friction, "friction")?;
        if f.len() != k.rows() {
            return Err(Error::DimensionMismatch { expected: k.rows(), found: f.len() });
        }
        if friction.rows() != k.rows() {
            return Err(Error::DimensionMismatch { expected: k.rows(), found: friction.rows() });
        }
        if !(epsilon >= T::zero()) || !(tau > T::zero()) {
            return Err(Error::InvalidParameter("need epsilon >= 0 and tau > 0".into()));
        }
        Ok(Self { k, f, friction, epsilon, tau })
    }

    /// Random well-conditioned system: `K = MMᵀ/n + I`, `B = NNᵀ/n + ½I`,
    /// forcing uniform in `[−1, 1]`.
    pub fn random(n: usize, epsilon: T, tau: T, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spd = |shift: f64| {
            let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let mut out = DMat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let s: f64 = (0..n).map(|k| m[i][k] * m[j][k]).sum::<f64>() / n as f64;
                    out[(i, j)] = T::lit(s + if i == j { shift } else { 0.0 });
                }
            }
            out
        };
        let k = spd(1.0);
        let b = spd(0.5);
        let f = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
        Self::new(k, f, b, epsilon, tau)
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn with_epsilon(&self, epsilon: T) -> Result<Self> {
        Self::new(self.k.clone(), self.f.clone(), self.friction.clone(), epsilon, self.tau)
    }

    pub fn stiffness(&self) -> &DMat<T> {
        &self.k
    }

    pub fn friction(&self) -> &DMat<T> {
        &self.friction
    }

    pub fn forcing(&self) -> &[T] {
        &self.f
    }

    pub fn energy(&self, y: &[T]) -> T {
        T::half() * self.k.bilinear(y, y) - dot(&self.f, y)
    }

    pub fn gradient(&self, y: &[T]) -> Vec<T> {
        self.k.matvec(y).iter().zip(&self.f).map(|(&a, &b)| a - b).collect()
    }

    pub fn total_energy(&self, y: &[T], v: &[T]) -> T {
        T::half() * self.epsilon * dot(v, v) + self.energy(y)
    }

    /// `K⁻¹ f`.
    pub fn equilibrium(&self) -> Vec<T> {
        self.k.cholesky(T::zero()).expect("K is SPD").solve(&self.f)
    }

    /// The step objective `(ε/2)|v − v_prev|² + E(y) + (τ/2) vᵀBv` with
    /// `v = (y − y_prev)/τ`.
    pub fn damped_objective(&self, state: &DampedState<T>, y: &[T]) -> T {
        let v: Vec<T> = y.iter().zip(&state.y).map(|(&a, &b)| (a - b) / self.tau).collect();
        let dv: Vec<T> = v.iter().zip(&state.v).map(|(&a, &b)| a - b).collect();
        T::half() * self.epsilon * dot(&dv, &dv) + self.energy(y) + T::half() * self.tau * self.friction.bilinear(&v, &v)
    }

    /// `E(y) + (1/2τ)(y − y_prev)ᵀB(y − y_prev)`.
    pub fn movement_objective(&self, y_prev: &[T], y: &[T]) -> T {
        let d: Vec<T> = y.iter().zip(y_prev).map(|(&a, &b)| a - b).collect();
        self.energy(y) + self.friction.bilinear(&d, &d) / (T::two() * self.tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DampedState<T: Real> {
    pub y: Vec<T>,
    pub v: Vec<T>,
    pub t: T,
    pub total_energy: T,
}

impl<T: Real> DampedState<T> {
    pub fn new(sys: &QuadraticSystem<T>, y: Vec<T>, v: Vec<T>) -> Result<Self> {
        if y.len() != sys.dim() || v.len() != sys.dim() {
            return Err(Error::DimensionMismatch { expected: sys.dim(), found: y.len().min(v.len()) });
        }
        let total_energy = sys.total_energy(&y, &v);
        Ok(Self { y, v, t: T::zero(), total_energy })
    }
}

/// Factored `(ε/τ) I + B + τK`, reused along a trajectory.
struct DampedStepper<T: Real> {
    chol: Cholesky<T>,
}

impl<T: Real> DampedStepper<T> {
    fn new(sys: &QuadraticSystem<T>) -> Self {
        let n = sys.dim();
        let m = DMat::identity(n).scale(sys.epsilon / sys.tau).add(&sys.friction).add(&sys.k.scale(sys.tau));
        Self { chol: m.cholesky(T::zero()).expect("sum of SPD matrices") }
    }

    fn step(&self, sys: &QuadraticSystem<T>, s: &DampedState<T>) -> DampedState<T> {
        let (eps, tau) = (sys.epsilon, sys.tau);
        let by = sys.friction.matvec(&s.y);
        let rhs: Vec<T> = (0..sys.dim())
            .map(|i| eps / tau * (s.y[i] + tau * s.v[i]) + by[i] + tau * sys.f[i])
            .collect();
        let y = self.chol.solve(&rhs);
        let v: Vec<T> = y.iter().zip(&s.y).map(|(&a, &b)| (a - b) / tau).collect();
        let total_energy = sys.total_energy(&y, &v);
        DampedState { y, v, t: s.t + tau, total_energy }
    }
}

/// One step of `ε(v_j − v_{j−1})/τ = −∇E(y_j) − B v_j`, `v_j = (y_j − y_{j−1})/τ`.
pub fn damped_step<T: Real>(sys: &QuadraticSystem<T>, state: &DampedState<T>) -> DampedState<T> {
    DampedStepper::new(sys).step(sys, state)
}

/// `(B/τ + K) y = B y_prev/τ + f`.
pub fn minimizing_movement_step<T: Real>(sys: &QuadraticSystem<T>, y_prev: &[T]) -> Vec<T> {
    mm_factor(sys).solve(&mm_rhs(sys, y_prev))
}

fn mm_factor<T: Real>(sys: &QuadraticSystem<T>) -> Cholesky<T> {
    sys.friction.scale(sys.tau.recip()).add(&sys.k).cholesky(T::zero()).expect("SPD")
}

fn mm_rhs<T: Real>(sys: &QuadraticSystem<T>, y_prev: &[T]) -> Vec<T> {
    sys.friction.matvec(y_prev).iter().zip(&sys.f).map(|(&a, &b)| a / sys.tau + b).collect()
}

pub fn damped_trajectory<T: Real>(sys: &QuadraticSystem<T>, y0: &[T], v0: &[T], steps: usize) -> Result<Vec<DampedState<T>>> {
    let st = DampedStepper::new(sys);
    let mut out = vec![DampedState::new(sys, y0.to_vec(), v0.to_vec())?];
    for _ in 0..steps {
        let next = st.step(sys, out.last().expect("nonempty"));
        out.push(next);
    }
    Ok(out)
}

pub fn minimizing_movement_trajectory<T: Real>(sys: &QuadraticSystem<T>, y0: &[T], steps: usize) -> Vec<Vec<T>> {
    let c = mm_factor(sys);
    let mut out = vec![y0.to_vec()];
    for _ in 0..steps {
        let next = c.solve(&mm_rhs(sys, out.last().expect("nonempty")));
        out.push(next);
    }
    out
}

fn sup_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s.max((x - y).abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EpsilonGap<T: Real> {
    pub epsilon: T,
    /// `sup_j |y_j^ε − y_j^MM|` over the whole horizon.
    pub gap: T,
    /// Same supremum restricted to `t_j > 10ε` (outside the initial layer).
    pub window_gap: T,
    pub gap_curve: Vec<T>,
    pub energy: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ComparisonReport<T: Real> {
    pub tau: T,
    pub t_end: T,
    pub steps: usize,
    pub entries: Vec<EpsilonGap<T>>,
    /// Window gaps are nonincreasing along the ε list (ratio ≤ 1 + 1e-9).
    pub monotone: bool,
}

/// Damped trajectories for each ε against the minimizing-movement
/// trajectory from the same `y0`.
pub fn run_comparison<T: Real>(
    sys: &QuadraticSystem<T>,
    y0: &[T],
    v0: &[T],
    t_end: T,
    epsilons: &[T],
) -> Result<ComparisonReport<T>> {
    let steps = (t_end / sys.tau).round().to_usize().unwrap_or(0);
    let mm = minimizing_movement_trajectory(sys, y0, steps);
    let mut entries = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let s = sys.with_epsilon(eps)?;
        let traj = damped_trajectory(&s, y0, v0, steps)?;
        let curve: Vec<T> = traj.iter().zip(&mm).map(|(a, b)| sup_dist(&a.y, b)).collect();
        let gap = curve.iter().copied().fold(T::zero(), T::max);
        let layer = T::lit(10.0) * eps;
        let window_gap = traj
            .iter()
            .zip(&curve)
            .filter(|(st, _)| st.t > layer)
            .fold(T::zero(), |m, (_, &g)| m.max(g));
        entries.push(EpsilonGap {
            epsilon: eps,
            gap,
            window_gap,
            gap_curve: curve,
            energy: traj.iter().map(|s| s.total_energy).collect(),
        });
    }
    let monotone = entries
        .windows(2)
        .all(|w| w[1].window_gap <= w[0].window_gap * (T::one() + T::lit(1e-9)) + T::lit(1e-15));
    Ok(ComparisonReport { tau: sys.tau, t_end, steps, entries, monotone })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DissipationReport<T: Real> {
    /// `Δ(total energy) + τ v_jᵀB v_j` per step (≤ 0, of size `O(τ²)`).
    pub balance: Vec<T>,
    /// `max |balance| / τ²`.
    pub balance_constant: T,
    /// Whether the total energy never increased.
    pub energy_nonincreasing: bool,
    /// `|Δ(total)/τ − (−½|εu̇ + ∇E|²_A − ½uᵀBu)|` on the trajectory itself.
    pub equality_residual: Vec<T>,
    pub samples: usize,
    /// Smallest `d/dt(total) − bound` over randomized velocities.
    pub min_margin: T,
    pub passed: bool,
}

/// Energy balance and maximal-dissipation audit of a damped trajectory.
/// For each sample a state `j` is drawn and `u = v_j + δ`,
/// `u̇ = (v_j − v_{j−1})/τ + δ'` with Gaussian-like perturbations; the rate
/// `u·(εu̇ + ∇E(y_j))` must stay above `−½|εu̇ + ∇E|²_A − ½uᵀBu`.
pub fn dissipation_audit<T: Real>(
    sys: &QuadraticSystem<T>,
    traj: &[DampedState<T>],
    samples: usize,
    seed: u64,
) -> DissipationReport<T> {
    let tau = sys.tau;
    let eps = sys.epsilon;
    let bchol = sys.friction.cholesky(T::zero()).expect("B is SPD");
    let a_norm2 = |x: &[T]| dot(x, &bchol.solve(x));
    let mut balance = Vec::new();
    let mut eq = Vec::new();
    for w in traj.windows(2) {
        let (s0, s1) = (&w[0], &w[1]);
        let d = s1.total_energy - s0.total_energy;
        let bvv = sys.friction.bilinear(&s1.v, &s1.v);
        balance.push(d + tau * bvv);
        let udot: Vec<T> = s1.v.iter().zip(&s0.v).map(|(&a, &b)| (a - b) / tau).collect();
        let g = sys.gradient(&s1.y);
        let r: Vec<T> = (0..sys.dim()).map(|i| eps * udot[i] + g[i]).collect();
        let bound = -T::half() * a_norm2(&r) - T::half() * bvv;
        eq.push((d / tau - bound).abs());
    }
    let balance_constant = balance.iter().fold(T::zero(), |m, b| m.max(b.abs())) / (tau * tau);
    let energy_nonincreasing = traj.windows(2).all(|w| {
        w[1].total_energy <= w[0].total_energy + T::lit(1e-13) * w[0].total_energy.abs().max(T::one())
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_margin = T::infinity();
    let n = sys.dim();
    if traj.len() >= 2 {
        for _ in 0..samples {
            let j = rng.gen_range(1..traj.len());
            let (s0, s1) = (&traj[j - 1], &traj[j]);
            let vs = s1.v.iter().fold(T::zero(), |m, x| m.max(x.abs())).max(T::one());
            let u: Vec<T> = (0..n).map(|i| s1.v[i] + vs * T::lit(rng.gen_range(-1.0..1.0))).collect();
            let udot: Vec<T> = (0..n)
                .map(|i| (s1.v[i] - s0.v[i]) / tau + vs / tau.max(eps) * T::lit(rng.gen_range(-1.0..1.0)))
                .collect();
            let g = sys.gradient(&s1.y);
            let r: Vec<T> = (0..n).map(|i| eps * udot[i] + g[i]).collect();
            let rate = dot(&u, &r);
            let bound = -T::half() * a_norm2(&r) - T::half() * sys.friction.bilinear(&u, &u);
            min_margin = min_margin.min(rate - bound);
        }
    }
    let passed = energy_nonincreasing && (samples == 0 || min_margin >= T::zero());
    DissipationReport {
        balance,
        balance_constant,
        energy_nonincreasing,
        equality_residual: eq,
        samples,
        min_margin: if samples == 0 { T::zero() } else { min_margin },
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(k: f64, b: f64, eps: f64, tau: f64) -> QuadraticSystem<f64> {
        QuadraticSystem::new(DMat::from_diag(&[k]), vec![0.0], DMat::from_diag(&[b]), eps, tau).unwrap()
    }

    #[test]
    fn scalar_step_matches_two_by_two_solve() {
        let sys = scalar(1.0, 1.0, 1.0, 0.1);
        let s0 = DampedState::new(&sys, vec![1.0], vec![0.0]).unwrap();
        let s1 = damped_step(&sys, &s0);
        // unknowns (y, v): K y + (ε/τ + B) v = f + ε v0/τ ;  y − τ v = y0
        let (a11, a12, b1) = (1.0, 1.0 / 0.1 + 1.0, 0.0);
        let (a21, a22, b2) = (1.0, -0.1, 1.0);
        let det = a11 * a22 - a12 * a21;
        let y = (b1 * a22 - a12 * b2) / det;
        let v = (a11 * b2 - a21 * b1) / det;
        assert!((s1.y[0] - y).abs() < 1e-14);
        assert!((s1.v[0] - v).abs() < 1e-14);
    }

    #[test]
    fn fixed_point_and_equilibrium() {
        let sys = QuadraticSystem::<f64>::random(5, 0.1, 0.05, 1).unwrap();
        let z = QuadraticSystem::new(sys.stiffness().clone(), vec![0.0; 5], sys.friction().clone(), 0.1, 0.05).unwrap();
        let s = DampedState::new(&z, vec![0.0; 5], vec![0.0; 5]).unwrap();
        assert!(damped_step(&z, &s).y.iter().all(|&x| x == 0.0));
        let ys = sys.equilibrium();
        assert!(sup_dist(&minimizing_movement_step(&sys, &ys), &ys) < 1e-12);
    }

    #[test]
    fn scalar_movement_closed_form() {
        let sys = scalar(1.0, 1.0, 0.0, 0.1);
        let y = minimizing_movement_step(&sys, &[1.0]);
        assert!((y[0] - 1.0 / 1.1).abs() < 1e-15);
        assert!(sys.movement_objective(&[1.0], &y) <= sys.energy(&[1.0]));
    }

    #[test]
    fn steps_are_minimizers() {
        let sys = QuadraticSystem::<f64>::random(6, 0.3, 0.02, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s0 = DampedState::new(&sys, y0.clone(), v0).unwrap();
        let s1 = damped_step(&sys, &s0);
        let j1 = sys.damped_objective(&s0, &s1.y);
        let y1 = minimizing_movement_step(&sys, &y0);
        let m1 = sys.movement_objective(&y0, &y1);
        for _ in 0..200 {
            let d: Vec<f64> = (0..6).map(|_| 1e-3 * rng.gen_range(-1.0..1.0)).collect();
            let p: Vec<f64> = s1.y.iter().zip(&d).map(|(a, b)| a + b).collect();
            assert!(sys.damped_objective(&s0, &p) > j1);
            let q: Vec<f64> = y1.iter().zip(&d).map(|(a, b)| a + b).collect();
            assert!(sys.movement_objective(&y0, &q) > m1);
        }
        // first-order conditions of the step objective
        let g = sys.gradient(&s1.y);
        let bv = sys.friction().matvec(&s1.v);
        for i in 0..6 {
            let r = sys.epsilon() * (s1.v[i] - s0.v[i]) / sys.tau() + g[i] + bv[i];
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_epsilon_reproduces_movement() {
        let sys = QuadraticSystem::<f64>::random(4, 0.0, 0.01, 2).unwrap();
        let y0 = vec![1.0, -1.0, 0.5, 0.0];
        let rep = run_comparison(&sys, &y0, &[0.0; 4], 0.5, &[0.0]).unwrap();
        assert!(rep.entries[0].gap < 1e-12);
    }

    #[test]
    fn audit_on_trajectory() {
        let sys = QuadraticSystem::<f64>::random(10, 0.05, 1e-3, 4).unwrap();
        let tr = damped_trajectory(&sys, &[1.0; 10], &[0.0; 10], 500).unwrap();
        let rep = dissipation_audit(&sys, &tr, 300, 11);
        assert!(rep.passed);
        assert!(rep.min_margin > 0.0);
        assert!(rep.balance.iter().all(|&b| b <= 1e-14));
        let eqmax = rep.equality_residual.iter().fold(0.0f64, |m, &x| m.max(x));
        assert!(eqmax <= rep.balance_constant * 1e-3 * (1.0 + 1e-9));
        // zero motion: both sides vanish
        let z = QuadraticSystem::new(sys.stiffness().clone(), vec![0.0; 10], sys.friction().clone(), 0.05, 1e-3).unwrap();
        let still = damped_trajectory(&z, &[0.0; 10], &[0.0; 10], 3).unwrap();
        let r0 = dissipation_audit(&z, &still, 0, 1);
        assert!(r0.balance.iter().all(|&b| b == 0.0));
        assert!(r0.equality_residual.iter().all(|&b| b == 0.0));
    }
}
