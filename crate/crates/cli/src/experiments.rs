//! Builds the numerical objects a config describes and runs one experiment
//! kind, collecting output files and pass/fail checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use wassmob::embedding::{Anchor, EmbeddingMap, MobilityField};
use wassmob::fpref::{assemble_operator, run_reference};
use wassmob::grid::{Density, Grid};
use wassmob::io;
use wassmob::jko::{
    apriori_report, el_residual, run_jko, EnergySpec, EpsilonSchedule, InnerSolver, JkoConfig, TestFunction,
};
use wassmob::linalg::Mat2;
use wassmob::maps::{map_1d_monotone, map_from_coupling};
use wassmob::metric::{
    cost_matrix, dynamic_action, geodesic_path, quantile_coupling, solve_kantorovich_entropic,
    solve_kantorovich_exact, velocities_from_path, wa_distance_1d, Coupling, DistanceReport, EntropicOptions,
    MAX_EXACT_NODES,
};
use wassmob::relaxation::{damped_trajectory, dissipation_audit, run_comparison, QuadraticSystem};
use wassmob::{Error, Result};

use crate::config::{DensitySpec, EpsilonSpec, ExperimentConfig, ExperimentKind, InnerSolverSpec, MobilitySpec, PotentialSpec};

/// One output file, path relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: Vec<Artifact>,
    pub checks: Vec<Check>,
}

impl Artifacts {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn add(&mut self, path: impl Into<String>, bytes: Vec<u8>) {
        self.files.push(Artifact { path: path.into(), bytes });
    }

    fn json<S: Serialize>(&mut self, path: &str, value: &S) -> Result<()> {
        let mut buf = Vec::new();
        io::write_json(value, &mut buf)?;
        buf.push(b'\n');
        self.add(path, buf);
        Ok(())
    }

    fn density(&mut self, path: &str, rho: &Density<f64>) -> Result<()> {
        let mut buf = Vec::new();
        io::write_density(rho, &mut buf)?;
        self.add(path, buf);
        Ok(())
    }

    /// `value ≤ bound`.
    fn at_most(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        self.checks.push(Check { name: name.into(), passed: value <= bound, value, bound });
    }

    /// `value ≥ bound`.
    fn at_least(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        self.checks.push(Check { name: name.into(), passed: value >= bound, value, bound });
    }
}

/// Long-format plot data: `series,x,y`.
#[derive(Default)]
struct Plot {
    rows: Vec<(String, f64, f64)>,
}

impl Plot {
    fn push(&mut self, series: &str, x: f64, y: f64) {
        self.rows.push((series.to_string(), x, y));
    }

    fn density(&mut self, series: &str, rho: &Density<f64>) {
        let g = rho.grid();
        for i in 0..g.len() {
            // 2D densities are flattened along the node index
            let x = if g.dim() == 1 { g.node(i)[0] } else { i as f64 };
            self.push(series, x, rho.values()[i]);
        }
    }

    fn bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(["series", "x", "y"]).map_err(err)?;
        for (s, x, y) in &self.rows {
            w.write_record([s.clone(), format!("{x:e}"), format!("{y:e}")]).map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::Parse(e.to_string()))
    }
}

pub struct Problem {
    pub grid: Grid<f64>,
    pub field: MobilityField<f64>,
    pub embedding: EmbeddingMap<f64>,
    pub energy: EnergySpec<f64>,
    pub initial: Density<f64>,
    pub target: Density<f64>,
}

pub fn build_grid(cfg: &ExperimentConfig) -> Result<Grid<f64>> {
    let (n, b) = (&cfg.grid.nodes, &cfg.grid.bounds);
    if n.len() == 1 {
        Grid::line(b[0], b[1], n[0])
    } else {
        Grid::rect((b[0], b[1], n[0]), (b[2], b[3], n[1]))
    }
}

fn build_field(cfg: &ExperimentConfig, grid: &Grid<f64>) -> Result<MobilityField<f64>> {
    let spec = cfg
        .mobility
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("mobility.family is required".into()))?;
    match spec {
        MobilitySpec::Constant { a } => {
            let m = if a.len() == 1 { Mat2::diag(a[0], a[0]) } else { Mat2::new(a[0], a[1], a[2], a[3]) };
            MobilityField::constant(grid, m)
        }
        MobilitySpec::Exponential { scale, rate } => MobilityField::scalar_1d_fn(grid, |x| scale * (rate * x).exp()),
        MobilitySpec::Separable { scale, rate } => MobilityField::separable(
            grid,
            |x| scale[0] * (rate[0] * x).exp(),
            |y| scale[1] * (rate[1] * y).exp(),
        ),
        MobilitySpec::Csv { path } => {
            let f: MobilityField<f64> = io::read_mobility_file(path)?;
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs());
            let same = f.grid().dim() == grid.dim()
                && f.grid().axes().iter().zip(grid.axes()).all(|(a, b)| a.n == b.n && close(a.min, b.min) && close(a.max, b.max));
            if !same {
                return Err(Error::InvalidParameter(format!("{} does not match the configured grid", path.display())));
            }
            Ok(f)
        }
    }
}

fn build_energy(cfg: &ExperimentConfig, grid: &Grid<f64>) -> Result<EnergySpec<f64>> {
    let d = grid.dim();
    let dist2 = move |x: [f64; 2], c: &[f64]| (0..d).map(|k| (x[k] - c[k]).powi(2)).sum::<f64>();
    match &cfg.potential {
        PotentialSpec::Zero => Ok(EnergySpec::zero(grid)),
        PotentialSpec::QuadraticWell { strength, center } => {
            EnergySpec::from_fn(grid, |x| strength * dist2(x, center))
        }
        PotentialSpec::DoubleWell { strength, center, width } => {
            EnergySpec::from_fn(grid, |x| strength * (dist2(x, center) - width * width).powi(2))
        }
        PotentialSpec::Csv { path } => EnergySpec::new(grid, io::read_nodal_file(grid, path)?),
    }
}

fn build_density(spec: &DensitySpec, grid: &Grid<f64>, e: &EnergySpec<f64>) -> Result<Density<f64>> {
    let d = grid.dim();
    match spec {
        DensitySpec::Uniform => Ok(Density::uniform(grid.clone())),
        DensitySpec::Gaussian { center, variance, floor } => Density::from_fn(grid.clone(), |x| {
            let r2: f64 = (0..d).map(|k| (x[k] - center[k]).powi(2)).sum();
            (-r2 / (2.0 * variance)).exp() + floor
        }),
        DensitySpec::Gibbs => Ok(e.gibbs().0),
        DensitySpec::Csv { path } => io::read_density_file(grid, path),
    }
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let grid = build_grid(cfg)?;
    let field = build_field(cfg, &grid)?;
    // a mobility CSV carries its own (equivalent) grid
    let grid = field.grid().clone();
    let embedding = EmbeddingMap::build(&field, Anchor::Auto)?;
    let energy = build_energy(cfg, &grid)?;
    let initial = build_density(&cfg.initial, &grid, &energy)?;
    let target = match &cfg.target {
        Some(t) => build_density(t, &grid, &energy)?,
        None => initial.clone(),
    };
    Ok(Problem { grid, field, embedding, energy, initial, target })
}

fn jko_config(cfg: &ExperimentConfig, tau: f64) -> Result<JkoConfig<f64>> {
    let s = &cfg.solver;
    let steps = (s.horizon / tau).round() as usize;
    let mut c = JkoConfig::new(tau, steps)?
        .with_solver(match s.inner {
            InnerSolverSpec::Entropic => InnerSolver::Entropic,
            InnerSolverSpec::ExactSmall => InnerSolver::ExactSmall,
        })
        .with_epsilon(match s.epsilon {
            EpsilonSpec::Auto => EpsilonSchedule::Auto,
            EpsilonSpec::Fixed(x) => EpsilonSchedule::Fixed(x),
            EpsilonSpec::Matched { factor, tau_ref } => EpsilonSchedule::Matched { factor, tau_ref },
        });
    c.eps_floor = s.eps_floor;
    c.tolerances.marginal = s.marginal_tol;
    c.tolerances.kkt = s.kkt_tol;
    c.validate()?;
    Ok(c)
}

/// Runs the experiment `kind` described by `cfg`.
pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<Artifacts> {
    match kind {
        ExperimentKind::Distance => distance(cfg),
        ExperimentKind::Geodesic => geodesic(cfg),
        ExperimentKind::Jko => jko(cfg),
        ExperimentKind::FvReference => fv_reference(cfg),
        ExperimentKind::JkoVsFv => jko_vs_fv(cfg),
        ExperimentKind::Relaxation => relaxation(cfg),
        ExperimentKind::MetricAxioms => metric_axioms(cfg),
    }
}

/// Exact LP on small grids, entropic otherwise.
fn solve_plan(p: &Problem, rho0: &Density<f64>, rho1: &Density<f64>, cfg: &ExperimentConfig) -> Result<(Coupling<f64>, DistanceReport<f64>)> {
    let c = cost_matrix(&p.embedding)?;
    if p.grid.len() <= MAX_EXACT_NODES {
        solve_kantorovich_exact(rho0, rho1, &c)
    } else {
        let eps = match cfg.solver.epsilon {
            EpsilonSpec::Fixed(x) => x,
            _ => c.median_neighbour_cost().max(cfg.solver.eps_floor),
        };
        solve_kantorovich_entropic(rho0, rho1, &c, &EntropicOptions::new(eps))
    }
}

fn distance(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p = build_problem(cfg)?;
    let mut out = Artifacts::default();
    let (r0, r1) = (&p.initial, &p.target);
    let (report, cross_check, map) = if p.grid.dim() == 1 {
        let closed = wa_distance_1d(r0, r1, &p.embedding)?;
        let lp = if p.grid.len() <= MAX_EXACT_NODES {
            let (_, rep) = solve_kantorovich_exact(r0, r1, &cost_matrix(&p.embedding)?)?;
            let diff = (rep.wa_squared - closed.wa_squared).abs();
            out.at_most("closed_form_matches_lp", diff, 1e-8 * closed.wa_squared.max(1.0));
            Some(rep)
        } else {
            None
        };
        (closed, lp, map_1d_monotone(r0, r1, &p.embedding)?)
    } else {
        let (plan, rep) = solve_plan(&p, r0, r1, cfg)?;
        (rep, None, map_from_coupling(&plan, &p.embedding)?)
    };
    out.at_most("marginal_defect", report.marginal_defect, 1e-9);
    out.at_least("wa_squared_nonnegative", report.wa_squared, -1e-12);
    if let Some(gap) = report.gap {
        out.at_most("duality_gap", gap.abs(), 1e-8 * report.wa_squared.max(1.0));
    }
    out.json("ledgers/distance.json", &json!({ "report": report, "lp_cross_check": cross_check }))?;
    out.density("densities/rho0.csv", r0)?;
    out.density("densities/rho1.csv", r1)?;
    let mut buf = Vec::new();
    io::write_embedding(&p.embedding, &mut buf)?;
    out.add("ledgers/embedding.csv", buf);
    let mut buf = Vec::new();
    io::write_map(&map, p.embedding.q(), &mut buf)?;
    out.add("ledgers/map.csv", buf);
    let mut plot = Plot::default();
    plot.density("rho0", r0);
    plot.density("rho1", r1);
    out.add("plots/densities.csv", plot.bytes()?);
    Ok(out)
}

fn geodesic(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p = build_problem(cfg)?;
    if p.grid.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: p.grid.dim() });
    }
    let (r0, r1) = (&p.initial, &p.target);
    let (plan, w2) = if p.grid.len() <= MAX_EXACT_NODES {
        let (plan, rep) = solve_kantorovich_exact(r0, r1, &cost_matrix(&p.embedding)?)?;
        (plan, rep.wa_squared)
    } else {
        let plan = quantile_coupling(r0, r1, &p.embedding)?;
        let w2 = plan.transport_cost();
        (plan, w2)
    };
    let path = geodesic_path(&plan, &p.embedding, cfg.solver.slices, 1.0)?;
    let vel = velocities_from_path(&path, 1.0)?;
    let action = dynamic_action(&path, &vel, &p.field, 1.0, 1e-9)?;
    let mut out = Artifacts::default();
    let rel = if w2 > 0.0 { (action.action / w2 - 1.0).abs() } else { action.action };
    out.at_most("action_matches_wa_squared", rel, 2e-2);
    out.at_most("continuity_residual", action.continuity_residual, 1e-9);
    out.json(
        "ledgers/geodesic.json",
        &json!({ "wa_squared": w2, "action": action.action, "relative_error": rel,
                 "continuity_residual": action.continuity_residual, "slices": cfg.solver.slices }),
    )?;
    let mut plot = Plot::default();
    for (k, d) in path.iter().enumerate() {
        out.density(&format!("densities/path_{k:04}.csv"), d)?;
        plot.density(&format!("s={:.4}", k as f64 / cfg.solver.slices as f64), d);
    }
    out.add("plots/geodesic.csv", plot.bytes()?);
    Ok(out)
}

fn jko(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p = build_problem(cfg)?;
    let jc = jko_config(cfg, cfg.solver.tau)?;
    let traj = run_jko(&p.initial, &p.energy, &p.embedding, &jc)?;
    let mut out = Artifacts::default();
    out.at_most("completed", if traj.aborted.is_some() { 1.0 } else { 0.0 }, 0.0);
    let ap = apriori_report(&traj);
    for c in &ap.checks {
        out.checks.push(Check {
            name: format!("apriori.{}", c.name),
            passed: c.holds,
            value: c.excess,
            bound: c.allowed_slack,
        });
    }
    let mass_drift = traj.densities.iter().map(|d| (d.total_mass() - 1.0).abs()).fold(0.0, f64::max);
    out.at_most("mass_conservation", mass_drift, 1e-10);
    out.json(
        "ledgers/jko_ledger.json",
        &json!({ "tau": traj.tau, "solver": traj.solver, "epsilon": traj.epsilon,
                 "inf_free_energy": traj.inf_free_energy, "aborted": traj.aborted, "steps": traj.ledger }),
    )?;
    out.json("ledgers/step_reports.json", &traj.reports)?;
    out.json("ledgers/apriori.json", &ap)?;
    let mut plot = Plot::default();
    for e in &traj.ledger {
        plot.push("free_energy", e.time, e.free_energy);
    }
    write_trajectory(&mut out, &mut plot, &traj.densities, traj.tau, cfg.solver.write_every)?;
    out.add("plots/jko.csv", plot.bytes()?);
    Ok(out)
}

fn write_trajectory(out: &mut Artifacts, plot: &mut Plot, ds: &[Density<f64>], dt: f64, every: usize) -> Result<()> {
    let last = ds.len() - 1;
    for (k, d) in ds.iter().enumerate() {
        if k % every == 0 || k == last {
            out.density(&format!("densities/step_{k:06}.csv"), d)?;
            plot.density(&format!("t={:.6}", k as f64 * dt), d);
        }
    }
    Ok(())
}

fn fv_reference(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p = build_problem(cfg)?;
    let op = assemble_operator(&p.field, &p.energy)?;
    let traj = run_reference(&p.field, &p.energy, &p.initial, cfg.solver.tau, cfg.solver.horizon)?;
    let mut out = Artifacts::default();
    out.at_most("m_matrix", if op.is_m_matrix() { 0.0 } else { 1.0 }, 0.0);
    let mass_drift = traj.densities.iter().map(|d| (d.total_mass() - 1.0).abs()).fold(0.0, f64::max);
    out.at_most("mass_conservation", mass_drift, 1e-12);
    let f0 = traj.free_energy[0].abs().max(1.0);
    out.at_most("energy_nonincreasing", traj.max_energy_increase(), 1e-12 * f0);
    let (gibbs, _) = p.energy.gibbs();
    let gibbs_step = wassmob::fpref::implicit_euler_step(&op, &gibbs, cfg.solver.tau)?;
    out.at_most("gibbs_fixed_point", gibbs_step.l1_distance(&gibbs)?, 1e-12);
    let mut buf = Vec::new();
    op.write_triplets(&mut buf).map_err(|e| Error::Io { path: "ledgers/operator.mtx".into(), message: e.to_string() })?;
    out.add("ledgers/operator.mtx", buf);
    out.json("ledgers/fv_ledger.json", &json!({ "dt": traj.dt, "steps": traj.ledger() }))?;
    let mut plot = Plot::default();
    for (t, f) in traj.times.iter().zip(&traj.free_energy) {
        plot.push("free_energy", *t, *f);
    }
    write_trajectory(&mut out, &mut plot, &traj.densities, traj.dt, cfg.solver.write_every)?;
    out.add("plots/fv.csv", plot.bytes()?);
    Ok(out)
}

fn jko_vs_fv(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p = build_problem(cfg)?;
    let mut out = Artifacts::default();
    let mut plot = Plot::default();
    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    for k in 0..cfg.solver.refinements {
        let tau = cfg.solver.tau / f64::powi(2.0, k as i32);
        let jc = jko_config(cfg, tau)?;
        let traj = run_jko(&p.initial, &p.energy, &p.embedding, &jc)?;
        if let Some(why) = &traj.aborted {
            return Err(Error::SolverFailure(format!("JKO run at tau={tau:e} aborted: {why}")));
        }
        let fv = run_reference(&p.field, &p.energy, &p.initial, tau, jc.tau * jc.n_steps as f64)?;
        let gap = traj.last().l1_distance(fv.last())?;
        // truncation bound of the discrete Euler-Lagrange equation on the first step
        let el = if p.grid.dim() == 1 && traj.steps() > 0 {
            let map = map_1d_monotone(&traj.densities[0], &traj.densities[1], &p.embedding)?;
            let rep = el_residual(
                &traj.densities[0],
                &traj.densities[1],
                Some(&map),
                &p.energy,
                &p.embedding,
                tau,
                &[TestFunction::Quadratic],
                None,
            )?;
            let t = &rep.terms[0];
            out.at_most(format!("el_truncation_bound.tau={tau:e}"), t.residual, t.truncation_bound + t.slack);
            Some(rep)
        } else {
            None
        };
        out.density(&format!("densities/jko_tau_{k}.csv"), traj.last())?;
        out.density(&format!("densities/fv_tau_{k}.csv"), fv.last())?;
        plot.push("l1_gap", tau, gap);
        plot.density(&format!("jko.tau={tau:e}"), traj.last());
        plot.density(&format!("fv.tau={tau:e}"), fv.last());
        rows.push(json!({ "tau": tau, "epsilon": traj.epsilon, "steps": traj.steps(), "l1_gap": gap, "el": el }));
        gaps.push(gap);
    }
    let orders: Vec<f64> = gaps.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    out.at_least("tau_order", min_order, 0.8);
    out.json("ledgers/jko_vs_fv.json", &json!({ "runs": rows, "orders": orders, "min_order": min_order }))?;
    out.add("plots/jko_vs_fv.csv", plot.bytes()?);
    Ok(out)
}

fn relaxation(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let r = &cfg.relaxation;
    let tau = cfg.solver.tau;
    let sys = QuadraticSystem::random(r.dim, r.epsilons[0], tau, cfg.seed)?;
    let y0 = vec![1.0; r.dim];
    let v0: Vec<f64> = (0..r.dim).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let cmp = run_comparison(&sys, &y0, &v0, r.horizon, &r.epsilons)?;
    let mut out = Artifacts::default();
    out.at_most("window_gap_monotone", if cmp.monotone { 0.0 } else { 1.0 }, 0.0);
    let mut audits = Vec::new();
    let mut plot = Plot::default();
    for (k, entry) in cmp.entries.iter().enumerate() {
        let s = sys.with_epsilon(entry.epsilon)?;
        let traj = damped_trajectory(&s, &y0, &v0, cmp.steps)?;
        let audit = dissipation_audit(&s, &traj, r.samples, cfg.seed.wrapping_add(k as u64));
        out.at_least(format!("dissipation_margin.eps={:e}", entry.epsilon), audit.min_margin, 0.0);
        let worst = audit.balance.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.at_most(format!("energy_balance_sign.eps={:e}", entry.epsilon), worst, 0.0);
        for (j, g) in entry.gap_curve.iter().enumerate() {
            plot.push(&format!("gap.eps={:e}", entry.epsilon), j as f64 * tau, *g);
        }
        audits.push(json!({ "epsilon": entry.epsilon, "audit": audit }));
    }
    out.json("ledgers/relaxation.json", &json!({ "comparison": cmp, "audits": audits }))?;
    out.add("plots/relaxation.csv", plot.bytes()?);
    Ok(out)
}

/// Smooth positive random density: three Gaussian bumps over a floor.
fn random_density(grid: &Grid<f64>, rng: &mut ChaCha8Rng) -> Result<Density<f64>> {
    let d = grid.dim();
    let span: Vec<(f64, f64)> = grid.axes().iter().map(|a| (a.min, a.max)).collect();
    let bumps: Vec<([f64; 2], f64, f64)> = (0..3)
        .map(|_| {
            let mut c = [0.0; 2];
            for k in 0..d {
                c[k] = rng.gen_range(span[k].0..span[k].1);
            }
            let l = span[0].1 - span[0].0;
            (c, rng.gen_range(0.002..0.05) * l * l, rng.gen_range(0.2..1.0))
        })
        .collect();
    let floor = rng.gen_range(0.01..0.2);
    Density::from_fn(grid.clone(), |x| {
        floor
            + bumps
                .iter()
                .map(|(c, v, a)| a * (-(0..d).map(|k| (x[k] - c[k]).powi(2)).sum::<f64>() / (2.0 * v)).exp())
                .sum::<f64>()
    })
}

fn metric_axioms(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p = build_problem(cfg)?;
    let cost = cost_matrix(&p.embedding)?;
    let one_d = p.grid.dim() == 1;
    if !one_d && p.grid.len() > MAX_EXACT_NODES {
        return Err(Error::SizeExceeded { size: p.grid.len(), limit: MAX_EXACT_NODES });
    }
    let w2 = |a: &Density<f64>, b: &Density<f64>| -> Result<f64> {
        if one_d {
            Ok(wa_distance_1d(a, b, &p.embedding)?.wa_squared)
        } else {
            Ok(solve_kantorovich_exact(a, b, &cost)?.1.wa_squared)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.solver.samples;
    let (mut tri_pass, mut sym_pass, mut id_pass) = (0usize, 0usize, 0usize);
    let (mut min_slack, mut max_asym, mut max_self, mut max_route) = (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64);
    let mut plot = Plot::default();
    for t in 0..n {
        let a = random_density(&p.grid, &mut rng)?;
        let b = random_density(&p.grid, &mut rng)?;
        let c = random_density(&p.grid, &mut rng)?;
        let (ab, bc, ac, ba, aa) = (w2(&a, &b)?, w2(&b, &c)?, w2(&a, &c)?, w2(&b, &a)?, w2(&a, &a)?);
        let slack = ab.max(0.0).sqrt() + bc.max(0.0).sqrt() - ac.max(0.0).sqrt();
        tri_pass += usize::from(slack >= -1e-7);
        sym_pass += usize::from((ab - ba).abs() <= 1e-9);
        id_pass += usize::from(aa.abs() <= 1e-9);
        min_slack = min_slack.min(slack);
        max_asym = max_asym.max((ab - ba).abs());
        max_self = max_self.max(aa.abs());
        plot.push("triangle_slack", t as f64, slack);
        // second route on a subset: the closed form against the exact LP
        if one_d && t < 10 && p.grid.len() <= MAX_EXACT_NODES {
            let lp = solve_kantorovich_exact(&a, &b, &cost)?.1.wa_squared;
            max_route = max_route.max((lp - ab).abs());
        }
    }
    let mut out = Artifacts::default();
    out.at_least("triangle_inequality", tri_pass as f64, n as f64);
    out.at_least("symmetry", sym_pass as f64, n as f64);
    out.at_least("identity", id_pass as f64, n as f64);
    if one_d {
        out.at_most("closed_form_matches_lp", max_route, 1e-8);
    }
    out.json(
        "ledgers/metric_axioms.json",
        &json!({ "triples": n, "triangle_pass_count": tri_pass, "symmetry_pass_count": sym_pass,
                 "identity_pass_count": id_pass, "min_triangle_slack": min_slack,
                 "max_asymmetry": max_asym, "max_self_distance": max_self, "max_route_difference": max_route }),
    )?;
    out.add("plots/triangle_slack.csv", plot.bytes()?);
    Ok(out)
}
