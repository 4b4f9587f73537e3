//! Flat `key = value` configuration with `[section]` headers.
//!
//! Top-level keys: `kind`, `seed`, `out`. Sections: `grid`, `mobility`,
//! `potential`, `initial`, `target`, `solver`, `relaxation`. `#` starts a
//! comment. Relative paths are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const DEFAULT_TAU: f64 = 1e-2;
pub const DEFAULT_EPS_FLOOR: f64 = 1e-4;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExperimentKind {
    Distance,
    Geodesic,
    Jko,
    FvReference,
    JkoVsFv,
    Relaxation,
    MetricAxioms,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::Distance,
        Self::Geodesic,
        Self::Jko,
        Self::FvReference,
        Self::JkoVsFv,
        Self::Relaxation,
        Self::MetricAxioms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Distance => "distance",
            Self::Geodesic => "geodesic",
            Self::Jko => "jko",
            Self::FvReference => "fv_reference",
            Self::JkoVsFv => "jko_vs_fv",
            Self::Relaxation => "relaxation",
            Self::MetricAxioms => "metric_axioms",
        }
    }

    fn needs_mobility(self) -> bool {
        self != Self::Relaxation
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Nodes per axis; the length is the dimension.
    pub nodes: Vec<usize>,
    /// `min, max` per axis.
    pub bounds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MobilitySpec {
    /// Constant mobility `A`: one entry (scalar) or four (row-major 2×2).
    Constant { a: Vec<f64> },
    /// 1D friction `B(x) = scale·exp(rate·x)`.
    Exponential { scale: f64, rate: f64 },
    /// 2D friction `diag(scale_x·exp(rate_x·x), scale_y·exp(rate_y·y))`.
    Separable { scale: [f64; 2], rate: [f64; 2] },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Zero,
    /// `strength·|x − center|²`.
    QuadraticWell { strength: f64, center: Vec<f64> },
    /// `strength·(|x − center|² − width²)²`.
    DoubleWell { strength: f64, center: Vec<f64>, width: f64 },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensitySpec {
    Uniform,
    /// `exp(−|x − center|²/(2·variance)) + floor`, normalised.
    Gaussian { center: Vec<f64>, variance: f64, floor: f64 },
    /// `e^{−Ψ}/Z` for the configured potential.
    Gibbs,
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerSolverSpec {
    Entropic,
    ExactSmall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonSpec {
    Auto,
    Matched { factor: f64, tau_ref: f64 },
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSpec {
    pub tau: f64,
    pub horizon: f64,
    pub inner: InnerSolverSpec,
    pub epsilon: EpsilonSpec,
    pub eps_floor: f64,
    pub marginal_tol: f64,
    pub kkt_tol: f64,
    /// Time slices of a geodesic path.
    pub slices: usize,
    /// Sampled triples for `metric_axioms`.
    pub samples: usize,
    /// Number of τ values (τ, τ/2, …) in `jko_vs_fv`.
    pub refinements: usize,
    /// Write every k-th density of a trajectory.
    pub write_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationSpec {
    pub dim: usize,
    pub epsilons: Vec<f64>,
    pub horizon: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub grid: GridSpec,
    pub mobility: Option<MobilitySpec>,
    pub potential: PotentialSpec,
    pub initial: DensitySpec,
    pub target: Option<DensitySpec>,
    pub solver: SolverSpec,
    pub relaxation: RelaxationSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseIssue {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    Io { path: String, message: String },
    Parse(Vec<ParseIssue>),
    Validation(Vec<FieldIssue>),
}

impl ConfigError {
    pub fn fields(&self) -> Vec<&str> {
        match self {
            Self::Validation(v) => v.iter().map(|f| f.field.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io { path, message } => write!(f, "cannot read {path}: {message}"),
            Self::Parse(v) => {
                writeln!(f, "config parse error(s):")?;
                for p in v {
                    writeln!(f, "  line {}, column {}: {}", p.line, p.column, p.message)?;
                }
                Ok(())
            }
            Self::Validation(v) => {
                writeln!(f, "config validation error(s):")?;
                for p in v {
                    writeln!(f, "  {}: {}", p.field, p.message)?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

const SECTIONS: [&str; 7] = ["grid", "mobility", "potential", "initial", "target", "solver", "relaxation"];

struct Entry {
    value: String,
    line: usize,
    column: usize,
    used: bool,
}

struct Reader {
    entries: BTreeMap<String, Entry>,
    parse: Vec<ParseIssue>,
    fields: Vec<FieldIssue>,
    base: PathBuf,
}

fn tokenize(text: &str) -> (BTreeMap<String, Entry>, Vec<ParseIssue>) {
    let mut entries = BTreeMap::new();
    let mut issues = Vec::new();
    let mut section = String::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("");
        let indent = body.len() - body.trim_start().len();
        let t = body.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('[') {
            match rest.strip_suffix(']') {
                Some(name) if SECTIONS.contains(&name.trim()) => section = name.trim().to_string(),
                Some(name) => issues.push(ParseIssue {
                    line,
                    column: indent + 2,
                    message: format!("unknown section `{}`", name.trim()),
                }),
                None => issues.push(ParseIssue {
                    line,
                    column: indent + t.len() + 1,
                    message: "section header is missing `]`".into(),
                }),
            }
            continue;
        }
        let Some(eq) = t.find('=') else {
            issues.push(ParseIssue { line, column: indent + 1, message: "expected `key = value`".into() });
            continue;
        };
        let key = t[..eq].trim();
        let value = t[eq + 1..].trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            issues.push(ParseIssue { line, column: indent + 1, message: format!("invalid key `{key}`") });
            continue;
        }
        let vcol = indent + eq + 2 + (t[eq + 1..].len() - t[eq + 1..].trim_start().len());
        if value.is_empty() {
            issues.push(ParseIssue { line, column: vcol, message: format!("key `{key}` has no value") });
            continue;
        }
        let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        if let Some(prev) = entries.get(&full) {
            let prev: &Entry = prev;
            issues.push(ParseIssue {
                line,
                column: indent + 1,
                message: format!("duplicate key `{full}` (first set on line {})", prev.line),
            });
            continue;
        }
        entries.insert(full, Entry { value: value.to_string(), line, column: vcol, used: false });
    }
    (entries, issues)
}

trait Value: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
}

impl Value for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"))
    }
}

impl Value for usize {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse::<usize>().map_err(|_| format!("`{s}` is not a nonnegative integer"))
    }
}

impl Value for u64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse::<u64>().map_err(|_| format!("`{s}` is not a nonnegative integer"))
    }
}

impl Value for String {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(s.to_string())
    }
}

impl<V: Value> Value for Vec<V> {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(',').map(|p| V::parse_value(p.trim())).collect()
    }
}

impl Reader {
    fn raw(&mut self, key: &str) -> Option<(String, usize, usize)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line, e.column)
        })
    }

    fn opt<V: Value>(&mut self, key: &str) -> Option<V> {
        let (v, line, column) = self.raw(key)?;
        match V::parse_value(&v) {
            Ok(x) => Some(x),
            Err(m) => {
                self.parse.push(ParseIssue { line, column, message: format!("{key}: {m}") });
                None
            }
        }
    }

    fn get<V: Value>(&mut self, key: &str, default: V) -> V {
        self.opt(key).unwrap_or(default)
    }

    fn path(&mut self, key: &str) -> PathBuf {
        let Some(p) = self.opt::<String>(key) else {
            if !self.entries.contains_key(key) {
                self.invalid(key, "required field is missing");
            }
            return PathBuf::new();
        };
        let p = PathBuf::from(p);
        let p = if p.is_absolute() { p } else { self.base.join(p) };
        if !p.is_file() {
            self.invalid(key, &format!("file {} does not exist", p.display()));
        }
        p
    }

    fn invalid(&mut self, field: &str, message: &str) {
        self.fields.push(FieldIssue { field: field.into(), message: message.into() });
    }

    fn check(&mut self, ok: bool, field: &str, message: &str) {
        if !ok {
            self.invalid(field, message);
        }
    }
}

fn default_center(dim: usize, bounds: &[f64]) -> Vec<f64> {
    (0..dim).map(|k| 0.5 * (bounds[2 * k] + bounds[2 * k + 1])).collect()
}

impl ExperimentConfig {
    /// Defaults for everything but the mobility, which has none.
    pub fn defaults() -> Self {
        Self {
            kind: None,
            seed: DEFAULT_SEED,
            out: None,
            grid: GridSpec { nodes: vec![32], bounds: vec![0.0, 1.0] },
            mobility: None,
            potential: PotentialSpec::Zero,
            initial: DensitySpec::Uniform,
            target: None,
            solver: SolverSpec {
                tau: DEFAULT_TAU,
                horizon: 0.5,
                inner: InnerSolverSpec::Entropic,
                epsilon: EpsilonSpec::Auto,
                eps_floor: DEFAULT_EPS_FLOOR,
                marginal_tol: 1e-11,
                kkt_tol: 1e-8,
                slices: 32,
                samples: 200,
                refinements: 3,
                write_every: 1,
            },
            relaxation: RelaxationSpec { dim: 10, epsilons: vec![1e-1, 1e-2, 1e-3, 1e-4], horizon: 3.0, samples: 1000 },
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.nodes.len()
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let (entries, parse) = tokenize(text);
        let mut r = Reader { entries, parse, fields: Vec::new(), base: base.to_path_buf() };
        let d = Self::defaults();

        let kind = r.opt::<String>("kind").and_then(|s| match s.parse::<ExperimentKind>() {
            Ok(k) => Some(k),
            Err(m) => {
                r.invalid("kind", &m);
                None
            }
        });
        let seed = r.get("seed", d.seed);
        let out = r.opt::<String>("out").map(|s| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        });

        let nodes: Vec<usize> = r.get("grid.nodes", d.grid.nodes.clone());
        let dim = nodes.len();
        r.check((1..=2).contains(&dim), "grid.nodes", "one or two axes expected");
        r.check(nodes.iter().all(|&n| n >= 2), "grid.nodes", "at least two nodes per axis");
        let dim = dim.clamp(1, 2);
        let default_bounds: Vec<f64> = (0..dim).flat_map(|_| [0.0, 1.0]).collect();
        let bounds: Vec<f64> = r.get("grid.bounds", default_bounds.clone());
        let bounds = if bounds.len() == 2 * dim {
            for k in 0..dim {
                r.check(
                    bounds[2 * k] < bounds[2 * k + 1] && bounds.iter().all(|b| b.is_finite()),
                    "grid.bounds",
                    "each axis needs finite min < max",
                );
            }
            bounds
        } else {
            r.invalid("grid.bounds", &format!("{} values expected (min, max per axis)", 2 * dim));
            default_bounds
        };
        let center_default = default_center(dim, &bounds);

        let mobility = match r.opt::<String>("mobility.family").as_deref() {
            None => {
                if kind.map_or(true, |k| k.needs_mobility()) {
                    r.invalid("mobility.family", "required field is missing");
                }
                None
            }
            Some("constant") => {
                let a: Vec<f64> = r.get("mobility.a", vec![1.0]);
                r.check(a.len() == 1 || a.len() == 4, "mobility.a", "one or four entries expected");
                r.check(a.iter().all(|v| v.is_finite()), "mobility.a", "entries must be finite");
                Some(MobilitySpec::Constant { a })
            }
            Some("exponential") => {
                r.check(dim == 1, "mobility.family", "exponential is a 1D family");
                let scale = r.get("mobility.scale", 1.0);
                let rate = r.get("mobility.rate", 2.0);
                r.check(scale > 0.0 && scale.is_finite(), "mobility.scale", "must be positive");
                r.check(rate.is_finite(), "mobility.rate", "must be finite");
                Some(MobilitySpec::Exponential { scale, rate })
            }
            Some("separable") => {
                r.check(dim == 2, "mobility.family", "separable is a 2D family");
                let scale: Vec<f64> = r.get("mobility.scale", vec![1.0, 1.0]);
                let rate: Vec<f64> = r.get("mobility.rate", vec![0.0, 0.0]);
                r.check(scale.len() == 2 && scale.iter().all(|&s| s > 0.0), "mobility.scale", "two positive values expected");
                r.check(rate.len() == 2 && rate.iter().all(|s| s.is_finite()), "mobility.rate", "two finite values expected");
                let two = |v: &[f64], f: f64| [v.first().copied().unwrap_or(f), v.get(1).copied().unwrap_or(f)];
                Some(MobilitySpec::Separable { scale: two(&scale, 1.0), rate: two(&rate, 0.0) })
            }
            Some("csv") => Some(MobilitySpec::Csv { path: r.path("mobility.path") }),
            Some(other) => {
                r.invalid("mobility.family", &format!("unknown family `{other}`"));
                None
            }
        };

        let center = |r: &mut Reader, key: &str| -> Vec<f64> {
            let c: Vec<f64> = r.get(key, center_default.clone());
            if c.len() != dim {
                r.invalid(key, &format!("{dim} coordinate(s) expected"));
                return center_default.clone();
            }
            c
        };
        let potential = match r.get::<String>("potential.form", "zero".into()).as_str() {
            "zero" => PotentialSpec::Zero,
            "quadratic_well" => {
                let strength = r.get("potential.strength", 1.0);
                r.check(strength >= 0.0 && strength.is_finite(), "potential.strength", "must be nonnegative");
                PotentialSpec::QuadraticWell { strength, center: center(&mut r, "potential.center") }
            }
            "double_well" => {
                let strength = r.get("potential.strength", 1.0);
                let width = r.get("potential.width", 0.25);
                r.check(strength >= 0.0 && strength.is_finite(), "potential.strength", "must be nonnegative");
                r.check(width > 0.0 && width.is_finite(), "potential.width", "must be positive");
                PotentialSpec::DoubleWell { strength, center: center(&mut r, "potential.center"), width }
            }
            "csv" => PotentialSpec::Csv { path: r.path("potential.path") },
            other => {
                r.invalid("potential.form", &format!("unknown form `{other}`"));
                PotentialSpec::Zero
            }
        };

        let density = |r: &mut Reader, sec: &str, default: &str| -> DensitySpec {
            let form: String = r.get(&format!("{sec}.form"), default.to_string());
            match form.as_str() {
                "uniform" => DensitySpec::Uniform,
                "gaussian" => {
                    let variance = r.get(&format!("{sec}.variance"), 0.01);
                    let floor = r.get(&format!("{sec}.floor"), 0.0);
                    r.check(variance > 0.0 && variance.is_finite(), &format!("{sec}.variance"), "must be positive");
                    r.check(floor >= 0.0 && floor.is_finite(), &format!("{sec}.floor"), "must be nonnegative");
                    DensitySpec::Gaussian { center: center(r, &format!("{sec}.center")), variance, floor }
                }
                "gibbs" => DensitySpec::Gibbs,
                "csv" => DensitySpec::Csv { path: r.path(&format!("{sec}.path")) },
                other => {
                    r.invalid(&format!("{sec}.form"), &format!("unknown form `{other}`"));
                    DensitySpec::Uniform
                }
            }
        };
        let initial = density(&mut r, "initial", "uniform");
        let has_target = r.entries.keys().any(|k| k.starts_with("target."));
        let target = if has_target { Some(density(&mut r, "target", "uniform")) } else { None };

        let s = &d.solver;
        let tau = r.get("solver.tau", s.tau);
        let horizon = r.get("solver.horizon", s.horizon);
        let inner = match r.get::<String>("solver.inner", "entropic".into()).as_str() {
            "entropic" => InnerSolverSpec::Entropic,
            "exact_small" => InnerSolverSpec::ExactSmall,
            other => {
                r.invalid("solver.inner", &format!("unknown inner solver `{other}` (entropic, exact_small)"));
                InnerSolverSpec::Entropic
            }
        };
        let epsilon = match r.get::<String>("solver.epsilon", "auto".into()).as_str() {
            "auto" => EpsilonSpec::Auto,
            "matched" => EpsilonSpec::Matched {
                factor: r.get("solver.eps_factor", 2.0),
                tau_ref: r.get("solver.tau_ref", 1e-3),
            },
            v => match v.parse::<f64>() {
                Ok(x) => EpsilonSpec::Fixed(x),
                Err(_) => {
                    r.invalid("solver.epsilon", "expected auto, matched or a number");
                    EpsilonSpec::Auto
                }
            },
        };
        let solver = SolverSpec {
            tau,
            horizon,
            inner,
            epsilon,
            eps_floor: r.get("solver.eps_floor", s.eps_floor),
            marginal_tol: r.get("solver.marginal_tol", s.marginal_tol),
            kkt_tol: r.get("solver.kkt_tol", s.kkt_tol),
            slices: r.get("solver.slices", s.slices),
            samples: r.get("solver.samples", s.samples),
            refinements: r.get("solver.refinements", s.refinements),
            write_every: r.get("solver.write_every", s.write_every),
        };
        r.check(solver.tau > 0.0 && solver.tau <= 1.0, "solver.tau", "must lie in (0, 1]");
        r.check(solver.horizon >= 0.0 && solver.horizon.is_finite(), "solver.horizon", "must be nonnegative");
        r.check(
            solver.horizon / solver.tau <= 1e6,
            "solver.horizon",
            "more than 1e6 steps requested",
        );
        match solver.epsilon {
            EpsilonSpec::Fixed(x) => r.check(x > 0.0 && x.is_finite(), "solver.epsilon", "must be positive"),
            EpsilonSpec::Matched { factor, tau_ref } => {
                r.check(factor > 0.0 && factor.is_finite(), "solver.eps_factor", "must be positive");
                r.check(tau_ref > 0.0 && tau_ref.is_finite(), "solver.tau_ref", "must be positive");
            }
            EpsilonSpec::Auto => {}
        }
        r.check(solver.eps_floor > 0.0 && solver.eps_floor <= 1e-2, "solver.eps_floor", "must lie in (0, 1e-2]");
        r.check(solver.marginal_tol > 0.0 && solver.marginal_tol < 1.0, "solver.marginal_tol", "must lie in (0, 1)");
        r.check(solver.kkt_tol > 0.0 && solver.kkt_tol < 1.0, "solver.kkt_tol", "must lie in (0, 1)");
        r.check(solver.slices >= 1, "solver.slices", "must be at least 1");
        r.check(solver.samples >= 1, "solver.samples", "must be at least 1");
        r.check((2..=8).contains(&solver.refinements), "solver.refinements", "must lie in [2, 8]");
        r.check(solver.write_every >= 1, "solver.write_every", "must be at least 1");

        let rd = &d.relaxation;
        let relaxation = RelaxationSpec {
            dim: r.get("relaxation.dim", rd.dim),
            epsilons: r.get("relaxation.epsilons", rd.epsilons.clone()),
            horizon: r.get("relaxation.horizon", rd.horizon),
            samples: r.get("relaxation.samples", rd.samples),
        };
        r.check((1..=1000).contains(&relaxation.dim), "relaxation.dim", "must lie in [1, 1000]");
        r.check(
            !relaxation.epsilons.is_empty() && relaxation.epsilons.iter().all(|&e| e > 0.0 && e.is_finite()),
            "relaxation.epsilons",
            "a nonempty list of positive values expected",
        );
        r.check(relaxation.horizon > 0.0 && relaxation.horizon.is_finite(), "relaxation.horizon", "must be positive");

        let unused: Vec<(String, usize, usize)> = r
            .entries
            .iter()
            .filter(|(_, e)| !e.used)
            .map(|(k, e)| (k.clone(), e.line, e.column))
            .collect();
        for (k, line, _) in unused {
            r.invalid(&k, &format!("unknown or unused key (line {line})"));
        }

        if !r.parse.is_empty() {
            r.parse.sort_by_key(|p| (p.line, p.column));
            return Err(ConfigError::Parse(r.parse));
        }
        if !r.fields.is_empty() {
            return Err(ConfigError::Validation(r.fields));
        }
        Ok(Self { kind, seed, out, grid: GridSpec { nodes, bounds }, mobility, potential, initial, target, solver, relaxation })
    }

    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Self::parse_str(&text, &base)
    }

    /// Canonical text form; every field is written out explicitly.
    pub fn emit(&self) -> String {
        fn list<V: fmt::Display>(v: &[V]) -> String {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
        }
        let mut text = String::new();
        let w = &mut text;
        if let Some(k) = self.kind {
            let _ = writeln!(w, "kind = {k}");
        }
        let _ = writeln!(w, "seed = {}", self.seed);
        if let Some(o) = &self.out {
            let _ = writeln!(w, "out = {}", o.display());
        }
        let _ = writeln!(w, "\n[grid]\nnodes = {}\nbounds = {}", list(&self.grid.nodes), list(&self.grid.bounds));
        if let Some(m) = &self.mobility {
            let _ = writeln!(w, "\n[mobility]");
            match m {
                MobilitySpec::Constant { a } => {
                    let _ = writeln!(w, "family = constant\na = {}", list(a));
                }
                MobilitySpec::Exponential { scale, rate } => {
                    let _ = writeln!(w, "family = exponential\nscale = {scale}\nrate = {rate}");
                }
                MobilitySpec::Separable { scale, rate } => {
                    let _ = writeln!(w, "family = separable\nscale = {}\nrate = {}", list(scale), list(rate));
                }
                MobilitySpec::Csv { path } => {
                    let _ = writeln!(w, "family = csv\npath = {}", path.display());
                }
            }
        }
        let _ = writeln!(w, "\n[potential]");
        match &self.potential {
            PotentialSpec::Zero => {
                let _ = writeln!(w, "form = zero");
            }
            PotentialSpec::QuadraticWell { strength, center } => {
                let _ = writeln!(w, "form = quadratic_well\nstrength = {strength}\ncenter = {}", list(center));
            }
            PotentialSpec::DoubleWell { strength, center, width } => {
                let _ = writeln!(
                    w,
                    "form = double_well\nstrength = {strength}\ncenter = {}\nwidth = {width}",
                    list(center)
                );
            }
            PotentialSpec::Csv { path } => {
                let _ = writeln!(w, "form = csv\npath = {}", path.display());
            }
        }
        let density = |w: &mut String, sec: &str, d: &DensitySpec| {
            let _ = writeln!(w, "\n[{sec}]");
            match d {
                DensitySpec::Uniform => {
                    let _ = writeln!(w, "form = uniform");
                }
                DensitySpec::Gaussian { center, variance, floor } => {
                    let _ = writeln!(
                        w,
                        "form = gaussian\ncenter = {}\nvariance = {variance}\nfloor = {floor}",
                        list(center)
                    );
                }
                DensitySpec::Gibbs => {
                    let _ = writeln!(w, "form = gibbs");
                }
                DensitySpec::Csv { path } => {
                    let _ = writeln!(w, "form = csv\npath = {}", path.display());
                }
            }
        };
        density(w, "initial", &self.initial);
        if let Some(t) = &self.target {
            density(w, "target", t);
        }
        let s = &self.solver;
        let _ = writeln!(w, "\n[solver]\ntau = {}\nhorizon = {}", s.tau, s.horizon);
        let _ = writeln!(
            w,
            "inner = {}",
            match s.inner {
                InnerSolverSpec::Entropic => "entropic",
                InnerSolverSpec::ExactSmall => "exact_small",
            }
        );
        match s.epsilon {
            EpsilonSpec::Auto => {
                let _ = writeln!(w, "epsilon = auto");
            }
            EpsilonSpec::Matched { factor, tau_ref } => {
                let _ = writeln!(w, "epsilon = matched\neps_factor = {factor}\ntau_ref = {tau_ref}");
            }
            EpsilonSpec::Fixed(x) => {
                let _ = writeln!(w, "epsilon = {x}");
            }
        }
        let _ = writeln!(
            w,
            "eps_floor = {}\nmarginal_tol = {}\nkkt_tol = {}\nslices = {}\nsamples = {}\nrefinements = {}\nwrite_every = {}",
            s.eps_floor, s.marginal_tol, s.kkt_tol, s.slices, s.samples, s.refinements, s.write_every
        );
        let r = &self.relaxation;
        let _ = writeln!(
            w,
            "\n[relaxation]\ndim = {}\nepsilons = {}\nhorizon = {}\nsamples = {}",
            r.dim,
            list(&r.epsilons),
            r.horizon,
            r.samples
        );
        text
    }
}
