use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use serde_json::Value;

use wassmob_cli::config::{DensitySpec, EpsilonSpec, GridSpec, InnerSolverSpec, MobilitySpec, PotentialSpec};
use wassmob_cli::{ExperimentConfig, ExperimentKind};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wassmob"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(kind: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(kind)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("MANIFEST.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn identical_inputs_give_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("jko.cfg");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("jko", &cfg, &a, &[]).status.success());
    let out = bin()
        .env("WASSMOB_THREADS", "1")
        .args(["jko", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(&a), manifest(&b));
    assert_eq!(fs::read(a.join("MANIFEST.json")).unwrap(), fs::read(b.join("MANIFEST.json")).unwrap());
    for d in ["densities", "ledgers", "plots"] {
        assert!(a.join(d).is_dir());
    }
    assert!(a.join("config.echo").is_file());
}

#[test]
fn manifest_hashes_match_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert!(run("distance", &configs().join("distance.cfg"), &out, &[]).status.success());
    let m = manifest(&out);
    let entries = m["entries"].as_array().unwrap();
    assert!(!entries.is_empty());
    for e in entries {
        let bytes = fs::read(out.join(e["path"].as_str().unwrap())).unwrap();
        use sha2::Digest;
        assert_eq!(hex::encode(sha2::Sha256::digest(&bytes)), e["sha256"].as_str().unwrap());
    }
}

#[test]
fn distance_to_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kind = distance\n[grid]\nnodes = 48\n[mobility]\nfamily = exponential\n\
         [initial]\nform = gaussian\ncenter = 0.4\nvariance = 0.01\nfloor = 0.05\n",
    );
    let out = dir.path().join("o");
    assert!(run("distance", &cfg, &out, &[]).status.success());
    let rep: Value = serde_json::from_str(&fs::read_to_string(out.join("ledgers/distance.json")).unwrap()).unwrap();
    assert!(rep["report"]["wa_squared"].as_f64().unwrap().abs() <= 1e-12);
}

#[test]
fn metric_axioms_pass_count_equals_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run("metric_axioms", &configs().join("metric_axioms.cfg"), &out, &["--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let rep: Value = serde_json::from_str(&fs::read_to_string(out.join("ledgers/metric_axioms.json")).unwrap()).unwrap();
    assert_eq!(rep["triangle_pass_count"], rep["triples"]);
    assert_eq!(rep["triples"].as_u64(), Some(200));
    assert_eq!(manifest(&out)["seed"].as_u64(), Some(9));
}

#[test]
fn unwritable_outdir_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let o = run("distance", &configs().join("distance.cfg"), &blocker.join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("file"));
}

#[test]
fn failed_experiment_writes_failure_manifest() {
    let dir = tempfile::tempdir().unwrap();
    // geodesics are one-dimensional only
    let cfg = write_config(dir.path(), "[grid]\nnodes = 4, 4\n[mobility]\nfamily = constant\n");
    let out = dir.path().join("o");
    let o = run("geodesic", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let m = manifest(&out);
    assert_eq!(m["passed"], Value::Bool(false));
    assert!(m["error"].as_str().unwrap().contains("dimension"));
    assert_eq!(m["entries"].as_array().unwrap().len(), 0);
}

#[test]
fn invalid_config_lists_fields_and_kind_mismatch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = jko\n[solver]\ntau = 0\n");
    let o = run("jko", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("mobility.family") && err.contains("solver.tau"), "{err}");
    let cfg = write_config(dir.path(), "kind = jko\n[mobility]\nfamily = constant\n");
    assert_eq!(run("distance", &cfg, &dir.path().join("o"), &[]).status.code(), Some(2));
}

#[test]
fn config_echo_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert!(run("jko_vs_fv", &configs().join("jko_vs_fv.cfg"), &out, &[]).status.success());
    let echo = fs::read_to_string(out.join("config.echo")).unwrap();
    let c = ExperimentConfig::parse_str(&echo, dir.path()).unwrap();
    assert_eq!(c.kind, Some(ExperimentKind::JkoVsFv));
    assert_eq!(c.emit(), echo);
    let rep: Value = serde_json::from_str(&fs::read_to_string(out.join("ledgers/jko_vs_fv.json")).unwrap()).unwrap();
    assert!(rep["min_order"].as_f64().unwrap() >= 0.8);
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = bin()
        .env("WASSMOB_THREADS", "zero")
        .args(["distance", "--config"])
        .arg(configs().join("distance.cfg"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    for e in fs::read_dir(configs()).unwrap() {
        let p = e.unwrap().path();
        let c = ExperimentConfig::parse_file(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(c.kind.is_some(), "{}", p.display());
    }
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e3..1e3f64, 1e-9..1e-3f64, Just(0.1 + 0.2)]
}

fn positive() -> impl Strategy<Value = f64> {
    prop_oneof![1e-6..1e3f64, Just(1.0 / 3.0)]
}

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    let grid = prop_oneof![
        (2usize..500, finite()).prop_map(|(n, a)| GridSpec { nodes: vec![n], bounds: vec![a, a + 1.5] }),
        (2usize..40, 2usize..40, finite(), finite())
            .prop_map(|(n, m, a, b)| GridSpec { nodes: vec![n, m], bounds: vec![a, a + 1.0, b, b + 0.25] }),
    ];
    let mobility = prop_oneof![
        prop::collection::vec(positive(), 1..=1).prop_map(|a| MobilitySpec::Constant { a }),
        (positive(), finite()).prop_map(|(scale, rate)| MobilitySpec::Exponential { scale, rate }),
        (positive(), positive(), finite(), finite())
            .prop_map(|(a, b, c, d)| MobilitySpec::Separable { scale: [a, b], rate: [c, d] }),
    ];
    let potential = prop_oneof![
        Just(PotentialSpec::Zero),
        (positive(), finite()).prop_map(|(strength, c)| PotentialSpec::QuadraticWell { strength, center: vec![c] }),
        (positive(), finite(), positive())
            .prop_map(|(strength, c, width)| PotentialSpec::DoubleWell { strength, center: vec![c], width }),
    ];
    let density = prop_oneof![
        Just(DensitySpec::Uniform),
        Just(DensitySpec::Gibbs),
        (finite(), positive(), positive()).prop_map(|(c, variance, floor)| DensitySpec::Gaussian {
            center: vec![c],
            variance,
            floor
        }),
    ];
    let eps = prop_oneof![
        Just(EpsilonSpec::Auto),
        positive().prop_map(EpsilonSpec::Fixed),
        (positive(), positive()).prop_map(|(factor, tau_ref)| EpsilonSpec::Matched { factor, tau_ref }),
    ];
    (
        (prop::sample::select(ExperimentKind::ALL.to_vec()), any::<u64>(), grid, mobility, potential),
        (density.clone(), prop::option::of(density), eps, 1e-6..1.0f64, 0.0..10.0f64, any::<bool>()),
        prop::collection::vec(positive(), 1..5),
    )
        .prop_map(|((kind, seed, grid, mobility, potential), (initial, target, epsilon, tau, horizon, exact), epsilons)| {
            let mut c = ExperimentConfig::defaults();
            let dim = grid.nodes.len();
            c.kind = Some(kind);
            c.seed = seed;
            // centers follow the grid dimension
            let fix = |v: &mut Vec<f64>| v.resize(dim, 0.5);
            c.potential = match potential {
                PotentialSpec::QuadraticWell { strength, mut center } => {
                    fix(&mut center);
                    PotentialSpec::QuadraticWell { strength, center }
                }
                PotentialSpec::DoubleWell { strength, mut center, width } => {
                    fix(&mut center);
                    PotentialSpec::DoubleWell { strength, center, width }
                }
                p => p,
            };
            let fix_d = |d: DensitySpec| match d {
                DensitySpec::Gaussian { mut center, variance, floor } => {
                    center.resize(dim, 0.5);
                    DensitySpec::Gaussian { center, variance, floor }
                }
                d => d,
            };
            c.initial = fix_d(initial);
            c.target = target.map(fix_d);
            c.mobility = Some(match (dim, mobility) {
                (2, MobilitySpec::Exponential { .. }) => MobilitySpec::Constant { a: vec![1.0, 0.0, 0.0, 2.0] },
                (1, MobilitySpec::Separable { scale, rate }) => MobilitySpec::Exponential { scale: scale[0], rate: rate[0] },
                (_, m) => m,
            });
            c.grid = grid;
            c.solver.epsilon = epsilon;
            c.solver.tau = tau;
            c.solver.horizon = horizon;
            c.solver.inner = if exact { InnerSolverSpec::ExactSmall } else { InnerSolverSpec::Entropic };
            c.relaxation.epsilons = epsilons;
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn emit_then_parse_is_identity(c in arb_config()) {
        let text = c.emit();
        let back = ExperimentConfig::parse_str(&text, Path::new("."));
        prop_assert_eq!(back, Ok(c), "{}", text);
    }
}
