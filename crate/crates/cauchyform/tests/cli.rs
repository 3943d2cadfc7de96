use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use cauchyform::algebra::{default_grid, exact_generator};
use cauchyform::boundary::BcTag;
use cauchyform::cli::csvio::{read_form, write_form};
use cauchyform::maxwell::{gauge_shift, separable, solve_load, GaugeTransformation, MaxwellSetup};
use cauchyform::mesh::{generate, MeshGeneratorSpec};
use cauchyform::propagator::{ComponentSeries, SpacetimeForm, TimeGrid};

const ANNULUS_NORMAL: &str = r#"
experiment = "annulus"
seed = 7
k = 1
[mesh]
family = "annulus"
inner_radius = 1.0
outer_radius = 2.0
resolution = 2
[bc]
kind = "maxwell_normal"
"#;

const INTERVAL_DIRICHLET: &str = r#"
experiment = "interval"
seed = 1
k = 0
[mesh]
family = "interval"
length = 3.141592653589793
resolution = 64
[bc]
kind = "dirichlet"
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["cauchyform"];
    v.extend_from_slice(args);
    cauchyform::cli::run(v)
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn check<'a>(r: &'a Value, name: &str) -> &'a Value {
    r["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap_or_else(|| panic!("no check {name}"))
}

#[test]
fn verify_annulus_maxwell_normal_records_radical_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", ANNULUS_NORMAL);
    let out = dir.path().join("out");
    assert_eq!(run(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let r = report(&out.join("annulus/verify.json"));
    assert_eq!(r["schema"], "cauchyform-report-v1");
    assert_eq!(r["status"], "pass");
    assert_eq!(r["data"]["radical"], 1);
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    assert!(r["tolerances"]["green_defect"].as_f64().unwrap() > 0.0);
    for c in r["checks"].as_array().unwrap() {
        assert_ne!(c["status"], "fail", "{c}");
    }
}

#[test]
fn robin_normal_with_positive_f_exits_with_precondition_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = INTERVAL_DIRICHLET.replace("kind = \"dirichlet\"", "kind = \"robin_normal\"\nf = 1.0");
    let cfg = write_config(dir.path(), "r.toml", &text);
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_cauchyform"))
        .args(["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("robin_normal"));
}

#[test]
fn verify_interval_dirichlet_emits_spectrum_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "i.toml", INTERVAL_DIRICHLET);
    let out = dir.path().join("out");
    assert_eq!(run(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let r = report(&out.join("interval/verify.json"));
    let rows = r["data"]["spectrum"].as_array().unwrap();
    let ev = rows[0]["eigenvalues"].as_array().unwrap();
    let h = PI / 64.0;
    for j in 1..=3 {
        let oracle = 4.0 / (h * h) * (j as f64 * h / 2.0).sin().powi(2);
        assert!((ev[j - 1].as_f64().unwrap() - oracle).abs() < 1e-10 * oracle);
    }
    assert_eq!(check(&r, "spectrum_oracle")["status"], "pass");
    assert_eq!(check(&r, "sigma_properties")["status"], "skipped");
}

#[test]
fn missing_config_and_bad_flags() {
    assert_eq!(run(&["verify"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "experiment = \"x\"\nk = 0\n");
    assert_eq!(run(&["mesh", "--config", cfg.to_str().unwrap()]), 2);
}

#[test]
fn reports_are_byte_identical_and_never_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", ANNULUS_NORMAL);
    let out = dir.path().join("out");
    let args = ["radical", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(run(&args), 0);
    assert_eq!(run(&args), 0);
    let a = std::fs::read(out.join("annulus/radical.json")).unwrap();
    let b = std::fs::read(out.join("annulus/radical-2.json")).unwrap();
    assert_eq!(a, b);
    // a different seed changes the hash, hence the report
    let args = ["radical", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "8"];
    assert_eq!(run(&args), 0);
    assert_ne!(a, std::fs::read(out.join("annulus/radical-3.json")).unwrap());
}

#[test]
fn mesh_spectrum_cohomology_and_symplectic_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", ANNULUS_NORMAL);
    let out = dir.path().join("out");
    let base = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    for cmd in ["mesh", "spectrum", "cohomology", "symplectic"] {
        let mut args = vec![cmd];
        args.extend_from_slice(&base);
        assert_eq!(run(&args), 0, "{cmd}");
    }
    let m = report(&out.join("annulus/mesh.json"));
    assert_eq!(m["data"]["euler_characteristic"], 0);
    let saved = std::fs::read_to_string(out.join("annulus/mesh-data.json")).unwrap();
    assert!(cauchyform::mesh::parse(&saved).is_ok());
    let c = report(&out.join("annulus/cohomology.json"));
    assert_eq!(c["data"]["cohomology"]["betti_absolute"], serde_json::json!([1, 1, 0]));
    let spectrum = std::fs::read_to_string(out.join("annulus/spectrum.csv")).unwrap();
    assert!(spectrum.starts_with("degree,index,eigenvalue"));
    // refinement override doubles resolution
    let mut args = vec!["mesh", "--refine", "1"];
    args.extend_from_slice(&base);
    assert_eq!(run(&args), 0);
    let m2 = report(&out.join("annulus/mesh-2.json"));
    assert_eq!(m2["data"]["simplices"]["2"].as_u64().unwrap(), 4 * m["data"]["simplices"]["2"].as_u64().unwrap());
}

fn interval_config(dir: &Path, n: usize) -> PathBuf {
    let text = INTERVAL_DIRICHLET.replace("resolution = 64", &format!("resolution = {n}"));
    write_config(dir, "p.toml", &text)
}

fn write_source(path: &Path, form: &SpacetimeForm, bc: BcTag) {
    let mut f = std::fs::File::create(path).unwrap();
    write_form(form, bc, &mut f).unwrap();
}

#[test]
fn zero_source_propagates_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = interval_config(dir.path(), 16);
    let c = generate(&MeshGeneratorSpec::Interval { length: PI, resolution: 16 }).unwrap();
    let src = dir.path().join("zero.csv");
    write_source(&src, &SpacetimeForm::zeros(&c, 0, TimeGrid::new(0.0, 0.05, 30).unwrap()), BcTag::Dirichlet);
    let out = dir.path().join("out");
    assert_eq!(run(&["propagate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--source", src.to_str().unwrap()]), 0);
    for name in ["retarded", "advanced", "causal"] {
        let f = read_form(&c, std::fs::File::open(out.join(format!("interval/{name}.csv"))).unwrap()).unwrap();
        assert_eq!(f.form.norm(), 0.0);
    }
    let r = report(&out.join("interval/propagate.json"));
    assert_eq!(check(&r, "retarded_residual")["value"], 0.0);
}

/// Antiderivative of (1 − s²)³, clamped to its support.
fn bump_primitive(s: f64) -> f64 {
    let s = s.clamp(-1.0, 1.0);
    s - s.powi(3) + 0.6 * s.powi(5) - s.powi(7) / 7.0
}

/// Dirichlet wave on [0, π] with u(0) = 0, u_τ(0) = bump, by images.
fn image_solution(x: f64, tau: f64, c: f64, w: f64) -> f64 {
    let free = |x: f64| 0.5 * w * (bump_primitive((x + tau - c) / w) - bump_primitive((x - tau - c) / w));
    (-2..=2).map(|m| 2.0 * PI * m as f64).map(|s| free(x + s) - free(-x + s)).sum()
}

#[test]
fn interval_bump_matches_image_sum() {
    let n = 64;
    let dir = tempfile::tempdir().unwrap();
    let cfg = interval_config(dir.path(), n);
    let c = generate(&MeshGeneratorSpec::Interval { length: PI, resolution: n }).unwrap();
    let (centre, w) = (PI / 2.0, 0.5);
    let grid = TimeGrid::new(0.0, 0.005, 260).unwrap();
    // narrow normalized time bump at τ₀ times a spatial bump
    let (t0, eps) = (0.2, 0.05);
    let rho = |t: f64| {
        let s = (t - t0) / eps;
        if s.abs() < 1.0 {
            (1.0 - s * s).powi(3) * 35.0 / (32.0 * eps)
        } else {
            0.0
        }
    };
    let g = nalgebra::DVector::from_fn(c.num_vertices(), |i, _| {
        let s = (c.vertex(i)[0] - centre) / w;
        if s.abs() < 1.0 {
            (1.0 - s * s).powi(3)
        } else {
            0.0
        }
    });
    let mut src = SpacetimeForm::zeros(&c, 0, grid);
    src.comps[0].data = separable(&g, &grid, rho);
    let path = dir.path().join("bump.csv");
    write_source(&path, &src, BcTag::Dirichlet);
    let out = dir.path().join("out");
    assert_eq!(run(&["propagate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--source", path.to_str().unwrap()]), 0);
    let u = read_form(&c, std::fs::File::open(out.join("interval/retarded.csv")).unwrap()).unwrap().form;
    // oracle: the same time quadrature applied to the closed form
    for i in [120usize, 200, 250] {
        let tau = grid.tau(i);
        let exact: Vec<f64> = (0..c.num_vertices())
            .map(|v| (0..i).map(|s| grid.dt * rho(grid.tau(s)) * image_solution(c.vertex(v)[0], tau - grid.tau(s), centre, w)).sum())
            .collect();
        let (mut num, mut den) = (0.0, 0.0);
        for (v, e) in exact.iter().enumerate() {
            num += (u.comps[0].data[(v, i)] - e).powi(2);
            den += e * e;
        }
        assert!((num / den).sqrt() < 0.01, "τ={tau}: {}", (num / den).sqrt());
    }
}

#[test]
fn source_touching_the_initial_sample_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = interval_config(dir.path(), 16);
    let c = generate(&MeshGeneratorSpec::Interval { length: PI, resolution: 16 }).unwrap();
    let mut src = SpacetimeForm::zeros(&c, 0, TimeGrid::new(0.0, 0.05, 30).unwrap());
    src.comps[0].data[(8, 0)] = 1.0;
    let path = dir.path().join("early.csv");
    write_source(&path, &src, BcTag::Dirichlet);
    assert_eq!(run(&["propagate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--source", path.to_str().unwrap()]), 2);
}

fn maxwell_potential(bc: BcTag, shifted: bool) -> SpacetimeForm {
    let c = generate(&MeshGeneratorSpec::Annulus { inner_radius: 1.0, outer_radius: 2.0, resolution: 2 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let s = MaxwellSetup::new(&c, 1, bc).unwrap();
    let grid = default_grid(&s).unwrap();
    let a0 = solve_load(&s, &exact_generator(&s, &c, grid, &mut rng)).unwrap();
    if !shifted {
        return a0.field;
    }
    let v = nalgebra::DVector::from_fn(c.num_vertices(), |i, _| if c.touches_boundary(0, i) { 0.0 } else { rng.gen_range(-1.0..1.0) });
    let psi = SpacetimeForm { k: 0, grid, comps: vec![ComponentSeries { degree: 0, data: separable(&v, &grid, |t| (0.9 * t).cos()) }] };
    gauge_shift(&s, &a0, &GaugeTransformation::new(&s, psi)).unwrap().field
}

#[test]
fn gaugefix_commands() {
    let dir = tempfile::tempdir().unwrap();
    let text = ANNULUS_NORMAL.replace("maxwell_normal", "maxwell_tangential");
    let cfg = write_config(dir.path(), "t.toml", &text);
    let out = dir.path().join("out");
    let base = ["gaugefix", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--potential"];

    // Lorenz input: χ = 0
    let lorenz = dir.path().join("lorenz.csv");
    write_source(&lorenz, &maxwell_potential(BcTag::MaxwellTangential, false), BcTag::MaxwellTangential);
    let mut args = base.to_vec();
    args.push(lorenz.to_str().unwrap());
    assert_eq!(run(&args), 0);
    let r = report(&out.join("annulus/gaugefix.json"));
    assert_eq!(r["data"]["gaugefix"]["chi_norm"], 0.0);

    // gauge-shifted input
    let shifted = dir.path().join("shifted.csv");
    write_source(&shifted, &maxwell_potential(BcTag::MaxwellTangential, true), BcTag::MaxwellTangential);
    let mut args = base.to_vec();
    args.push(shifted.to_str().unwrap());
    assert_eq!(run(&args), 0);
    let r = report(&out.join("annulus/gaugefix-2.json"));
    assert!(check(&r, "lorenz_residual")["value"].as_f64().unwrap() < 1e-6);
    let fixed = out.join("annulus/potential-fixed-2.csv");
    assert!(fixed.exists());

    // file declared under the other condition
    let wrong = dir.path().join("wrong.csv");
    write_source(&wrong, &maxwell_potential(BcTag::MaxwellNormal, false), BcTag::MaxwellNormal);
    let o = Command::new(env!("CARGO_BIN_EXE_cauchyform"))
        .args(["gaugefix", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--potential", wrong.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("maxwell_normal") && err.contains("maxwell_tangential"), "{err}");
}
