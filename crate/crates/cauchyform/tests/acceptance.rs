//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failures are reported, not hidden. The process exits 0 so that the
//! workspace test run completes; set CAUCHYFORM_ACCEPTANCE_STRICT=1 to turn
//! any failure into exit status 1.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cauchyform::algebra::{center_detection, default_grid, exact_generator, symplectic_check};
use cauchyform::boundary::{
    build_constrained, green_defect_check, positivity_check, triple_identity_check, BCKind, BcTag,
};
use cauchyform::cohomology::{betti_absolute_all, betti_relative_all, cohomology_report};
use cauchyform::dec::{exterior_derivative, interpolate, Sampler};
use cauchyform::maxwell::{
    gauge_shift, lorenz_fix_normal, lorenz_fix_tangential, separable, solve_load, GaugeTransformation, MaxwellSetup,
};
use cauchyform::mesh::{generate, MeshGeneratorSpec, SimplicialComplex};
use cauchyform::propagator::{
    antisymmetry_check, causality_check, commutation_check, eigendecompose, kernel_initial_check, kernel_sample, ComponentSeries,
    DuhamelRule, GreenOperator, ModeCount, Orientation, SpacetimeForm, TimeGrid,
};
use cauchyform::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn interval(n: usize) -> SimplicialComplex {
    generate(&MeshGeneratorSpec::Interval { length: PI, resolution: n }).unwrap()
}
fn annulus() -> SimplicialComplex {
    generate(&MeshGeneratorSpec::Annulus { inner_radius: 1.0, outer_radius: 2.0, resolution: 2 }).unwrap()
}
fn disk() -> SimplicialComplex {
    generate(&MeshGeneratorSpec::Disk { radius: 1.0, resolution: 3 }).unwrap()
}

fn five_conditions(c: &SimplicialComplex) -> Result<Vec<BCKind>> {
    Ok(vec![
        BCKind::plain(BcTag::Dirichlet),
        BCKind::plain(BcTag::BoxTangential),
        BCKind::plain(BcTag::BoxNormal),
        BCKind::robin_constant(c, BcTag::RobinTangential, 2.0)?,
        BCKind::robin_constant(c, BcTag::RobinNormal, -2.0)?,
    ])
}

fn combinatorics() -> Result<Outcome> {
    let specs = [
        MeshGeneratorSpec::Interval { length: PI, resolution: 8 },
        MeshGeneratorSpec::Rectangle { width: 2.0, height: 1.0, resolution: 2 },
        MeshGeneratorSpec::Disk { radius: 1.0, resolution: 2 },
        MeshGeneratorSpec::Annulus { inner_radius: 1.0, outer_radius: 2.0, resolution: 2 },
        MeshGeneratorSpec::CylinderStrip { radius: 1.0, height: 1.0, resolution: 2 },
    ];
    let (mut worst_int, mut worst_d) = (0i64, 0.0f64);
    let mut meshes = 0;
    for s in &specs {
        let mut c = generate(s)?;
        for level in 0..3 {
            if level > 0 {
                c = c.refine()?;
            }
            worst_int = worst_int.max(c.boundary_squared_max());
            for k in 0..c.dim().saturating_sub(1) {
                let dd = exterior_derivative(&c, k + 1)? * exterior_derivative(&c, k)?;
                worst_d = worst_d.max(dd.amax());
            }
            meshes += 1;
        }
    }
    outcome(worst_int == 0 && worst_d == 0.0, format!("{meshes} meshes, max |∂∂| = {worst_int}, max |dd| = {worst_d}"))
}

fn self_adjointness() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for c in [interval(16), annulus()] {
        for bc in five_conditions(&c)? {
            for k in [0, 1] {
                let op = build_constrained(&c, k, &bc)?;
                worst = worst.max(green_defect_check(&op, 100, &mut rng)?.max_relative);
            }
        }
    }
    outcome(worst <= 1e-10, format!("max relative defect {worst:.2e} (tol 1e-10)"))
}

fn positivity() -> Result<Outcome> {
    let mut worst = f64::INFINITY;
    for c in [interval(16), annulus()] {
        for bc in five_conditions(&c)? {
            for k in 0..=c.dim() + 1 {
                let p = positivity_check(&build_constrained(&c, k, &bc)?)?;
                worst = worst.min(p.relative_min);
            }
        }
    }
    outcome(worst >= -1e-9, format!("min λ/‖A‖ = {worst:.2e} (tol −1e-9)"))
}

fn spectrum_oracle() -> Result<Outcome> {
    let n = 64;
    let h = PI / n as f64;
    let c = interval(n);
    let d = eigendecompose(&build_constrained(&c, 0, &BCKind::plain(BcTag::Dirichlet))?, ModeCount::First(5))?;
    let ev = &d.block(0).unwrap().eigenvalues;
    let (mut toeplitz, mut continuum) = (0.0f64, 0.0f64);
    for j in 1..=5 {
        let jf = j as f64;
        let oracle = 4.0 / (h * h) * (jf * h / 2.0).sin().powi(2);
        toeplitz = toeplitz.max((ev[j - 1] - oracle).abs() / oracle);
        continuum = continuum.max((ev[j - 1] - jf * jf).abs() / (jf * jf));
    }
    outcome(
        toeplitz <= 1e-10 && continuum <= 5e-3,
        format!("vs (4/h²)sin²(jh/2): {toeplitz:.2e} (tol 1e-10); vs j²: {:.4}% (tol 0.5%)", 100.0 * continuum),
    )
}

fn kernel_initial() -> Result<Outcome> {
    let c = interval(16);
    let d = Arc::new(eigendecompose(&build_constrained(&c, 0, &BCKind::plain(BcTag::Dirichlet))?, ModeCount::All)?);
    let r = kernel_initial_check(&d, 1e-4);
    outcome(r.k0_max_abs == 0.0 && r.slope_error <= 1e-6, format!("max |K(0)| = {:e}, slope error {:.2e} (tol 1e-6)", r.k0_max_abs, r.slope_error))
}

fn adjoint_relation() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for (c, k, tag) in [(interval(16), 0, BcTag::Dirichlet), (annulus(), 1, BcTag::BoxNormal)] {
        let d = Arc::new(eigendecompose(&build_constrained(&c, k, &BCKind::plain(tag))?, ModeCount::All)?);
        let grid = TimeGrid::new(0.0, 1.0 / d.max_eigenvalue().sqrt(), 40)?;
        let g = GreenOperator::new(d, Orientation::Causal, DuhamelRule::Trapezoid);
        let r = antisymmetry_check(&c, &g, grid, 50, &mut rng)?;
        worst = worst.max(r.max_relative_error);
    }
    outcome(worst <= 1e-8, format!("max relative error {worst:.2e} over 50 pairs per mesh (tol 1e-8)"))
}

/// Antiderivative of (1 − s²)³.
fn bump_primitive(s: f64) -> f64 {
    let s = s.clamp(-1.0, 1.0);
    s - s.powi(3) + 0.6 * s.powi(5) - s.powi(7) / 7.0
}

/// Free-space solution of u_ττ = u_xx, u(0) = 0, u_τ(0) = g with
/// g(x) = (1 − ((x−c)/w)²)³ on |x − c| < w.
fn free_solution(x: f64, tau: f64, c: f64, w: f64) -> f64 {
    0.5 * w * (bump_primitive((x + tau - c) / w) - bump_primitive((x - tau - c) / w))
}

/// Dirichlet problem on [0, π] by odd reflection and 2π-periodic images.
fn image_solution(x: f64, tau: f64, c: f64, w: f64) -> f64 {
    (-2..=2).map(|m| 2.0 * PI * m as f64).map(|s| free_solution(x + s, tau, c, w) - free_solution(-x + s, tau, c, w)).sum()
}

fn causality() -> Result<Outcome> {
    let (centre, w) = (PI / 2.0, 0.5);
    // first reflection reaches the source region after centre − w
    let times = [0.25, 0.5, 0.75, 1.0];
    let mut l2 = Vec::new();
    let mut leak = Vec::new();
    for n in [64, 128] {
        let c = interval(n);
        let d = Arc::new(eigendecompose(&build_constrained(&c, 0, &BCKind::plain(BcTag::Dirichlet))?, ModeCount::All)?);
        let g = GreenOperator::new(d.clone(), Orientation::Causal, DuhamelRule::Trapezoid);
        let src = interpolate(&c, 0, &Sampler::Scalar(&|p: [f64; 3]| {
            let s = (p[0] - centre) / w;
            if s.abs() < 1.0 {
                (1.0 - s * s).powi(3)
            } else {
                0.0
            }
        }))?
        .values;
        let m = &d.block(0).unwrap().full_mass;
        let mut worst = 0.0f64;
        for &t in &times {
            let u = kernel_sample(&g, t) * &src;
            let exact = DVector::from_fn(u.len(), |i, _| image_solution(c.vertex(i)[0], t, centre, w));
            let e = &u - &exact;
            worst = worst.max((e.dot(&(m * &e)) / exact.dot(&(m * &exact))).sqrt());
        }
        l2.push(worst);
        let rep = causality_check(&c, &g, 0, &src, [centre, 0.0, 0.0], w, 1.0, &times)?;
        leak.push(rep.max_leakage);
    }
    outcome(
        l2[0] <= 0.01 && leak[0] <= 0.02 && leak[1] < leak[0],
        format!(
            "L² error {:.2e} / {:.2e} (tol 1%), leakage {:.2e} → {:.2e} (tol 2%, decreasing)",
            l2[0], l2[1], leak[0], leak[1]
        ),
    )
}

fn commutation() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let c = annulus();
    let times = [0.3, 0.7, 1.5];
    let mut worst = 0.0f64;
    let mut cases = Vec::new();
    for (tangential, k) in [(true, 1), (true, 2), (false, 0), (false, 1)] {
        let r = commutation_check(&c, tangential, k, &times, &mut rng)?;
        worst = worst.max(r.interior_residual);
        cases.push(format!("{}{}:{:.1e}", if tangential { "∥" } else { "⊥" }, k, r.interior_residual));
    }
    outcome(worst <= 1e-8, format!("{} (tol 1e-8)", cases.join(" ")))
}

fn shifted_potential(setup: &MaxwellSetup, c: &SimplicialComplex, grid: TimeGrid, rng: &mut ChaCha8Rng) -> Result<cauchyform::maxwell::GaugePotential> {
    let a0 = solve_load(setup, &exact_generator(setup, c, grid, rng))?;
    let v = DVector::from_fn(c.num_simplices(0), |i, _| {
        if setup.tangential() && c.touches_boundary(0, i) {
            0.0
        } else {
            rng.gen_range(-1.0..1.0)
        }
    });
    let psi = SpacetimeForm { k: 0, grid, comps: vec![ComponentSeries { degree: 0, data: separable(&v, &grid, |t| (0.9 * t).cos()) }] };
    gauge_shift(setup, &a0, &GaugeTransformation::new(setup, psi))
}

fn lorenz_gauge() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = annulus();
    let mut ok = true;
    let mut parts = Vec::new();
    for bc in [BcTag::MaxwellTangential, BcTag::MaxwellNormal] {
        let s = MaxwellSetup::new(&c, 1, bc)?;
        let grid = default_grid(&s)?;
        let a = shifted_potential(&s, &c, grid, &mut rng)?;
        if bc == BcTag::MaxwellTangential {
            let (_, _, r) = lorenz_fix_tangential(&s, &a, None)?;
            ok &= r.lorenz_relative <= 1e-6 && r.trace_after <= 1e-6;
            parts.push(format!("∥: δA′ {:.1e}, tA′ {:.1e}", r.lorenz_relative, r.trace_after));
        } else {
            let (_, _, r) = lorenz_fix_normal(&s, &a, None)?;
            ok &= r.lorenz_relative <= 1e-6 && r.trace_after <= 1e-6 && r.nd_trace_after <= 1e-6;
            parts.push(format!("⊥: δA′ {:.1e}, nA′ {:.1e}, ndA′ {:.1e}", r.lorenz_relative, r.trace_after, r.nd_trace_after));
        }
    }
    outcome(ok, format!("{} (tol 1e-6)", parts.join("; ")))
}

fn presymplectic() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let c = annulus();
    let mut ok = true;
    let mut parts = Vec::new();
    for bc in [BcTag::MaxwellTangential, BcTag::MaxwellNormal] {
        let s = MaxwellSetup::new(&c, 1, bc)?;
        let r = symplectic_check(&s, &c, default_grid(&s)?, 20, &mut rng)?;
        ok &= r.passed;
        parts.push(format!("{}: σ−G̃ {:.1e}, anti {:.1e}, gauge {:.1e}", bc.name(), r.max_pairing_error, r.max_antisymmetry, r.max_gauge_defect));
    }
    outcome(ok, parts.join("; "))
}

fn topology() -> Result<Outcome> {
    let cases: [(&str, SimplicialComplex, Vec<usize>, Vec<usize>); 3] =
        [("disk", disk(), vec![1, 0, 0], vec![0, 0, 1]), ("annulus", annulus(), vec![1, 1, 0], vec![0, 1, 1]), ("interval", interval(8), vec![1, 0], vec![0, 1])];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, c, abs, rel) in cases {
        let (a, r) = (betti_absolute_all(&c)?, betti_relative_all(&c)?);
        let rep = cohomology_report(&c)?;
        let good = a == abs && r == rel && rep.passed;
        ok &= good;
        parts.push(format!("{name} {a:?}/{r:?}{}", if good { "" } else { " ✗" }));
    }
    outcome(ok, parts.join(", "))
}

/// last kept / first dropped singular value, with the dropped value relative to the reference
fn gap_text(s: &[f64], rank: usize, reference: f64) -> String {
    match (rank, s.get(rank)) {
        (_, None) => "nothing dropped".to_string(),
        (0, Some(_)) => "all zero".to_string(),
        (r, Some(&d)) => format!("{:.1e} kept vs {:.1e} dropped", s[r - 1] / reference, d / reference),
    }
}

fn center() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, c, expected) in [("disk", disk(), 0), ("annulus", annulus(), 1)] {
        // rank decisions inside `radical` refuse gaps below 10x
        let r = center_detection(&c, 1, BcTag::MaxwellNormal, None, 12, &mut rng)?;
        let rad = &r.radical;
        ok &= rad.radical_dim == expected;
        let smax = rad.singular_values.first().cloned().unwrap_or(1.0);
        let dets: Vec<String> = rad.detector_singular_values.iter().map(|x| format!("{x:.1e}")).collect();
        parts.push(format!(
            "{name}: radical {} (W σ/σmax: {}; detector σ on ker W: [{}])",
            rad.radical_dim,
            gap_text(&rad.singular_values, rad.rank, smax),
            dets.join(", ")
        ));
    }
    outcome(ok, parts.join("; "))
}

fn boundary_triple() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut interior = 0.0f64;
    for c in [interval(16), annulus()] {
        for k in 0..=c.dim() + 1 {
            let r = triple_identity_check(&c, k, 10, &mut rng)?;
            interior = interior.max(r.max_discrepancy_interior);
        }
    }
    let c = interval(16);
    let mut decay_ok = true;
    let mut smooth = Vec::new();
    for k in 0..=2 {
        let r = triple_identity_check(&c, k, 1, &mut rng)?;
        // a defect already at roundoff on both meshes is exact, not slow
        let exact = r.smooth_discrepancy_coarse <= 1e-12 && r.smooth_discrepancy_fine <= 1e-12;
        decay_ok &= exact || r.decay_ratio >= 1.5;
        smooth.push(format!("k={k}: {:.1e}→{:.1e}", r.smooth_discrepancy_coarse, r.smooth_discrepancy_fine));
    }
    outcome(interior <= 1e-10 && decay_ok, format!("interior {interior:.1e} (tol 1e-10); smooth {}", smooth.join(", ")))
}

fn determinism() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "experiment = \"det\"\nseed = 42\nk = 1\n[mesh]\nfamily = \"annulus\"\ninner_radius = 1.0\nouter_radius = 2.0\nresolution = 2\n[bc]\nkind = \"maxwell_normal\"\n",
    )?;
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let args = ["cauchyform", "verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        let code = cauchyform::cli::run(args);
        outs.push((code, std::fs::read(out.join("det").join("verify.json"))?));
    }
    let same = outs[0].1 == outs[1].1;
    outcome(same && !outs[0].1.is_empty(), format!("exit codes {}/{}, {} bytes, identical: {same}", outs[0].0, outs[1].0, outs[0].1.len()))
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Result<Outcome>)> = vec![
        ("combinatorial exactness", Duration::from_secs(1), combinatorics),
        ("formal self-adjointness", Duration::from_secs(10), self_adjointness),
        ("positivity", Duration::from_secs(30), positivity),
        ("spectrum oracle", Duration::from_secs(5), spectrum_oracle),
        ("kernel initial conditions", Duration::from_secs(5), kernel_initial),
        ("propagator adjoint relation", Duration::from_secs(20), adjoint_relation),
        ("causality", Duration::from_secs(60), causality),
        ("commutation", Duration::from_secs(30), commutation),
        ("Lorenz gauge fixing", Duration::from_secs(60), lorenz_gauge),
        ("presymplectic identities", Duration::from_secs(60), presymplectic),
        ("topology", Duration::from_secs(10), topology),
        ("center detection", Duration::from_secs(120), center),
        ("boundary triple identity", Duration::from_secs(30), boundary_triple),
        ("determinism", Duration::from_secs(120), determinism),
    ];
    let mut failures = 0;
    for (i, (name, budget, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let res = f();
        let elapsed = start.elapsed();
        let (passed, detail) = match res {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = elapsed <= budget;
        let ok = passed && in_time;
        if !ok {
            failures += 1;
        }
        let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), budget.as_secs());
        println!("{:>2} {} {name}: {detail} [{timing}{}]", i + 1, if ok { "PASS" } else { "FAIL" }, if in_time { "" } else { ", over budget" });
    }
    println!("{} of 14 criteria passed", 14 - failures);
    let strict = std::env::var("CAUCHYFORM_ACCEPTANCE_STRICT").map_or(false, |v| v == "1");
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
