//! Command implementations. Each returns a report; files go to the output
//! directory.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::RunConfig;
use super::csvio::{self, TaggedForm};
use super::report::{Check, OutputDir, Report};
use crate::algebra::{center_detection, symplectic_check};
use crate::boundary::{
    build_constrained, green_defect_check, hodge_duality_check, positivity_check, triple_identity_check, BCKind, BcTag, ConstrainedOperator,
};
use crate::cohomology::cohomology_report;
use crate::error::{Error, Result};
use crate::maxwell::{lorenz_fix_normal, lorenz_fix_tangential, st_delta, window_norm, GaugePotential, MaxwellSetup};
use crate::mesh::{simplex_counts, SimplicialComplex};
use crate::propagator::{
    antisymmetry_check, apply_green, commutation_check, eigendecompose, kernel_initial_check, verify_decomposition, DuhamelRule, GreenOperator,
    Orientation, SpacetimeForm, SpectralDecomp, TimeGrid,
};

pub const GREEN_DEFECT_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-9;
pub const TRIPLE_TOL: f64 = 1e-10;
pub const KERNEL_SLOPE_TOL: f64 = 1e-6;
pub const ADJOINT_TOL: f64 = 1e-8;
pub const COMMUTATION_TOL: f64 = 1e-8;
pub const SPECTRUM_ORACLE_TOL: f64 = 1e-10;
pub const LORENZ_TOL: f64 = 1e-6;
pub const PROPAGATION_RESIDUAL_TOL: f64 = 1e-9;
const KERNEL_STEP: f64 = 1e-4;
const DEFAULT_SAMPLES: usize = 90;
const SPECTRUM_ROWS: usize = 10;

/// Everything a command needs, resolved from the config.
pub struct Context {
    pub cfg: RunConfig,
    pub mesh: SimplicialComplex,
    pub bc: BCKind,
    pub hash: String,
    pub out: OutputDir,
}

impl Context {
    pub fn new(cfg: RunConfig, out_base: &Path) -> Result<Self> {
        let mesh = cfg.build_mesh()?;
        let bc = cfg.resolve_bc(&mesh)?;
        let hash = cfg.hash();
        let out = OutputDir::create(out_base, &cfg.experiment)?;
        Ok(Context { cfg, mesh, bc, hash, out })
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed)
    }

    fn report(&self, command: &str) -> Report {
        Report::new(command, &self.cfg.experiment, self.hash.clone(), self.cfg.seed)
    }

    fn is_maxwell(&self) -> bool {
        matches!(self.bc.tag, BcTag::MaxwellNormal | BcTag::MaxwellTangential)
    }

    fn operator(&self) -> Result<ConstrainedOperator> {
        build_constrained(&self.mesh, self.cfg.k, &self.bc)
    }

    fn decomposition(&self, op: &ConstrainedOperator) -> Result<Arc<SpectralDecomp>> {
        Ok(Arc::new(eigendecompose(op, self.cfg.modes.count())?))
    }

    fn maxwell_grid(&self, setup: &MaxwellSetup) -> Result<TimeGrid> {
        let lmax = setup.green_k.max_eigenvalue().max(setup.green_km1.max_eigenvalue());
        self.cfg.grid(lmax, DEFAULT_SAMPLES)
    }

    fn write_json<T: Serialize>(&self, stem: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        self.out.write_new(stem, "json", s.as_bytes())?;
        Ok(())
    }

    fn write_form(&self, stem: &str, form: &SpacetimeForm, bc: BcTag) -> Result<()> {
        let mut buf = Vec::new();
        csvio::write_form(form, bc, &mut buf)?;
        self.out.write_new(stem, "csv", &buf)?;
        Ok(())
    }
}

/// Runs one check; numerical errors become a failed check, everything
/// else is recorded as returned.
fn run_check(report: &mut Report, name: &str, f: impl FnOnce() -> Result<Check>) {
    let c = match f() {
        Ok(c) => c,
        Err(e) => Check::failed(name, e.to_string()),
    };
    report.check(c);
}

#[derive(Serialize)]
struct SpectrumRow {
    degree: usize,
    eigenvalues: Vec<f64>,
    zero_modes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<Vec<f64>>,
}

/// Uniform spacing of a 1-D mesh, if all edges have the same length.
fn uniform_spacing(c: &SimplicialComplex) -> Option<f64> {
    if c.dim() != 1 {
        return None;
    }
    let h0 = c.volume(1, 0);
    (0..c.num_simplices(1)).all(|i| (c.volume(1, i) - h0).abs() <= 1e-12 * h0).then_some(h0)
}

/// Lowest eigenvalues of the lumped Dirichlet Laplacian on n uniform
/// segments of length h: (4/h²) sin²(jπ/2n).
fn toeplitz_oracle(c: &SimplicialComplex, h: f64, count: usize) -> Vec<f64> {
    let n = c.num_simplices(1) as f64;
    (1..=count).map(|j| 4.0 / (h * h) * (j as f64 * std::f64::consts::PI / (2.0 * n)).sin().powi(2)).collect()
}

fn spectrum_rows(ctx: &Context, d: &SpectralDecomp) -> Vec<SpectrumRow> {
    let oracle_on = ctx.bc.tag == BcTag::Dirichlet && ctx.cfg.k == 0;
    d.blocks
        .iter()
        .map(|b| {
            let ev: Vec<f64> = b.eigenvalues.iter().take(SPECTRUM_ROWS).cloned().collect();
            let oracle = uniform_spacing(&ctx.mesh).filter(|_| oracle_on && b.degree == 0).map(|h| toeplitz_oracle(&ctx.mesh, h, ev.len()));
            SpectrumRow { degree: b.degree, eigenvalues: ev, zero_modes: b.zero_modes, oracle }
        })
        .collect()
}

fn spectrum_oracle_check(rows: &[SpectrumRow]) -> Option<Check> {
    let r = rows.iter().find(|r| r.oracle.is_some())?;
    let o = r.oracle.as_ref().unwrap();
    let err = r.eigenvalues.iter().zip(o).take(5).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
    Some(Check::at_most("spectrum_oracle", err, SPECTRUM_ORACLE_TOL))
}

pub fn cmd_mesh(ctx: &Context) -> Result<Report> {
    let c = &ctx.mesh;
    let mut r = ctx.report("mesh");
    r.check(Check::at_most("boundary_squared", c.boundary_squared_max() as f64, 0.0));
    let bd = c.boundary_complex();
    r.data("simplices", &simplex_counts(c))?;
    r.data("boundary_simplices", &(0..bd.dim + 1).map(|k| bd.count(k)).collect::<Vec<_>>())?;
    r.data("euler_characteristic", &c.euler_characteristic())?;
    r.data("mesh_size", &c.mesh_size())?;
    r.data("volume", &c.total_volume())?;
    ctx.write_json("mesh-data", &c.to_file())?;
    Ok(r)
}

pub fn cmd_spectrum(ctx: &Context) -> Result<Report> {
    let op = ctx.operator()?;
    let d = ctx.decomposition(&op)?;
    let mut r = ctx.report("spectrum");
    let chk = verify_decomposition(&op, &d);
    r.check(Check::at_most("eigen_residual", chk.max_residual, 1e-8));
    r.check(Check::at_most("mass_orthonormality", chk.max_orthonormality_error, 1e-10));
    let rows = spectrum_rows(ctx, &d);
    if let Some(c) = spectrum_oracle_check(&rows) {
        r.check(c);
    }
    r.data("spectrum", &rows)?;
    r.data("warnings", &d.warnings)?;
    r.data("complete", &d.complete)?;
    let table: Vec<(usize, usize, f64)> =
        d.blocks.iter().flat_map(|b| b.eigenvalues.iter().enumerate().map(move |(i, &l)| (b.degree, i, l))).collect();
    let mut buf = Vec::new();
    csvio::write_spectrum(&table, &mut buf)?;
    ctx.out.write_new("spectrum", "csv", &buf)?;
    Ok(r)
}

pub fn cmd_cohomology(ctx: &Context) -> Result<Report> {
    let mut r = ctx.report("cohomology");
    let rep = cohomology_report(&ctx.mesh)?;
    r.check(Check::flag(
        "cohomology",
        rep.passed,
        format!("absolute {:?}, relative {:?}, harmonic {:?}/{:?}", rep.betti_absolute, rep.betti_relative, rep.harmonic_normal, rep.harmonic_tangential),
    ));
    r.data("cohomology", &rep)?;
    Ok(r)
}

pub fn cmd_verify(ctx: &Context) -> Result<Report> {
    let c = &ctx.mesh;
    let k = ctx.cfg.k;
    let n = c.dim();
    let pairs = ctx.cfg.pairs;
    let mut rng = ctx.rng();
    let mut r = ctx.report("verify");

    r.check(Check::at_most("boundary_squared", c.boundary_squared_max() as f64, 0.0));
    let op = ctx.operator()?;
    run_check(&mut r, "green_defect", || {
        let g = green_defect_check(&op, 20 * pairs, &mut rng)?;
        Ok(Check::at_most("green_defect", g.max_relative, GREEN_DEFECT_TOL))
    });
    run_check(&mut r, "positivity", || {
        let p = positivity_check(&op)?;
        Ok(Check::at_most("positivity", -p.relative_min, POSITIVITY_TOL))
    });
    let mut triple = None;
    run_check(&mut r, "triple_identity", || {
        let t = triple_identity_check(c, k, 2 * pairs, &mut rng)?;
        let v = t.max_discrepancy_interior.max(t.max_discrepancy_diagonal).max(t.max_relative_discrepancy_random);
        triple = Some(t);
        Ok(Check::at_most("triple_identity", v, TRIPLE_TOL))
    });
    if let Some(t) = &triple {
        r.data("triple_identity", t)?;
    }

    let d = ctx.decomposition(&op)?;
    let rows = spectrum_rows(ctx, &d);
    if let Some(chk) = spectrum_oracle_check(&rows) {
        r.check(chk);
    }
    r.data("spectrum", &rows)?;
    // centred differences err by λ s²/6; keep that well below the tolerance
    let step = KERNEL_STEP.min((0.6 * KERNEL_SLOPE_TOL / d.max_eigenvalue().max(1e-300)).sqrt());
    let ki = kernel_initial_check(&d, step);
    r.data("kernel_step", &step)?;
    let ki_chk = Check::at_most("kernel_initial_conditions", ki.slope_error, KERNEL_SLOPE_TOL);
    r.check(if ki.k0_max_abs == 0.0 { ki_chk } else { Check::failed("kernel_initial_conditions", format!("K(0) max {:e}", ki.k0_max_abs)) });

    let grid = ctx.cfg.grid(d.max_eigenvalue(), 40)?;
    run_check(&mut r, "propagator_adjoint", || {
        let g = GreenOperator::new(d.clone(), Orientation::Causal, DuhamelRule::Trapezoid);
        let a = antisymmetry_check(c, &g, grid, pairs, &mut rng)?;
        Ok(Check::at_most("propagator_adjoint", a.max_relative_error.max(a.max_diagonal), ADJOINT_TOL))
    });

    let commute = match ctx.bc.tag.wave_condition() {
        BcTag::BoxTangential if k >= 1 && k <= n => Some(true),
        BcTag::BoxNormal if k < n => Some(false),
        _ => None,
    };
    match commute {
        Some(tangential) => run_check(&mut r, "commutation", || {
            let rep = commutation_check(c, tangential, k, &[0.3, 0.7, 1.5], &mut rng)?;
            Ok(Check::at_most("commutation", rep.interior_residual, COMMUTATION_TOL))
        }),
        None => r.check(Check::skipped("commutation", "defined for the box and Maxwell conditions within the complex")),
    }

    run_check(&mut r, "cohomology", || {
        let rep = cohomology_report(c)?;
        let note = format!("absolute {:?}, relative {:?}", rep.betti_absolute, rep.betti_relative);
        Ok(Check::flag("cohomology", rep.passed, note))
    });
    run_check(&mut r, "hodge_duality", || {
        let rep = hodge_duality_check(c, k.min(n), 5)?;
        Ok(Check::at_most("hodge_duality", rep.max_relative_gap, rep.tolerance))
    });

    if ctx.is_maxwell() {
        let setup = MaxwellSetup::new(c, k, ctx.bc.tag)?;
        let mgrid = ctx.maxwell_grid(&setup)?;
        run_check(&mut r, "sigma_properties", || {
            let s = symplectic_check(&setup, c, mgrid, pairs, &mut rng)?;
            let v = (s.max_pairing_error / 1e-6).max(s.max_antisymmetry / 1e-7).max(s.max_gauge_defect / 1e-7);
            Ok(Check::at_most("sigma_properties", v, 1.0).with_note(format!(
                "pairing {:e} (tol 1e-6), antisymmetry {:e} (tol 1e-7), gauge {:e} (tol 1e-7)",
                s.max_pairing_error, s.max_antisymmetry, s.max_gauge_defect
            )))
        });
        let mut center = None;
        run_check(&mut r, "radical_vs_betti", || {
            let rep = center_detection(c, k, ctx.bc.tag, Some(mgrid), ctx.cfg.budget, &mut rng)?;
            let chk = Check::flag("radical_vs_betti", rep.matches, format!("radical {} betti {}", rep.radical.radical_dim, rep.betti));
            center = Some(rep);
            Ok(chk)
        });
        if let Some(rep) = &center {
            r.data("radical", &rep.radical.radical_dim)?;
            r.data("center", rep)?;
        }
    } else {
        r.check(Check::skipped("sigma_properties", "needs a Maxwell boundary condition"));
        r.check(Check::skipped("radical_vs_betti", "needs a Maxwell boundary condition"));
    }
    Ok(r)
}

/// max over interior samples of ‖(D₊D₋ + λ)c − f̂‖ in mode coordinates,
/// relative to ‖f̂‖. `with_source` false checks the homogeneous equation.
fn modal_residual(d: &SpectralDecomp, u: &SpacetimeForm, f: &SpacetimeForm, with_source: bool) -> f64 {
    let n = u.grid.samples;
    let dt2 = u.grid.dt * u.grid.dt;
    let (mut res, mut scale) = (0.0f64, 0.0f64);
    for ((cu, cf), b) in u.comps.iter().zip(&f.comps).zip(&d.blocks) {
        let cm = b.modes.transpose() * (&b.full_mass * &cu.data);
        let fm = b.modes.transpose() * (&b.full_mass * &cf.data);
        scale = scale.max(fm.norm());
        for i in 1..n - 1 {
            let mut v: DVector<f64> = (cm.column(i + 1) - cm.column(i) * 2.0 + cm.column(i - 1)) / dt2 + b.eigenvalues.component_mul(&cm.column(i));
            if with_source {
                v -= fm.column(i);
            }
            res = res.max(v.norm());
        }
    }
    if res == 0.0 {
        0.0
    } else {
        res / scale.max(1e-300)
    }
}

fn read_tagged(ctx: &Context, path: &Path) -> Result<TaggedForm> {
    let f = std::fs::File::open(path)?;
    let t = csvio::read_form(&ctx.mesh, f)?;
    if t.form.k != ctx.cfg.k {
        return Err(Error::Precondition(format!("file holds a degree-{} form, config has k = {}", t.form.k, ctx.cfg.k)));
    }
    Ok(t)
}

pub fn cmd_propagate(ctx: &Context, source: &Path) -> Result<Report> {
    let src = read_tagged(ctx, source)?;
    if src.bc != ctx.bc.tag {
        return Err(Error::BcMismatch(format!("source declares {}, config requires {}", src.bc.name(), ctx.bc.tag.name())));
    }
    if let Some((first, last)) = src.form.time_support() {
        if first == 0 || last + 1 == src.form.grid.samples {
            return Err(Error::Precondition(format!(
                "source must vanish at the first and last samples (support {first}..={last}) so that the retarded and advanced solutions exist"
            )));
        }
    }
    let op = ctx.operator()?;
    let d = ctx.decomposition(&op)?;
    let mut r = ctx.report("propagate");
    r.data("grid", &src.form.grid)?;
    for (o, name, with_source) in [
        (Orientation::Retarded, "retarded", true),
        (Orientation::Advanced, "advanced", true),
        (Orientation::Causal, "causal", false),
    ] {
        // the three-point kernel inverts the discrete wave operator exactly
        let g = GreenOperator::new(d.clone(), o, DuhamelRule::CentralDifference);
        let u = apply_green(&g, &src.form)?;
        let res = modal_residual(&d, &u, &src.form, with_source);
        r.check(Check::at_most(&format!("{name}_residual"), res, PROPAGATION_RESIDUAL_TOL));
        r.data(&format!("{name}_norm"), &u.norm())?;
        ctx.write_form(name, &u, ctx.bc.tag)?;
    }
    r.data("warnings", &d.warnings)?;
    Ok(r)
}

pub fn cmd_gaugefix(ctx: &Context, potential: &Path) -> Result<Report> {
    let t = read_tagged(ctx, potential)?;
    if !ctx.is_maxwell() {
        return Err(Error::BcMismatch(format!("gauge fixing needs maxwell_tangential or maxwell_normal, config has {}", ctx.bc.tag.name())));
    }
    if t.bc != ctx.bc.tag {
        return Err(Error::BcMismatch(format!("potential file declares {}, config requires {}", t.bc.name(), ctx.bc.tag.name())));
    }
    let setup = MaxwellSetup::new(&ctx.mesh, ctx.cfg.k, ctx.bc.tag)?;
    let a = GaugePotential::new(&setup, t.form)?;
    let (fixed, chi, rep) = if setup.tangential() { lorenz_fix_tangential(&setup, &a, None)? } else { lorenz_fix_normal(&setup, &a, None)? };
    let mut r = ctx.report("gaugefix");
    let scale = window_norm(&setup, &a.field) * setup.green_k.max_eigenvalue().sqrt();
    let before = window_norm(&setup, &st_delta(&setup, &a.field)?);
    let lorenz = if before <= 1e-12 * scale { rep.lorenz_after / scale.max(1e-300) } else { rep.lorenz_relative };
    r.check(Check::at_most("lorenz_residual", lorenz, LORENZ_TOL));
    if setup.tangential() {
        r.check(Check::at_most("tangential_trace", rep.trace_after, LORENZ_TOL));
    } else {
        r.check(Check::at_most("normal_trace", rep.trace_after, LORENZ_TOL));
        r.check(Check::at_most("normal_trace_of_d", rep.nd_trace_after, LORENZ_TOL));
    }
    r.data("gaugefix", &rep)?;
    ctx.write_form("potential-fixed", &fixed.field, ctx.bc.tag)?;
    ctx.write_form("gauge-chi", &chi.field, ctx.bc.tag)?;
    Ok(r)
}

pub fn cmd_symplectic(ctx: &Context) -> Result<Report> {
    if !ctx.is_maxwell() {
        return Err(Error::BcMismatch(format!("σ needs maxwell_tangential or maxwell_normal, config has {}", ctx.bc.tag.name())));
    }
    let setup = MaxwellSetup::new(&ctx.mesh, ctx.cfg.k, ctx.bc.tag)?;
    let grid = ctx.maxwell_grid(&setup)?;
    let mut rng = ctx.rng();
    let s = symplectic_check(&setup, &ctx.mesh, grid, ctx.cfg.pairs, &mut rng)?;
    let mut r = ctx.report("symplectic");
    r.check(Check::at_most("sigma_vs_pairing", s.max_pairing_error, 1e-6));
    r.check(Check::at_most("sigma_antisymmetry", s.max_antisymmetry, 1e-7));
    r.check(Check::at_most("sigma_gauge_invariance", s.max_gauge_defect, 1e-7));
    r.data("symplectic", &s)?;
    Ok(r)
}

pub fn cmd_radical(ctx: &Context) -> Result<Report> {
    if !ctx.is_maxwell() {
        return Err(Error::BcMismatch(format!("the radical is defined for maxwell_tangential or maxwell_normal, config has {}", ctx.bc.tag.name())));
    }
    let setup = MaxwellSetup::new(&ctx.mesh, ctx.cfg.k, ctx.bc.tag)?;
    let grid = ctx.maxwell_grid(&setup)?;
    drop(setup);
    let mut rng = ctx.rng();
    let rep = center_detection(&ctx.mesh, ctx.cfg.k, ctx.bc.tag, Some(grid), ctx.cfg.budget, &mut rng)?;
    let mut r = ctx.report("radical");
    r.check(Check::flag("radical_vs_betti", rep.matches, format!("radical {} betti {}", rep.radical.radical_dim, rep.betti)));
    r.data("radical", &rep.radical.radical_dim)?;
    r.data("center", &rep)?;
    Ok(r)
}
