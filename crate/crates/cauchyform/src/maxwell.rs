//! Gauge potentials on ℝ × Σ: on-shell residuals, Lorenz gauge fixing and
//! the presymplectic form.
//!
//! A spacetime k-form is A = a + dτ∧b with a a k-form and b a (k−1)-form on
//! Σ, stored as a `SpacetimeForm` of degree k. Time derivatives are one-sided
//! differences, so
//!
//!   dA = (da) ⊕ (D₊a − db),   δA = (δa + D₋b) ⊕ (−δb),
//!
//! and □ = dδ + δd = D₊D₋ + S componentwise. δ is the adjoint of d for the
//! Lorentzian pairing Σ dτ [aᵀMa′ − bᵀMb′]. Green operators use the grid
//! kernel of `DuhamelRule::CentralDifference`, which inverts D₊D₋ + S
//! exactly, so algebraic identities hold on an interior time window.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::boundary::{build_constrained, BCKind, BcTag, TraceOperators};
use crate::dec::Dec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mesh::SimplicialComplex;
use crate::propagator::{
    apply_green, apply_green_load, eigendecompose, smoothstep, DuhamelRule, GreenOperator, ModeCount, Orientation, SpacetimeForm,
    SpectralDecomp, TimeGrid,
};

/// Samples dropped at each end of the grid when evaluating residuals.
pub const WINDOW_MARGIN: usize = 2;

/// Spatial operators and propagators for one (Σ, k, bc).
pub struct MaxwellSetup {
    pub bc: BcTag,
    pub k: usize,
    pub n: usize,
    d: Vec<DMatrix<f64>>,
    mass: Vec<DMatrix<f64>>,
    /// δ_j : j-forms → (j−1)-forms, relative version under the tangential condition
    delta: Vec<DMatrix<f64>>,
    /// boundary simplices per degree (tangential trace)
    boundary: Vec<Vec<usize>>,
    pub traces: TraceOperators,
    pub green_k: Arc<SpectralDecomp>,
    pub green_km1: Arc<SpectralDecomp>,
    /// trace maps of step one of the normal gauge fix, pseudo-inverted per degree
    nd_pinv: Vec<Option<DMatrix<f64>>>,
}

impl MaxwellSetup {
    pub fn new(c: &SimplicialComplex, k: usize, bc: BcTag) -> Result<Self> {
        let n = c.dim();
        if !(1..=n).contains(&k) {
            return Err(Error::DegreeOutOfRange { degree: k, lo: 1, hi: n });
        }
        let tangential = match bc {
            BcTag::MaxwellTangential => true,
            BcTag::MaxwellNormal => false,
            other => return Err(Error::BcMismatch(format!("gauge potentials need maxwell_tangential or maxwell_normal, got {}", other.name()))),
        };
        let wave = BCKind::plain(bc);
        let op_k = build_constrained(c, k, &wave)?;
        let op_km1 = build_constrained(c, k - 1, &wave)?;
        let dec = Dec::new(c, op_k.scheme)?;
        let boundary: Vec<Vec<usize>> = (0..=n).map(|j| c.boundary_indices(j)).collect();
        let mut delta = vec![DMatrix::zeros(0, 0)];
        for j in 1..=n {
            if tangential {
                let ij = c.interior_indices(j);
                let im = c.interior_indices(j - 1);
                let pj = linalg::selection(&ij, c.num_simplices(j)).transpose();
                let pm = linalg::selection(&im, c.num_simplices(j - 1)).transpose();
                let mr = pm.transpose() * &dec.mass[j - 1] * &pm;
                let mut dl = DMatrix::zeros(c.num_simplices(j - 1), c.num_simplices(j));
                if !im.is_empty() {
                    let chol = linalg::cholesky(&mr, "relative mass")?;
                    let rhs = pm.transpose() * dec.d[j - 1].transpose() * &dec.mass[j] * &pj * pj.transpose();
                    dl = &pm * chol.solve(&rhs);
                }
                delta.push(dl);
            } else {
                delta.push(dec.codifferential(j)?);
            }
        }
        let traces = TraceOperators::new(c)?;
        let mut nd_pinv = vec![None; n + 1];
        if !tangential {
            // n∘d on j-forms, j = 0..n−1
            for (j, slot) in nd_pinv.iter_mut().enumerate().take(n) {
                let nd = traces.normal_matrix(j + 1)? * &dec.d[j];
                let svd = nd.svd(true, true);
                let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
                *slot = Some(svd.pseudo_inverse(1e-10 * smax.max(f64::MIN_POSITIVE)).map_err(|e| Error::Factorization(e.into()))?);
            }
        }
        Ok(MaxwellSetup {
            bc,
            k,
            n,
            d: dec.d.clone(),
            mass: dec.mass.clone(),
            delta,
            boundary,
            traces,
            green_k: Arc::new(eigendecompose(&op_k, ModeCount::All)?),
            green_km1: Arc::new(eigendecompose(&op_km1, ModeCount::All)?),
            nd_pinv,
        })
    }

    pub fn tangential(&self) -> bool {
        self.bc == BcTag::MaxwellTangential
    }

    pub fn mass(&self, j: usize) -> &DMatrix<f64> {
        &self.mass[j]
    }

    pub fn green(&self, degree: usize, orientation: Orientation) -> Result<GreenOperator> {
        let d = if degree == self.k {
            self.green_k.clone()
        } else if degree + 1 == self.k {
            self.green_km1.clone()
        } else {
            return Err(Error::Precondition(format!("no propagator prepared for degree {degree}")));
        };
        Ok(GreenOperator::new(d, orientation, DuhamelRule::CentralDifference))
    }

    /// Check the time step against the largest eigenvalue of both blocks.
    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        let lmax = self.green_k.max_eigenvalue().max(self.green_km1.max_eigenvalue());
        if lmax * grid.dt * grid.dt >= 4.0 {
            return Err(Error::Precondition(format!(
                "time step {} too large: λ_max dt² = {:.3} must be below 4",
                grid.dt,
                lmax * grid.dt * grid.dt
            )));
        }
        Ok(())
    }
}

fn d_plus(x: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let mut o = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.ncols().saturating_sub(1) {
        o.set_column(i, &((x.column(i + 1) - x.column(i)) / dt));
    }
    o
}

fn d_minus(x: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let mut o = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 1..x.ncols() {
        o.set_column(i, &((x.column(i) - x.column(i - 1)) / dt));
    }
    o
}

fn comp_or_zero(f: &SpacetimeForm, degree: usize, rows: usize) -> DMatrix<f64> {
    f.comp(degree).map(|c| c.data.clone()).unwrap_or_else(|| DMatrix::zeros(rows, f.grid.samples))
}

fn form_from(setup: &MaxwellSetup, k: usize, grid: TimeGrid, parts: Vec<(usize, DMatrix<f64>)>) -> SpacetimeForm {
    use crate::propagator::ComponentSeries;
    let comps = parts
        .into_iter()
        .filter(|(deg, _)| *deg <= setup.n)
        .map(|(degree, data)| ComponentSeries { degree, data })
        .collect();
    SpacetimeForm { k, grid, comps }
}

fn dim(setup: &MaxwellSetup, j: usize) -> usize {
    setup.mass[j].nrows()
}

/// Spacetime exterior derivative.
pub fn st_d(setup: &MaxwellSetup, f: &SpacetimeForm) -> SpacetimeForm {
    let j = f.k;
    let dt = f.grid.dt;
    let a = comp_or_zero(f, j, dim(setup, j.min(setup.n)));
    let mut parts = Vec::new();
    // dτ part, degree j
    let mut e = d_plus(&a, dt);
    if j >= 1 {
        let b = comp_or_zero(f, j - 1, dim(setup, j - 1));
        e -= &setup.d[j - 1] * b;
    }
    parts.push((j, e));
    if j < setup.n {
        parts.push((j + 1, &setup.d[j] * a));
    }
    form_from(setup, j + 1, f.grid, parts)
}

/// Spacetime codifferential.
pub fn st_delta(setup: &MaxwellSetup, f: &SpacetimeForm) -> Result<SpacetimeForm> {
    let j = f.k;
    if j == 0 {
        return Err(Error::DegreeOutOfRange { degree: 0, lo: 1, hi: setup.n + 1 });
    }
    let dt = f.grid.dt;
    let mut parts = Vec::new();
    if j >= 2 {
        let b = comp_or_zero(f, j - 1, dim(setup, j - 1));
        parts.push((j - 2, -(&setup.delta[j - 1] * b)));
    }
    let b = comp_or_zero(f, j - 1, dim(setup, j - 1));
    let mut s = d_minus(&b, dt);
    if j <= setup.n {
        let a = comp_or_zero(f, j, dim(setup, j));
        s += &setup.delta[j] * a;
    }
    parts.push((j - 1, s));
    Ok(form_from(setup, j - 1, f.grid, parts))
}

pub fn st_box(setup: &MaxwellSetup, f: &SpacetimeForm) -> Result<SpacetimeForm> {
    let a = st_d(setup, &st_delta(setup, f)?);
    let b = st_delta(setup, &st_d(setup, f))?;
    a.add(&b)
}

fn window(grid: &TimeGrid) -> std::ops::Range<usize> {
    WINDOW_MARGIN..grid.samples.saturating_sub(WINDOW_MARGIN)
}

/// Zero the samples outside the interior window.
pub fn restrict_window(f: &SpacetimeForm) -> SpacetimeForm {
    let w = window(&f.grid);
    f.time_weighted_index(|i| if w.contains(&i) { 1.0 } else { 0.0 })
}

impl SpacetimeForm {
    fn time_weighted_index(&self, eta: impl Fn(usize) -> f64) -> Self {
        let mut o = self.clone();
        for c in &mut o.comps {
            for i in 0..self.grid.samples {
                c.data.column_mut(i).scale_mut(eta(i));
            }
        }
        o
    }
}

/// L² norm over the interior window, Σ dτ xᵀMx summed over components.
pub fn window_norm(setup: &MaxwellSetup, f: &SpacetimeForm) -> f64 {
    let mut s = 0.0;
    for c in &f.comps {
        let m = &setup.mass[c.degree];
        for i in window(&f.grid) {
            let col = c.data.column(i);
            s += f.grid.dt * col.dot(&(m * col));
        }
    }
    s.sqrt()
}

/// Lorentzian pairing Σ dτ [aᵀMa′ − bᵀMb′] of two fields of degree k.
pub fn lorentz_pairing(setup: &MaxwellSetup, x: &SpacetimeForm, y: &SpacetimeForm) -> Result<f64> {
    x.check_compatible(y)?;
    let mut s = 0.0;
    for (cx, cy) in x.comps.iter().zip(&y.comps) {
        let sign = if cx.degree == x.k { 1.0 } else { -1.0 };
        let my = &setup.mass[cx.degree] * &cy.data;
        for i in 0..x.grid.samples {
            s += sign * x.grid.dt * cx.data.column(i).dot(&my.column(i));
        }
    }
    Ok(s)
}

/// Pairing of a load-represented form ℓ = Mα with a field.
pub fn load_pairing(load: &SpacetimeForm, y: &SpacetimeForm) -> Result<f64> {
    load.check_compatible(y)?;
    let mut s = 0.0;
    for (cl, cy) in load.comps.iter().zip(&y.comps) {
        let sign = if cl.degree == load.k { 1.0 } else { -1.0 };
        for i in 0..load.grid.samples {
            s += sign * load.grid.dt * cl.data.column(i).dot(&cy.data.column(i));
        }
    }
    Ok(s)
}

#[derive(Clone, Debug)]
pub struct GaugePotential {
    pub bc: BcTag,
    pub field: SpacetimeForm,
}

#[derive(Clone, Debug)]
pub struct GaugeTransformation {
    pub field: SpacetimeForm,
    pub bc_compatible: bool,
}

impl GaugePotential {
    pub fn new(setup: &MaxwellSetup, field: SpacetimeForm) -> Result<Self> {
        if field.k != setup.k {
            return Err(Error::Precondition(format!("potential has degree {}, setup expects {}", field.k, setup.k)));
        }
        let p = GaugePotential { bc: setup.bc, field };
        if setup.tangential() {
            let t = tangential_trace_norm(setup, &p.field);
            let s = p.field.norm().max(1e-300);
            if t > 1e-12 * s {
                return Err(Error::BcMismatch(format!(
                    "potential declared {} has a nonzero tangential trace ({t:e})",
                    setup.bc.name()
                )));
            }
        }
        Ok(p)
    }

    pub fn zeros(setup: &MaxwellSetup, c: &SimplicialComplex, grid: TimeGrid) -> Self {
        GaugePotential { bc: setup.bc, field: SpacetimeForm::zeros(c, setup.k, grid) }
    }
}

impl GaugeTransformation {
    pub fn new(setup: &MaxwellSetup, field: SpacetimeForm) -> Self {
        let ok = !setup.tangential() || tangential_trace_norm(setup, &field) == 0.0;
        GaugeTransformation { field, bc_compatible: ok }
    }
}

/// A + dχ.
pub fn gauge_shift(setup: &MaxwellSetup, a: &GaugePotential, chi: &GaugeTransformation) -> Result<GaugePotential> {
    if setup.tangential() && !chi.bc_compatible {
        return Err(Error::BcMismatch("gauge transformation must have zero tangential trace under maxwell_tangential".into()));
    }
    Ok(GaugePotential { bc: a.bc, field: a.field.add(&st_d(setup, &chi.field))? })
}

/// Max abs coefficient on boundary simplices, over all samples.
fn tangential_trace_norm(setup: &MaxwellSetup, f: &SpacetimeForm) -> f64 {
    let mut m = 0.0f64;
    for c in &f.comps {
        for &i in &setup.boundary[c.degree] {
            m = m.max(c.data.row(i).amax());
        }
    }
    m
}

/// Window L² norm of a trace sequence per component, using the boundary mass.
fn trace_norm(setup: &MaxwellSetup, f: &SpacetimeForm, normal: bool) -> Result<f64> {
    let tr = &setup.traces;
    let mut s = 0.0;
    for c in &f.comps {
        if normal && c.degree == 0 {
            continue;
        }
        for i in window(&f.grid) {
            let col = c.data.column(i).into_owned();
            let v = if normal { tr.normal(c.degree, &col)? } else { tr.tangential(c.degree, &col) };
            let kdeg = if normal { c.degree - 1 } else { c.degree };
            s += f.grid.dt * tr.boundary_inner(kdeg, &v, &v);
        }
    }
    Ok(s.sqrt())
}

/// ‖n X‖_∂ relative to the full boundary trace √(‖tX‖² + ‖nX‖²).
fn relative_normal_trace(setup: &MaxwellSetup, f: &SpacetimeForm) -> Result<f64> {
    let n = trace_norm(setup, f, true)?;
    let t = trace_norm(setup, f, false)?;
    let s = (n * n + t * t).sqrt();
    Ok(if s > 0.0 { n / s } else { 0.0 })
}

#[derive(Clone, Debug, Serialize)]
pub struct OnShellReport {
    /// ‖δdA‖ over the interior window
    pub maxwell: f64,
    /// ‖tA‖_∂ (tangential) or ‖ndA‖_∂ (normal), window L²
    pub boundary: f64,
    pub lorenz: f64,
    pub wave: f64,
    /// ‖δdA‖ divided by the size of its two constituents ‖D₊D₋A‖ + ‖SA‖
    pub maxwell_relative: f64,
    pub norm: f64,
}

pub fn maxwell_residual(setup: &MaxwellSetup, a: &GaugePotential) -> Result<OnShellReport> {
    let grid = a.field.grid;
    if grid.samples < 3 {
        return Err(Error::Precondition("need at least 3 time samples for second differences".into()));
    }
    let f = &a.field;
    let da = st_d(setup, f);
    let ddf = st_delta(setup, &da)?;
    let lor = st_delta(setup, f)?;
    let boxf = st_box(setup, f)?;
    let boundary = if setup.tangential() { trace_norm(setup, f, false)? } else { trace_norm(setup, &da, true)? };
    // constituents of □ = D₊D₋ + S for the relative measure
    let mut time_part = f.scale(0.0);
    for c in &mut time_part.comps {
        let src = f.comp(c.degree).unwrap();
        c.data = d_minus(&d_plus(&src.data, grid.dt), grid.dt);
    }
    let space_part = boxf.sub(&time_part)?;
    let mx = window_norm(setup, &ddf);
    let denom = window_norm(setup, &time_part) + window_norm(setup, &space_part);
    Ok(OnShellReport {
        maxwell: mx,
        boundary,
        lorenz: window_norm(setup, &lor),
        wave: window_norm(setup, &boxf),
        maxwell_relative: if denom > 0.0 { mx / denom } else { 0.0 },
        norm: window_norm(setup, f),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GaugeFixReport {
    pub bc: String,
    pub lorenz_before: f64,
    pub lorenz_after: f64,
    /// ‖δA′‖ / ‖δA‖
    pub lorenz_relative: f64,
    /// tangential: max |tA′|; normal: ‖nA′‖_∂ relative to the full trace
    pub trace_after: f64,
    /// normal only: ‖ndA′‖_∂ relative to the full trace of dA′
    pub nd_trace_after: f64,
    /// normal only: relative ‖nÃ‖ after step one
    pub step_one_trace: f64,
    pub chi_norm: f64,
    pub wave_after: f64,
}

/// Split point for the temporal cut-off: the middle third of the grid.
pub fn default_split(grid: &TimeGrid) -> (f64, f64) {
    let n = grid.samples as f64;
    (grid.tau(0) + grid.dt * n / 3.0, grid.tau(0) + grid.dt * 2.0 * n / 3.0)
}

/// ‖δA‖ at roundoff relative to ‖A‖·√λ_max. The split construction below
/// would still return a residual gauge (□χ = 0) for such input; the
/// canonical choice χ = 0 is taken instead.
fn already_lorenz(setup: &MaxwellSetup, a: &SpacetimeForm) -> Result<bool> {
    let scale = window_norm(setup, a) * setup.green_k.max_eigenvalue().sqrt();
    Ok(window_norm(setup, &st_delta(setup, a)?) <= 1e-12 * scale)
}

impl SpacetimeForm {
    fn into_degree(self, setup: &MaxwellSetup, k: usize) -> SpacetimeForm {
        let parts = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .map(|j| (j, DMatrix::zeros(dim(setup, j), self.grid.samples)))
            .collect();
        form_from(setup, k, self.grid, parts)
    }
}

/// χ = −(G⁺ δA⁺ + G⁻ δA⁻) with A⁺ = ηA vanishing in the past.
fn lorenz_chi(setup: &MaxwellSetup, a: &SpacetimeForm, split: (f64, f64)) -> Result<SpacetimeForm> {
    let plus = a.time_weighted(|t| smoothstep(t, split.0, split.1));
    let minus = a.sub(&plus)?;
    let gp = setup.green(setup.k - 1, Orientation::Retarded)?;
    let gm = setup.green(setup.k - 1, Orientation::Advanced)?;
    let cp = apply_green(&gp, &st_delta(setup, &plus)?)?;
    let cm = apply_green(&gm, &st_delta(setup, &minus)?)?;
    Ok(cp.add(&cm)?.scale(-1.0))
}

pub fn lorenz_fix_tangential(
    setup: &MaxwellSetup,
    a: &GaugePotential,
    split: Option<(f64, f64)>,
) -> Result<(GaugePotential, GaugeTransformation, GaugeFixReport)> {
    if !setup.tangential() || a.bc != BcTag::MaxwellTangential {
        return Err(Error::BcMismatch(format!("lorenz_fix_tangential needs maxwell_tangential, got {}", a.bc.name())));
    }
    setup.check_grid(&a.field.grid)?;
    let t = tangential_trace_norm(setup, &a.field);
    if t > 1e-12 * a.field.norm().max(1e-300) {
        return Err(Error::BcMismatch(format!("input potential violates tA = 0 (max boundary coefficient {t:e})")));
    }
    let split = split.unwrap_or_else(|| default_split(&a.field.grid));
    let chi = if already_lorenz(setup, &a.field)? {
        a.field.sub(&a.field)?.into_degree(setup, setup.k - 1)
    } else {
        lorenz_chi(setup, &a.field, split)?
    };
    let chi = GaugeTransformation::new(setup, chi);
    let fixed = gauge_shift(setup, a, &chi)?;
    let before = window_norm(setup, &st_delta(setup, &a.field)?);
    let after = window_norm(setup, &st_delta(setup, &fixed.field)?);
    let report = GaugeFixReport {
        bc: setup.bc.name().into(),
        lorenz_before: before,
        lorenz_after: after,
        lorenz_relative: if before > 0.0 { after / before } else { after },
        trace_after: tangential_trace_norm(setup, &fixed.field),
        nd_trace_after: 0.0,
        step_one_trace: 0.0,
        chi_norm: window_norm(setup, &chi.field),
        wave_after: window_norm(setup, &st_box(setup, &fixed.field)?),
    };
    Ok((fixed, chi, report))
}

/// Step one of the normal fix: χ₀ with n dχ₀ = −nA, minimum norm per sample.
pub fn normal_trace_correction(setup: &MaxwellSetup, a: &SpacetimeForm) -> Result<SpacetimeForm> {
    let k = setup.k;
    let grid = a.grid;
    let tr = &setup.traces;
    let pinv = |j: usize| setup.nd_pinv[j].as_ref().ok_or_else(|| Error::Precondition("normal trace map not prepared".into()));
    // spatial (k−1) part c solves n d c = −n a
    let ak = comp_or_zero(a, k, dim(setup, k));
    let mut cpart = DMatrix::zeros(dim(setup, k - 1), grid.samples);
    let nk = tr.normal_matrix(k)?;
    let rhs = -(&nk * &ak);
    cpart.copy_from(&(pinv(k - 1)? * rhs));
    let mut parts = vec![(k - 1, cpart.clone())];
    if k >= 2 {
        // dτ part e solves n d e = n D₊c + n b
        let b = comp_or_zero(a, k - 1, dim(setup, k - 1));
        let nkm = tr.normal_matrix(k - 1)?;
        let rhs = &nkm * (d_plus(&cpart, grid.dt) + b);
        parts.insert(0, (k - 2, pinv(k - 2)? * rhs));
    }
    Ok(form_from(setup, k - 1, grid, parts))
}

pub fn lorenz_fix_normal(
    setup: &MaxwellSetup,
    a: &GaugePotential,
    split: Option<(f64, f64)>,
) -> Result<(GaugePotential, GaugeTransformation, GaugeFixReport)> {
    if setup.tangential() || a.bc != BcTag::MaxwellNormal {
        return Err(Error::BcMismatch(format!("lorenz_fix_normal needs maxwell_normal, got {}", a.bc.name())));
    }
    setup.check_grid(&a.field.grid)?;
    let split = split.unwrap_or_else(|| default_split(&a.field.grid));
    let chi0 = normal_trace_correction(setup, &a.field)?;
    let tilde = a.field.add(&st_d(setup, &chi0))?;
    let step_one = relative_normal_trace(setup, &tilde)?;
    let chi1 = if already_lorenz(setup, &tilde)? { chi0.scale(0.0) } else { lorenz_chi(setup, &tilde, split)? };
    let fixed = tilde.add(&st_d(setup, &chi1))?;
    let chi = GaugeTransformation::new(setup, chi0.add(&chi1)?);
    let before = window_norm(setup, &st_delta(setup, &a.field)?);
    let after = window_norm(setup, &st_delta(setup, &fixed)?);
    let report = GaugeFixReport {
        bc: setup.bc.name().into(),
        lorenz_before: before,
        lorenz_after: after,
        lorenz_relative: if before > 0.0 { after / before } else { after },
        trace_after: relative_normal_trace(setup, &fixed)?,
        nd_trace_after: relative_normal_trace(setup, &st_d(setup, &fixed))?,
        step_one_trace: step_one,
        chi_norm: window_norm(setup, &chi.field),
        wave_after: window_norm(setup, &st_box(setup, &fixed)?),
    };
    Ok((GaugePotential { bc: a.bc, field: fixed }, chi, report))
}

/// On-shell tolerance for σ inputs.
pub const ON_SHELL_TOL: f64 = 1e-5;

/// σ(A₁, A₂) = (δd A₁⁺, A₂) with A₁⁺ = η A₁.
pub fn sigma(setup: &MaxwellSetup, a1: &GaugePotential, a2: &GaugePotential, split: Option<(f64, f64)>) -> Result<f64> {
    if a1.bc != setup.bc || a2.bc != setup.bc {
        return Err(Error::BcMismatch("σ needs both potentials under the setup's condition".into()));
    }
    for (name, a) in [("first", a1), ("second", a2)] {
        let r = maxwell_residual(setup, a)?;
        if r.maxwell_relative > ON_SHELL_TOL {
            return Err(Error::Precondition(format!("{name} potential is off-shell (relative residual {:e})", r.maxwell_relative)));
        }
    }
    let split = split.unwrap_or_else(|| default_split(&a1.field.grid));
    let mut f1 = a1.field.clone();
    if !setup.tangential() {
        f1 = f1.add(&st_d(setup, &normal_trace_correction(setup, &f1)?))?;
    }
    let plus = f1.time_weighted(|t| smoothstep(t, split.0, split.1));
    let j = restrict_window(&st_delta(setup, &st_d(setup, &plus))?);
    lorentz_pairing(setup, &j, &a2.field)
}

/// Coclosedness of a load-represented form: d_{k−1}ᵀℓ_sp + D₋ℓ_t and d_{k−2}ᵀℓ_t,
/// restricted to interior rows under the tangential condition. Returns the
/// max abs defect relative to the max abs load.
pub fn load_coclosed_defect(setup: &MaxwellSetup, load: &SpacetimeForm) -> f64 {
    let k = load.k;
    let dt = load.grid.dt;
    let lsp = comp_or_zero(load, k, dim(setup, k));
    let lt = comp_or_zero(load, k - 1, dim(setup, k - 1));
    let mut r1 = setup.d[k - 1].transpose() * &lsp + d_minus(&lt, dt);
    // the first column of D₋ is undefined; loads vanish there by construction
    r1.column_mut(0).fill(0.0);
    let mut defect = 0.0f64;
    let rows_ok = |j: usize, i: usize| !setup.tangential() || !setup.boundary[j].contains(&i);
    for i in 0..r1.nrows() {
        if rows_ok(k - 1, i) {
            defect = defect.max(r1.row(i).amax());
        }
    }
    if k >= 2 {
        let r2 = setup.d[k - 2].transpose() * &lt;
        for i in 0..r2.nrows() {
            if rows_ok(k - 2, i) {
                defect = defect.max(r2.row(i).amax());
            }
        }
    }
    let scale = lsp.amax().max(lt.amax()).max(1e-300);
    defect / scale
}

/// Causal solution G ℓ of a load-represented source.
pub fn solve_load(setup: &MaxwellSetup, load: &SpacetimeForm) -> Result<GaugePotential> {
    setup.check_grid(&load.grid)?;
    let g = setup.green(setup.k, Orientation::Causal)?;
    Ok(GaugePotential { bc: setup.bc, field: apply_green_load(&g, load)? })
}

/// G̃(α, β) = (α, Gβ) for coclosed load-represented forms.
pub fn pairing_gtilde(setup: &MaxwellSetup, alpha: &SpacetimeForm, beta: &SpacetimeForm) -> Result<f64> {
    for (name, f) in [("α", alpha), ("β", beta)] {
        let d = load_coclosed_defect(setup, f);
        if d > 1e-9 {
            return Err(Error::Precondition(format!("{name} is not coclosed (relative defect {d:e})")));
        }
    }
    let gb = solve_load(setup, beta)?;
    load_pairing(alpha, &gb.field)
}

/// Load-represented exact generator δβ for β = λ_sp + dτ∧λ_t given as loads:
/// ℓ_sp = dᵀλ_sp + D₋λ_t, ℓ_t = −dᵀλ_t.
pub fn exact_load(setup: &MaxwellSetup, k: usize, grid: TimeGrid, lambda_sp: &DMatrix<f64>, lambda_t: &DMatrix<f64>) -> SpacetimeForm {
    let mut parts = Vec::new();
    if k >= 1 {
        parts.push((k - 1, -(setup.d[k - 1].transpose() * lambda_t)));
    }
    let mut sp = d_minus(lambda_t, grid.dt);
    if k < setup.n {
        sp += setup.d[k].transpose() * lambda_sp;
    }
    parts.push((k, sp));
    form_from(setup, k, grid, parts)
}

/// Smooth compact bump (1 − s²)³ on (c − w, c + w).
pub fn bump(t: f64, centre: f64, width: f64) -> f64 {
    let s = (t - centre) / width;
    if s.abs() < 1.0 {
        (1.0 - s * s).powi(3)
    } else {
        0.0
    }
}

pub fn bump_derivative(t: f64, centre: f64, width: f64) -> f64 {
    let s = (t - centre) / width;
    if s.abs() < 1.0 {
        -6.0 * s * (1.0 - s * s).powi(2) / width
    } else {
        0.0
    }
}

/// Outer product of a spatial vector with a time profile.
pub fn separable(v: &DVector<f64>, grid: &TimeGrid, profile: impl Fn(f64) -> f64) -> DMatrix<f64> {
    DMatrix::from_fn(v.len(), grid.samples, |i, s| v[i] * profile(grid.tau(s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate, MeshGeneratorSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn annulus() -> SimplicialComplex {
        generate(&MeshGeneratorSpec::Annulus { inner_radius: 1.0, outer_radius: 2.0, resolution: 2 }).unwrap()
    }

    fn grid(setup: &MaxwellSetup) -> TimeGrid {
        let lmax = setup.green_k.max_eigenvalue().max(setup.green_km1.max_eigenvalue());
        let dt = 1.0 / lmax.sqrt();
        TimeGrid::new(0.0, dt, 90).unwrap()
    }

    fn interior_random<R: Rng>(c: &SimplicialComplex, j: usize, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(c.num_simplices(j), |i, _| if c.touches_boundary(j, i) { 0.0 } else { rng.gen_range(-1.0..1.0) })
    }

    fn exact_generator<R: Rng>(s: &MaxwellSetup, c: &SimplicialComplex, g: &TimeGrid, rng: &mut R) -> SpacetimeForm {
        let k = s.k;
        let t0 = g.tau(0) + g.dt * g.samples as f64 * rng.gen_range(0.35..0.5);
        let w = g.dt * g.samples as f64 * 0.12;
        let lsp = if k < c.dim() { separable(&interior_random(c, k + 1, rng), g, |t| bump(t, t0, w)) } else { DMatrix::zeros(0, g.samples) };
        let lt = separable(&interior_random(c, k, rng), g, |t| bump(t, t0 + 0.3 * w, w));
        exact_load(s, k, *g, &lsp, &lt)
    }

    #[test]
    fn spacetime_complex_properties() {
        let c = annulus();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for bc in [BcTag::MaxwellNormal, BcTag::MaxwellTangential] {
            let s = MaxwellSetup::new(&c, 1, bc).unwrap();
            let g = grid(&s);
            let l = exact_generator(&s, &c, &g, &mut rng);
            assert!(load_coclosed_defect(&s, &l) < 1e-12);
            // dd = 0 on a random potential
            let mut a = SpacetimeForm::zeros(&c, 1, g);
            for comp in &mut a.comps {
                let tang = bc == BcTag::MaxwellTangential;
                comp.data = DMatrix::from_fn(comp.data.nrows(), g.samples, |i, _| {
                    if tang && c.is_boundary(comp.degree, i) {
                        0.0
                    } else {
                        rng.gen_range(-1.0..1.0)
                    }
                });
            }
            assert!(st_d(&s, &st_d(&s, &a)).norm() < 1e-10 * a.norm() * 1e3);
            let dd = st_delta(&s, &st_delta(&s, &st_d(&s, &a)).unwrap()).unwrap();
            assert!(restrict_window(&dd).norm() < 1e-8 * st_d(&s, &a).norm() * 1e3);
        }
    }

    #[test]
    fn solutions_are_on_shell_and_lorenz() {
        let c = annulus();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for bc in [BcTag::MaxwellNormal, BcTag::MaxwellTangential] {
            let s = MaxwellSetup::new(&c, 1, bc).unwrap();
            let g = grid(&s);
            let l = exact_generator(&s, &c, &g, &mut rng);
            let a = solve_load(&s, &l).unwrap();
            let r = maxwell_residual(&s, &a).unwrap();
            assert!(r.maxwell_relative < 1e-10, "{r:?}");
            assert!(r.lorenz < 1e-10 * r.norm, "{r:?}");
            // gauge invariance of the Maxwell residual
            let chi = SpacetimeForm {
                k: 0,
                grid: g,
                comps: vec![crate::propagator::ComponentSeries {
                    degree: 0,
                    data: separable(&interior_random(&c, 0, &mut rng), &g, |t| (t * 0.7).sin()),
                }],
            };
            let shifted = gauge_shift(&s, &a, &GaugeTransformation::new(&s, chi)).unwrap();
            let r2 = maxwell_residual(&s, &shifted).unwrap();
            assert!((r2.maxwell - r.maxwell).abs() < 1e-9 * r.norm);
        }
    }

    #[test]
    fn zero_potential_has_zero_residuals() {
        let c = annulus();
        let s = MaxwellSetup::new(&c, 1, BcTag::MaxwellTangential).unwrap();
        let a = GaugePotential::zeros(&s, &c, grid(&s));
        let r = maxwell_residual(&s, &a).unwrap();
        assert_eq!((r.maxwell, r.boundary, r.lorenz, r.wave), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn tangential_fix_restores_lorenz() {
        let c = annulus();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = MaxwellSetup::new(&c, 1, BcTag::MaxwellTangential).unwrap();
        let g = grid(&s);
        let a0 = solve_load(&s, &exact_generator(&s, &c, &g, &mut rng)).unwrap();
        let psi = SpacetimeForm {
            k: 0,
            grid: g,
            comps: vec![crate::propagator::ComponentSeries {
                degree: 0,
                data: separable(&interior_random(&c, 0, &mut rng), &g, |t| (0.9 * t).cos()),
            }],
        };
        let a = gauge_shift(&s, &a0, &GaugeTransformation::new(&s, psi)).unwrap();
        let (fixed, chi, rep) = lorenz_fix_tangential(&s, &a, None).unwrap();
        assert!(chi.bc_compatible);
        assert!(rep.lorenz_relative < 1e-6, "{rep:?}");
        assert_eq!(rep.trace_after, 0.0);
        // already-Lorenz input gives χ ≈ 0
        let (_, chi0, _) = lorenz_fix_tangential(&s, &a0, None).unwrap();
        assert_eq!(window_norm(&s, &chi0.field), 0.0);
        let _ = fixed;
        // a potential with a boundary value is refused
        let mut bad = a0.field.clone();
        let b = c.boundary_indices(1)[0];
        bad.comp_mut(1).unwrap().data[(b, 10)] = 1.0;
        assert!(GaugePotential::new(&s, bad).is_err());
    }

    #[test]
    fn normal_fix_restores_lorenz() {
        let c = annulus();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = MaxwellSetup::new(&c, 1, BcTag::MaxwellNormal).unwrap();
        let g = grid(&s);
        let a0 = solve_load(&s, &exact_generator(&s, &c, &g, &mut rng)).unwrap();
        let psi = SpacetimeForm {
            k: 0,
            grid: g,
            comps: vec![crate::propagator::ComponentSeries {
                degree: 0,
                data: separable(&DVector::from_fn(c.num_vertices(), |_, _| rng.gen_range(-1.0..1.0)), &g, |t| (0.9 * t).cos()),
            }],
        };
        let a = gauge_shift(&s, &a0, &GaugeTransformation::new(&s, psi)).unwrap();
        let (_, _, rep) = lorenz_fix_normal(&s, &a, None).unwrap();
        assert!(rep.lorenz_relative < 1e-6, "{rep:?}");
    }

    #[test]
    fn sigma_identities() {
        let c = annulus();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for bc in [BcTag::MaxwellTangential, BcTag::MaxwellNormal] {
            let s = MaxwellSetup::new(&c, 1, bc).unwrap();
            let g = grid(&s);
            let la = exact_generator(&s, &c, &g, &mut rng);
            let lb = exact_generator(&s, &c, &g, &mut rng);
            let (a, b) = (solve_load(&s, &la).unwrap(), solve_load(&s, &lb).unwrap());
            let sab = sigma(&s, &a, &b, None).unwrap();
            let sba = sigma(&s, &b, &a, None).unwrap();
            let p = pairing_gtilde(&s, &la, &lb).unwrap();
            let scale = sab.abs().max(1e-300);
            assert!((sab + sba).abs() < 1e-7 * scale, "{bc:?} {sab} {sba}");
            assert!((sab - p).abs() < 1e-6 * scale, "{bc:?} σ={sab} G̃={p}");
            assert!(sigma(&s, &a, &a, None).unwrap().abs() < 1e-7 * scale);
            let other = (g.tau(0) + g.dt * 25.0, g.tau(0) + g.dt * 40.0);
            assert!((sigma(&s, &a, &b, Some(other)).unwrap() - sab).abs() < 1e-7 * scale);
        }
    }
}
