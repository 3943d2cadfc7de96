//! Spectral Green operators for □ = ∂²_τ + S_Θ.
//!
//! Each component of a constrained block is diagonalized once; kernels and
//! Duhamel integrals are then mode sums. Two time rules are offered:
//! `Trapezoid` evaluates the closed-form kernel sin(√λ t)/√λ and integrates
//! sources with the trapezoid rule; `CentralDifference` uses the kernel of
//! the three-point scheme, which inverts D₊D₋ + S exactly on the grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::{BCKind, ConstrainedOperator};
use crate::dec::{Dec, MassScheme};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mesh::SimplicialComplex;

/// Relative clip threshold for zero modes.
pub const ZERO_MODE_CLIP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeCount {
    All,
    /// lowest m modes of each component
    First(usize),
}

/// Modes of one component degree.
#[derive(Clone, Debug)]
pub struct ModeBlock {
    pub degree: usize,
    /// clipped eigenvalues, ascending
    pub eigenvalues: DVector<f64>,
    pub raw_eigenvalues: DVector<f64>,
    /// reduced eigenvectors, M_Θ-orthonormal
    pub reduced_modes: DMatrix<f64>,
    /// prolonged modes P E (full cochains)
    pub modes: DMatrix<f64>,
    /// full mass matrix of this degree (turns fields into loads)
    pub full_mass: DMatrix<f64>,
    pub zero_modes: usize,
}

impl ModeBlock {
    pub fn full_dim(&self) -> usize {
        self.modes.nrows()
    }
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }
    /// Modal coefficients of a load vector.
    pub fn project_load(&self, load: &DMatrix<f64>) -> DMatrix<f64> {
        self.modes.transpose() * load
    }
}

#[derive(Clone, Debug)]
pub struct SpectralDecomp {
    pub k: usize,
    pub bc: BCKind,
    pub scheme: MassScheme,
    pub blocks: Vec<ModeBlock>,
    /// largest eigenvalue over all blocks, the operator scale
    pub scale: f64,
    pub clip_threshold: f64,
    pub warnings: Vec<String>,
    pub complete: bool,
}

impl SpectralDecomp {
    pub fn zero_mode_count(&self) -> usize {
        self.blocks.iter().map(|b| b.zero_modes).sum()
    }
    pub fn block(&self, degree: usize) -> Option<&ModeBlock> {
        self.blocks.iter().find(|b| b.degree == degree)
    }
    pub fn max_eigenvalue(&self) -> f64 {
        self.scale
    }
}

pub fn eigendecompose(op: &ConstrainedOperator, count: ModeCount) -> Result<SpectralDecomp> {
    let mut raw = Vec::new();
    for comp in &op.components {
        raw.push(linalg::generalized_eigen(&comp.a, &comp.m)?);
    }
    let scale = raw.iter().flat_map(|(v, _)| v.iter().map(|x| x.abs())).fold(0.0f64, f64::max);
    let thr = ZERO_MODE_CLIP * scale;
    let mut warnings = Vec::new();
    let mut blocks = Vec::new();
    for (comp, (vals, vecs)) in op.components.iter().zip(raw) {
        if let Some(&min) = vals.iter().min_by(|a, b| a.partial_cmp(b).unwrap()) {
            if min < -thr {
                return Err(Error::Precondition(format!(
                    "operator {} degree {} is not positive semi-definite (eigenvalue {min:e})",
                    op.bc.tag.name(),
                    comp.degree
                )));
            }
        }
        for &v in vals.iter() {
            if v.abs() > thr / 10.0 && v.abs() < thr * 10.0 {
                warnings.push(format!("degree {}: eigenvalue {v:e} within a factor 10 of the clip threshold {thr:e}", comp.degree));
            }
        }
        let keep = match count {
            ModeCount::All => vals.len(),
            ModeCount::First(m) => m.min(vals.len()),
        };
        let clipped = DVector::from_iterator(keep, vals.iter().take(keep).map(|&v| if v.abs() <= thr { 0.0 } else { v }));
        let zero_modes = clipped.iter().filter(|&&v| v == 0.0).count();
        let reduced = vecs.columns(0, keep).into_owned();
        let modes = &comp.p * &reduced;
        blocks.push(ModeBlock {
            degree: comp.degree,
            eigenvalues: clipped,
            raw_eigenvalues: vals.rows(0, keep).into_owned(),
            reduced_modes: reduced,
            modes,
            full_mass: comp.full_mass.clone(),
            zero_modes,
        });
    }
    Ok(SpectralDecomp {
        k: op.k,
        bc: op.bc.clone(),
        scheme: op.scheme,
        blocks,
        scale,
        clip_threshold: thr,
        warnings,
        complete: count == ModeCount::All,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompCheck {
    pub max_residual: f64,
    pub max_orthonormality_error: f64,
    pub passed: bool,
}

/// Residual ‖A e − λ M e‖/‖A‖ and orthonormality of the computed modes.
pub fn verify_decomposition(op: &ConstrainedOperator, d: &SpectralDecomp) -> DecompCheck {
    let mut res = 0.0f64;
    let mut orth = 0.0f64;
    for (comp, b) in op.components.iter().zip(&d.blocks) {
        let an = comp.a.norm().max(1e-300);
        for j in 0..b.count() {
            let e = b.reduced_modes.column(j);
            let r = &comp.a * e - &comp.m * e * b.raw_eigenvalues[j];
            res = res.max(r.norm() / an);
        }
        let g = b.reduced_modes.transpose() * &comp.m * &b.reduced_modes;
        orth = orth.max((g - DMatrix::identity(b.count(), b.count())).amax());
    }
    DecompCheck { max_residual: res, max_orthonormality_error: orth, passed: res <= 1e-8 && orth <= 1e-10 }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Retarded,
    Advanced,
    Causal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DuhamelRule {
    /// closed-form kernel, trapezoid quadrature of the source
    #[default]
    Trapezoid,
    /// kernel of the three-point scheme; exact inverse of D₊D₋ + S
    CentralDifference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    /// number of samples (N+1 in τ_0..τ_N)
    pub samples: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, samples: usize) -> Result<Self> {
        if !(dt > 0.0) || samples < 3 {
            return Err(Error::Precondition(format!("time grid needs dt > 0 and at least 3 samples (dt={dt}, samples={samples})")));
        }
        Ok(TimeGrid { t0, dt, samples })
    }
    pub fn tau(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }
    pub fn weights(&self, rule: DuhamelRule) -> Vec<f64> {
        let mut w = vec![self.dt; self.samples];
        if rule == DuhamelRule::Trapezoid {
            w[0] *= 0.5;
            w[self.samples - 1] *= 0.5;
        }
        w
    }
}

/// Time series of one component: column i is the sample at τ_i.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSeries {
    pub degree: usize,
    pub data: DMatrix<f64>,
}

/// Sampled pair (ω₀(τ), ω₁(τ)) of Σ-forms of degrees (k−1, k).
#[derive(Clone, Debug, PartialEq)]
pub struct SpacetimeForm {
    pub k: usize,
    pub grid: TimeGrid,
    pub comps: Vec<ComponentSeries>,
}

impl SpacetimeForm {
    pub fn zeros(c: &SimplicialComplex, k: usize, grid: TimeGrid) -> Self {
        let mut comps = Vec::new();
        if k >= 1 && k - 1 <= c.dim() {
            comps.push(ComponentSeries { degree: k - 1, data: DMatrix::zeros(c.num_simplices(k - 1), grid.samples) });
        }
        if k <= c.dim() {
            comps.push(ComponentSeries { degree: k, data: DMatrix::zeros(c.num_simplices(k), grid.samples) });
        }
        SpacetimeForm { k, grid, comps }
    }
    pub fn comp(&self, degree: usize) -> Option<&ComponentSeries> {
        self.comps.iter().find(|c| c.degree == degree)
    }
    pub fn comp_mut(&mut self, degree: usize) -> Option<&mut ComponentSeries> {
        self.comps.iter_mut().find(|c| c.degree == degree)
    }
    pub fn norm(&self) -> f64 {
        self.comps.iter().map(|c| c.data.norm_squared()).sum::<f64>().sqrt()
    }
    pub fn scale(&self, s: f64) -> Self {
        let mut o = self.clone();
        for c in &mut o.comps {
            c.data *= s;
        }
        o
    }
    pub fn add(&self, other: &SpacetimeForm) -> Result<Self> {
        self.check_compatible(other)?;
        let mut o = self.clone();
        for (a, b) in o.comps.iter_mut().zip(&other.comps) {
            a.data += &b.data;
        }
        Ok(o)
    }
    pub fn sub(&self, other: &SpacetimeForm) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }
    pub fn check_compatible(&self, other: &SpacetimeForm) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Precondition("time grids differ".into()));
        }
        if self.k != other.k || self.comps.len() != other.comps.len() {
            return Err(Error::Precondition("spacetime forms have different degrees".into()));
        }
        for (a, b) in self.comps.iter().zip(&other.comps) {
            if a.degree != b.degree || a.data.shape() != b.data.shape() {
                return Err(Error::Precondition("spacetime form components differ in shape".into()));
            }
        }
        Ok(())
    }
    /// Multiply every sample by a function of τ.
    pub fn time_weighted(&self, eta: impl Fn(f64) -> f64) -> Self {
        let mut o = self.clone();
        for c in &mut o.comps {
            for i in 0..self.grid.samples {
                let e = eta(self.grid.tau(i));
                c.data.column_mut(i).scale_mut(e);
            }
        }
        o
    }
    /// First and last sample index with a nonzero entry.
    pub fn time_support(&self) -> Option<(usize, usize)> {
        let nz: Vec<usize> = (0..self.grid.samples)
            .filter(|&i| self.comps.iter().any(|c| c.data.column(i).iter().any(|&x| x != 0.0)))
            .collect();
        Some((*nz.first()?, *nz.last()?))
    }
}

/// C¹ smoothstep: 0 for τ ≤ τ₀, 1 for τ ≥ τ₁.
pub fn smoothstep(tau: f64, t0: f64, t1: f64) -> f64 {
    if tau <= t0 {
        0.0
    } else if tau >= t1 {
        1.0
    } else {
        let s = (tau - t0) / (t1 - t0);
        s * s * (3.0 - 2.0 * s)
    }
}

/// ω = ω⁺ + ω⁻ with ω⁺ = η ω vanishing before τ₀ and ω⁻ = (1 − η) ω vanishing after τ₁.
pub fn temporal_split(w: &SpacetimeForm, t0: f64, t1: f64) -> (SpacetimeForm, SpacetimeForm) {
    let plus = w.time_weighted(|t| smoothstep(t, t0, t1));
    let minus = w.time_weighted(|t| 1.0 - smoothstep(t, t0, t1));
    (plus, minus)
}

#[derive(Clone, Debug)]
pub struct GreenOperator {
    pub decomp: Arc<SpectralDecomp>,
    pub orientation: Orientation,
    pub rule: DuhamelRule,
}

impl GreenOperator {
    pub fn new(decomp: Arc<SpectralDecomp>, orientation: Orientation, rule: DuhamelRule) -> Self {
        GreenOperator { decomp, orientation, rule }
    }
    pub fn with_orientation(&self, orientation: Orientation) -> Self {
        GreenOperator { decomp: self.decomp.clone(), orientation, rule: self.rule }
    }
}

/// Closed-form scalar kernel sin(√λ t)/√λ, and t for λ = 0.
pub fn mode_kernel(lambda: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        t
    } else {
        let w = lambda.sqrt();
        (w * t).sin() / w
    }
}

/// Grid kernel of the three-point scheme at lag m (scaled so it tends to
/// the closed-form kernel as dt → 0).
pub fn discrete_mode_kernel(lambda: f64, dt: f64, m: i64) -> Result<f64> {
    if lambda == 0.0 {
        return Ok(dt * m as f64);
    }
    let c = 1.0 - 0.5 * lambda * dt * dt;
    if c <= -1.0 {
        return Err(Error::Precondition(format!(
            "time step {dt} too large for eigenvalue {lambda:e}: need λ dt² < 4"
        )));
    }
    let th = c.acos();
    Ok(dt * (m as f64 * th).sin() / th.sin())
}

/// Causal kernel sampled per mode at lags −(N−1)..=(N−1); entry (j, m+N−1).
fn lag_table(b: &ModeBlock, grid: &TimeGrid, rule: DuhamelRule) -> Result<DMatrix<f64>> {
    let n = grid.samples as i64;
    let mut t = DMatrix::zeros(b.count(), (2 * n - 1) as usize);
    for j in 0..b.count() {
        let lam = b.eigenvalues[j];
        for m in -(n - 1)..n {
            let v = match rule {
                DuhamelRule::Trapezoid => mode_kernel(lam, grid.dt * m as f64),
                DuhamelRule::CentralDifference => discrete_mode_kernel(lam, grid.dt, m)?,
            };
            t[(j, (m + n - 1) as usize)] = v;
        }
    }
    Ok(t)
}

/// K(Δτ) = Σ φ_j(Δτ) e_j e_jᵀ M with the retarded/advanced step cut-offs.
pub fn kernel_sample(g: &GreenOperator, dtau: f64) -> DMatrix<f64> {
    let factor = match g.orientation {
        Orientation::Causal => 1.0,
        Orientation::Retarded => (dtau > 0.0) as i32 as f64,
        Orientation::Advanced => -((dtau < 0.0) as i32 as f64),
    };
    let mut out = DMatrix::zeros(0, 0);
    for b in &g.decomp.blocks {
        let phi = DVector::from_iterator(b.count(), b.eigenvalues.iter().map(|&l| factor * mode_kernel(l, dtau)));
        let k = &b.modes * DMatrix::from_diagonal(&phi) * b.modes.transpose() * &b.full_mass;
        out = linalg::block_diag(&out, &k);
    }
    out
}

/// Apply G to a field-valued source (loads are formed with the mass matrix).
pub fn apply_green(g: &GreenOperator, source: &SpacetimeForm) -> Result<SpacetimeForm> {
    let loads = to_loads(&g.decomp, source)?;
    apply_green_load(g, &loads)
}

/// Convert a field to the matching load series (M applied per sample).
pub fn to_loads(d: &SpectralDecomp, f: &SpacetimeForm) -> Result<SpacetimeForm> {
    check_degrees(d, f)?;
    let mut o = f.clone();
    for (c, b) in o.comps.iter_mut().zip(&d.blocks) {
        c.data = &b.full_mass * &c.data;
    }
    Ok(o)
}

fn check_degrees(d: &SpectralDecomp, f: &SpacetimeForm) -> Result<()> {
    if f.k != d.k || f.comps.len() != d.blocks.len() {
        return Err(Error::Precondition(format!("source of degree {} does not match the block k={}", f.k, d.k)));
    }
    for (c, b) in f.comps.iter().zip(&d.blocks) {
        if c.degree != b.degree || c.data.nrows() != b.full_dim() {
            return Err(Error::Precondition("source component does not match the decomposition".into()));
        }
    }
    Ok(())
}

/// Apply G to a load-valued source ℓ = M f.
pub fn apply_green_load(g: &GreenOperator, load: &SpacetimeForm) -> Result<SpacetimeForm> {
    check_degrees(&g.decomp, load)?;
    let grid = load.grid;
    let n = grid.samples;
    if g.rule == DuhamelRule::Trapezoid {
        if let Some((first, last)) = load.time_support() {
            match g.orientation {
                Orientation::Retarded if first == 0 => {
                    return Err(Error::Precondition("retarded propagation needs a source vanishing at the initial sample".into()))
                }
                Orientation::Advanced if last == n - 1 => {
                    return Err(Error::Precondition("advanced propagation needs a source vanishing at the final sample".into()))
                }
                _ => {}
            }
        }
    }
    let w = grid.weights(g.rule);
    let mut out = load.clone();
    for (c, b) in out.comps.iter_mut().zip(&g.decomp.blocks) {
        let coef = b.project_load(&c.data);
        let table = lag_table(b, &grid, g.rule)?;
        let mut u = DMatrix::zeros(b.count(), n);
        for i in 0..n {
            let range: Box<dyn Iterator<Item = usize>> = match g.orientation {
                Orientation::Retarded => Box::new(0..i),
                Orientation::Advanced => Box::new(i + 1..n),
                Orientation::Causal => Box::new(0..n),
            };
            let sign = if g.orientation == Orientation::Advanced { -1.0 } else { 1.0 };
            for s in range {
                let lag = (i as i64 - s as i64 + n as i64 - 1) as usize;
                let ws = w[s] * sign;
                for j in 0..b.count() {
                    u[(j, i)] += ws * table[(j, lag)] * coef[(j, s)];
                }
            }
        }
        c.data = &b.modes * u;
    }
    Ok(out)
}

/// Σ_i w_i Σ_comp a_iᵀ M b_i: the spacetime L² pairing of two fields.
pub fn pair_fields(d: &SpectralDecomp, rule: DuhamelRule, a: &SpacetimeForm, b: &SpacetimeForm) -> Result<f64> {
    a.check_compatible(b)?;
    let w = a.grid.weights(rule);
    let mut s = 0.0;
    for ((ca, cb), blk) in a.comps.iter().zip(&b.comps).zip(&d.blocks) {
        let mb = &blk.full_mass * &cb.data;
        for i in 0..a.grid.samples {
            s += w[i] * ca.data.column(i).dot(&mb.column(i));
        }
    }
    Ok(s)
}

/// Discrete □ = D₊D₋ + S applied at interior samples (endpoints left zero).
pub fn wave_operator(d: &SpectralDecomp, u: &SpacetimeForm, stiffness_full: &[DMatrix<f64>]) -> SpacetimeForm {
    let n = u.grid.samples;
    let dt2 = u.grid.dt * u.grid.dt;
    let mut out = u.scale(0.0);
    for ((co, cu), (blk, a)) in out.comps.iter_mut().zip(&u.comps).zip(d.blocks.iter().zip(stiffness_full)) {
        let chol = linalg::cholesky(&blk.full_mass, "mass").expect("mass is SPD");
        let su = chol.solve(&(a * &cu.data));
        for i in 1..n - 1 {
            let acc = (cu.data.column(i + 1) - cu.data.column(i) * 2.0 + cu.data.column(i - 1)) / dt2 + su.column(i);
            co.data.set_column(i, &acc);
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct AntisymmetryReport {
    pub trials: usize,
    pub max_relative_error: f64,
    pub max_diagonal: f64,
    pub passed: bool,
}

/// Random past/future compact sources of the right shape.
pub fn random_source<R: Rng>(c: &SimplicialComplex, k: usize, grid: TimeGrid, rng: &mut R, interior: bool) -> SpacetimeForm {
    let mut f = SpacetimeForm::zeros(c, k, grid);
    let n = grid.samples;
    let (a, b) = (n / 4, 3 * n / 4);
    let centre = rng.gen_range(a as f64..b as f64);
    let width = (n as f64 / 8.0).max(1.5);
    for comp in &mut f.comps {
        let spatial = DVector::from_fn(comp.data.nrows(), |i, _| {
            if interior && c.touches_boundary(comp.degree, i) {
                0.0
            } else {
                rng.gen_range(-1.0..1.0)
            }
        });
        for i in 1..n - 1 {
            let s = (i as f64 - centre) / width;
            if s.abs() < 1.0 {
                let prof = (1.0 - s * s).powi(3);
                comp.data.set_column(i, &(&spatial * prof));
            }
        }
    }
    f
}

/// (α, G⁺β) against (G⁻α, β) on random source pairs.
pub fn antisymmetry_check<R: Rng>(c: &SimplicialComplex, g: &GreenOperator, grid: TimeGrid, trials: usize, rng: &mut R) -> Result<AntisymmetryReport> {
    let gp = g.with_orientation(Orientation::Retarded);
    let gm = g.with_orientation(Orientation::Advanced);
    let gc = g.with_orientation(Orientation::Causal);
    let (mut worst, mut diag) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let a = random_source(c, g.decomp.k, grid, rng, false);
        let b = random_source(c, g.decomp.k, grid, rng, false);
        let lhs = pair_fields(&g.decomp, g.rule, &a, &apply_green(&gp, &b)?)?;
        let rhs = pair_fields(&g.decomp, g.rule, &apply_green(&gm, &a)?, &b)?;
        let scale = lhs.abs().max(rhs.abs()).max(1e-300);
        worst = worst.max((lhs - rhs).abs() / scale);
        let ga = apply_green(&gc, &a)?;
        let d = pair_fields(&g.decomp, g.rule, &a, &ga)?;
        let norm = pair_fields(&g.decomp, g.rule, &a, &a)?.sqrt() * pair_fields(&g.decomp, g.rule, &ga, &ga)?.sqrt();
        diag = diag.max(d.abs() / norm.max(1e-300));
    }
    Ok(AntisymmetryReport { trials, max_relative_error: worst, max_diagonal: diag, passed: worst <= 1e-8 && diag <= 1e-8 })
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelInitialReport {
    pub k0_max_abs: f64,
    pub slope_error: f64,
    pub step: f64,
    pub passed: bool,
}

/// K(0) = 0 and the centred-difference slope equals the identity in the
/// mass-orthonormal mode basis.
pub fn kernel_initial_check(d: &Arc<SpectralDecomp>, step: f64) -> KernelInitialReport {
    let g = GreenOperator::new(d.clone(), Orientation::Causal, DuhamelRule::Trapezoid);
    let k0 = kernel_sample(&g, 0.0);
    let slope = (kernel_sample(&g, step) - kernel_sample(&g, -step)) / (2.0 * step);
    let mut err = 0.0f64;
    let mut off = 0;
    for b in &d.blocks {
        let dim = b.full_dim();
        let s = slope.view((off, off), (dim, dim));
        let inb = b.modes.transpose() * &b.full_mass * s * &b.modes;
        err = err.max((inb - DMatrix::identity(b.count(), b.count())).amax());
        off += dim;
    }
    let k0max = k0.amax();
    KernelInitialReport { k0_max_abs: k0max, slope_error: err, step, passed: k0max == 0.0 && err <= 1e-6 }
}

#[derive(Clone, Debug, Serialize)]
pub struct CausalityReport {
    pub source_centre: [f64; 3],
    pub source_radius: f64,
    pub h: f64,
    /// (Δτ, leaked fraction) per sample
    pub leakage: Vec<(f64, f64)>,
    pub max_leakage: f64,
}

/// Fraction of solution mass outside the numerical light cone for an
/// impulsive source g released at Δτ = 0 (u(Δτ) = K(Δτ) g).
pub fn causality_check(
    c: &SimplicialComplex,
    g: &GreenOperator,
    degree: usize,
    source: &DVector<f64>,
    centre: [f64; 3],
    radius: f64,
    speed: f64,
    times: &[f64],
) -> Result<CausalityReport> {
    let b = g
        .decomp
        .block(degree)
        .ok_or_else(|| Error::Precondition(format!("no component of degree {degree} in the decomposition")))?;
    let h = c.mesh_size();
    let weights: Vec<f64> = (0..b.full_dim()).map(|i| b.full_mass[(i, i)]).collect();
    let coef = b.modes.transpose() * (&b.full_mass * source);
    let mut leakage = Vec::new();
    for &t in times {
        let phi = DVector::from_iterator(b.count(), b.eigenvalues.iter().map(|&l| mode_kernel(l, t)));
        let u = &b.modes * phi.component_mul(&coef);
        let cone = radius + t.abs() * speed + 3.0 * h;
        let (mut out, mut tot) = (0.0, 0.0);
        for i in 0..u.len() {
            let p = c.barycenter(degree, i);
            let dist = ((p[0] - centre[0]).powi(2) + (p[1] - centre[1]).powi(2) + (p[2] - centre[2]).powi(2)).sqrt();
            let m = weights[i] * u[i] * u[i];
            tot += m;
            if dist > cone {
                out += m;
            }
        }
        leakage.push((t, if tot > 0.0 { out / tot } else { 0.0 }));
    }
    let max = leakage.iter().map(|x| x.1).fold(0.0, f64::max);
    Ok(CausalityReport { source_centre: centre, source_radius: radius, h, leakage, max_leakage: max })
}

#[derive(Clone, Debug, Serialize)]
pub struct CommutationReport {
    pub bc: String,
    pub k: usize,
    /// max relative residual on interior-supported forms
    pub interior_residual: f64,
    /// relative defect on forms with nonzero boundary trace (reported only)
    pub trace_defect: f64,
    pub passed: bool,
}

/// Spatial commutation of kernels with δ (tangential, relative complex) or
/// with d (normal, absolute complex) between degrees k−1, k, k+1.
pub fn commutation_check<R: Rng>(
    c: &SimplicialComplex,
    tangential: bool,
    k: usize,
    times: &[f64],
    rng: &mut R,
) -> Result<CommutationReport> {
    use crate::boundary::{build_constrained, BcTag};
    let n = c.dim();
    if k > n {
        return Err(Error::DegreeOutOfRange { degree: k, lo: 0, hi: n });
    }
    let tag = if tangential { BcTag::BoxTangential } else { BcTag::BoxNormal };
    let bc = BCKind::plain(tag);
    // component degrees j and j+1 with the linking operator
    let (lo, hi) = if tangential {
        if k == 0 {
            return Err(Error::DegreeOutOfRange { degree: k, lo: 1, hi: n });
        }
        (k - 1, k)
    } else {
        if k >= n {
            return Err(Error::DegreeOutOfRange { degree: k, lo: 0, hi: n - 1 });
        }
        (k, k + 1)
    };
    let op_lo = build_constrained(c, lo, &bc)?;
    let op_hi = build_constrained(c, hi, &bc)?;
    let d_lo = eigendecompose(&op_lo, ModeCount::All)?;
    let d_hi = eigendecompose(&op_hi, ModeCount::All)?;
    let blk_lo = d_lo.block(lo).unwrap();
    let blk_hi = d_hi.block(hi).unwrap();
    let dec = Dec::new(c, op_lo.scheme)?;
    // full-space maps: relative δ/d act on interior cochains
    let dmat = dec.d[lo].clone();
    let (p_lo, p_hi) = (op_lo.component(lo).unwrap().p.clone(), op_hi.component(hi).unwrap().p.clone());
    let kern = |b: &ModeBlock, t: f64| -> DMatrix<f64> {
        let phi = DVector::from_iterator(b.count(), b.eigenvalues.iter().map(|&l| mode_kernel(l, t)));
        &b.modes * DMatrix::from_diagonal(&phi) * b.modes.transpose() * &b.full_mass
    };
    let m_lo = &blk_lo.full_mass;
    let m_hi = &blk_hi.full_mass;
    // relative operators written on full cochains via P
    let d_rel = &p_hi * p_hi.transpose() * &dmat * &p_lo * p_lo.transpose();
    let delta_rel = {
        let mr_lo = p_lo.transpose() * m_lo * &p_lo;
        let chol = linalg::cholesky(&mr_lo, "relative mass")?;
        &p_lo * chol.solve(&(p_lo.transpose() * dmat.transpose() * m_hi * &p_hi)) * p_hi.transpose()
    };
    let mut interior = 0.0f64;
    let mut defect = 0.0f64;
    for &t in times {
        let (k_lo, k_hi) = (kern(blk_lo, t), kern(blk_hi, t));
        for _ in 0..4 {
            if tangential {
                let a = DVector::from_fn(c.num_simplices(hi), |i, _| if c.touches_boundary(hi, i) { 0.0 } else { rng.gen_range(-1.0..1.0) });
                let lhs = &delta_rel * (&k_hi * &a);
                let rhs = &k_lo * (&delta_rel * &a);
                interior = interior.max((&lhs - &rhs).norm() / lhs.norm().max(rhs.norm()).max(1e-300));
                // d-version with a nonzero tangential trace
                let b = DVector::from_fn(c.num_simplices(lo), |_, _| rng.gen_range(-1.0..1.0));
                let lhs = &k_hi * (&d_rel * &b);
                let rhs = &d_rel * (&k_lo * (&p_lo * p_lo.transpose() * &b));
                let dd = &k_hi * (&p_hi * p_hi.transpose() * (&dmat * &b));
                defect = defect.max((&dd - &rhs).norm() / dd.norm().max(1e-300));
                let _ = lhs;
            } else {
                let a = DVector::from_fn(c.num_simplices(lo), |i, _| if c.touches_boundary(lo, i) { 0.0 } else { rng.gen_range(-1.0..1.0) });
                let lhs = &dmat * (&k_lo * &a);
                let rhs = &k_hi * (&dmat * &a);
                interior = interior.max((&lhs - &rhs).norm() / lhs.norm().max(rhs.norm()).max(1e-300));
                // δ-version on a form with nonzero normal trace
                let delta_abs = dec.codifferential(hi)?;
                let b = DVector::from_fn(c.num_simplices(hi), |_, _| rng.gen_range(-1.0..1.0));
                let lhs = &delta_abs * (&k_hi * &b);
                let rhs = &k_lo * (&delta_abs * &b);
                defect = defect.max((&lhs - &rhs).norm() / lhs.norm().max(1e-300));
            }
        }
    }
    Ok(CommutationReport { bc: tag.name().into(), k, interior_residual: interior, trace_defect: defect, passed: interior <= 1e-8 })
}
