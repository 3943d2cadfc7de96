//! Finite-rank observable algebra: generators, the pairing matrix W and the
//! detection of central elements.
//!
//! Generators are load-represented coclosed forms (see `maxwell`). Three
//! kinds are built:
//! - exact: δβ for random interior β with compact time profile;
//! - central: ġ(τ)·M h for a harmonic field h, one per cohomology class.
//!   These are spatially global rather than interior supported.
//! - quotient-null: δdη for interior η (only used by tests and checks).
//!
//! Per class a detector ρ(τ)·M h with ∫ρ ≠ 0 is added. Detectors are not
//! generators; their solutions carry the cohomology pairing. The radical is
//! the part of ker W that still pairs with the detectors. Kernel directions
//! that do not are zero in the quotient, not central.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::boundary::BcTag;
use crate::error::{Error, Result};
use crate::linalg;
use crate::maxwell::{
    bump, bump_derivative, exact_load, load_coclosed_defect, load_pairing, separable, solve_load, st_d, window_norm, GaugePotential,
    MaxwellSetup,
};
use crate::mesh::SimplicialComplex;
use crate::propagator::{ComponentSeries, SpacetimeForm, TimeGrid};

/// Relative singular-value threshold for ranks.
pub const RANK_TOL: f64 = 1e-8;
/// Required ratio between the last kept and first dropped singular value.
pub const RANK_GAP: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Exact,
    Central,
    QuotientNull,
}

#[derive(Clone, Debug)]
pub struct ObservableGenerator {
    pub label: String,
    pub kind: GeneratorKind,
    pub load: SpacetimeForm,
}

/// Harmonic fields of degree k under the setup's condition (zero modes of the block).
pub fn harmonic_fields(setup: &MaxwellSetup) -> DMatrix<f64> {
    let b = setup.green_k.block(setup.k).expect("block carries degree k");
    b.modes.columns(0, b.zero_modes).into_owned()
}

fn interior_random<R: Rng>(c: &SimplicialComplex, j: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(c.num_simplices(j), |i, _| if c.touches_boundary(j, i) { 0.0 } else { rng.gen_range(-1.0..1.0) })
}

fn span(grid: &TimeGrid) -> f64 {
    grid.dt * (grid.samples - 1) as f64
}

/// Spatial-only load ℓ_sp = f(τ) v, ℓ_t = 0.
fn spatial_load(setup: &MaxwellSetup, grid: TimeGrid, v: &DVector<f64>, profile: impl Fn(f64) -> f64) -> SpacetimeForm {
    let k = setup.k;
    let mut comps = vec![ComponentSeries { degree: k - 1, data: DMatrix::zeros(setup.mass(k - 1).nrows(), grid.samples) }];
    comps.push(ComponentSeries { degree: k, data: separable(v, &grid, profile) });
    SpacetimeForm { k, grid, comps }
}

/// Random exact generator δβ with a bump profile inside the middle of the grid.
pub fn exact_generator<R: Rng>(setup: &MaxwellSetup, c: &SimplicialComplex, grid: TimeGrid, rng: &mut R) -> SpacetimeForm {
    let k = setup.k;
    let t = grid.tau(0) + span(&grid) * rng.gen_range(0.4..0.6);
    let w = span(&grid) * 0.12;
    let lsp = if k < c.dim() {
        separable(&interior_random(c, k + 1, rng), &grid, |s| bump(s, t, w))
    } else {
        DMatrix::zeros(0, grid.samples)
    };
    let lt = separable(&interior_random(c, k, rng), &grid, |s| bump(s, t + 0.3 * w, w));
    exact_load(setup, k, grid, &lsp, &lt)
}

/// δdη for a random interior η: zero in the quotient.
pub fn quotient_null_generator<R: Rng>(setup: &MaxwellSetup, c: &SimplicialComplex, grid: TimeGrid, rng: &mut R) -> SpacetimeForm {
    let k = setup.k;
    let t = grid.tau(0) + span(&grid) * 0.5;
    let w = span(&grid) * 0.15;
    let eta = SpacetimeForm {
        k,
        grid,
        comps: vec![
            ComponentSeries { degree: k - 1, data: separable(&interior_random(c, k - 1, rng), &grid, |s| bump(s, t, w)) },
            ComponentSeries { degree: k, data: separable(&interior_random(c, k, rng), &grid, |s| bump(s, t - 0.2 * w, w)) },
        ],
    };
    let x = st_d(setup, &eta);
    let lt = setup.mass(k) * &x.comp(k).unwrap().data;
    let lsp = match x.comp(k + 1) {
        Some(c1) => setup.mass(k + 1) * &c1.data,
        None => DMatrix::zeros(0, grid.samples),
    };
    exact_load(setup, k, grid, &lsp, &lt)
}

/// Detector loads ρ(τ)·M h, one per harmonic class.
pub fn detectors(setup: &MaxwellSetup, grid: TimeGrid) -> Vec<SpacetimeForm> {
    let h = harmonic_fields(setup);
    let t = grid.tau(0) + span(&grid) * 0.5;
    let w = span(&grid) * 0.15;
    (0..h.ncols())
        .map(|r| spatial_load(setup, grid, &(setup.mass(setup.k) * h.column(r)), |s| bump(s, t, w)))
        .collect()
}

pub fn build_generators<R: Rng>(
    setup: &MaxwellSetup,
    c: &SimplicialComplex,
    grid: TimeGrid,
    budget: usize,
    rng: &mut R,
) -> Result<Vec<ObservableGenerator>> {
    let h = harmonic_fields(setup);
    let classes = h.ncols();
    let required = classes + 2;
    if budget < required {
        return Err(Error::BudgetTooSmall { budget, required });
    }
    // an even number of exact generators: their block of W is generically
    // of full rank, so its kernel holds no accidental directions
    let exact = (budget - classes) / 2 * 2;
    let mut out = Vec::new();
    for i in 0..exact {
        out.push(ObservableGenerator { label: format!("exact-{i}"), kind: GeneratorKind::Exact, load: exact_generator(setup, c, grid, rng) });
    }
    let t = grid.tau(0) + span(&grid) * 0.5;
    let w = span(&grid) * 0.2;
    for r in 0..classes {
        let v = setup.mass(setup.k) * h.column(r);
        out.push(ObservableGenerator {
            label: format!("central-{r}"),
            kind: GeneratorKind::Central,
            load: spatial_load(setup, grid, &v, |s| bump_derivative(s, t, w)),
        });
    }
    for g in &out {
        let d = load_coclosed_defect(setup, &g.load);
        if d > 1e-10 {
            return Err(Error::InvariantViolation { msg: format!("generator {} is not coclosed ({d:e})", g.label), simplex: None });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PairingMatrix {
    pub bc: String,
    pub labels: Vec<String>,
    #[serde(serialize_with = "ser_matrix")]
    pub w: DMatrix<f64>,
    /// pairings of each generator with each detector solution
    #[serde(serialize_with = "ser_matrix")]
    pub h: DMatrix<f64>,
    pub asymmetry: f64,
}

pub(crate) fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().cloned().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// Solutions G ℓ for a list of loads.
pub fn solutions(setup: &MaxwellSetup, loads: &[&SpacetimeForm]) -> Result<Vec<GaugePotential>> {
    loads.iter().map(|l| solve_load(setup, l)).collect()
}

pub fn pairing_matrix(setup: &MaxwellSetup, gens: &[ObservableGenerator], dets: &[SpacetimeForm]) -> Result<PairingMatrix> {
    let sols = solutions(setup, &gens.iter().map(|g| &g.load).collect::<Vec<_>>())?;
    let dsols = solutions(setup, &dets.iter().collect::<Vec<_>>())?;
    let n = gens.len();
    let mut w = DMatrix::zeros(n, n);
    let mut h = DMatrix::zeros(n, dets.len());
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] = load_pairing(&gens[i].load, &sols[j].field)?;
        }
        for r in 0..dets.len() {
            h[(i, r)] = load_pairing(&gens[i].load, &dsols[r].field)?;
        }
    }
    let scale = w.norm();
    let asym = if scale > 0.0 { (&w + w.transpose()).norm() / scale } else { 0.0 };
    Ok(PairingMatrix { bc: setup.bc.name().into(), labels: gens.iter().map(|g| g.label.clone()).collect(), w, h, asymmetry: asym })
}

#[derive(Clone, Debug, Serialize)]
pub struct RadicalReport {
    pub size: usize,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// last kept / first dropped singular value of W (None if nothing dropped)
    pub gap: Option<f64>,
    pub kernel_dim: usize,
    pub radical_dim: usize,
    pub quotient_null_dim: usize,
    /// singular values of the detector pairings restricted to ker W
    pub detector_singular_values: Vec<f64>,
    pub detector_gap: Option<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub radical_basis: DMatrix<f64>,
}

/// Numerical rank with the gap requirement. Values ≤ tol·σ_max are zero.
fn gapped_rank(s: &[f64], reference: f64) -> Result<(usize, Option<f64>)> {
    let thr = RANK_TOL * reference;
    let rank = s.iter().filter(|&&x| x > thr).count();
    let gap = if rank < s.len() && rank > 0 {
        let dropped = s[rank];
        Some(if dropped > 0.0 { s[rank - 1] / dropped } else { f64::INFINITY })
    } else {
        None
    };
    if let Some(g) = gap {
        if g < RANK_GAP {
            return Err(Error::RankIndecision { gap: g, required: RANK_GAP });
        }
    }
    // a value just above the threshold is as ambiguous as one just below
    if rank > 0 && s[rank - 1] < RANK_GAP * thr {
        return Err(Error::RankIndecision { gap: s[rank - 1] / thr, required: RANK_GAP });
    }
    Ok((rank, gap.filter(|g| g.is_finite())))
}

pub fn radical(p: &PairingMatrix) -> Result<RadicalReport> {
    let n = p.w.nrows();
    let s = linalg::singular_values(&p.w);
    let smax = s.first().cloned().unwrap_or(0.0);
    let (rank, gap) = if smax == 0.0 { (0, None) } else { gapped_rank(&s, smax)? };
    // kernel of W from the full SVD
    let kernel = if rank == 0 {
        DMatrix::identity(n, n)
    } else {
        let svd = p.w.clone().svd(false, true);
        let vt = svd.v_t.unwrap();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
        let cols: Vec<usize> = order[rank..].to_vec();
        DMatrix::from_fn(n, cols.len(), |i, j| vt[(cols[j], i)])
    };
    let kdim = kernel.ncols();
    let hk = kernel.transpose() * &p.h;
    // scale for the detector ranks: the full detector pairing
    let href = linalg::singular_values(&p.h).first().cloned().unwrap_or(0.0);
    let hs = linalg::singular_values(&hk);
    let (rdim, hgap) = if href == 0.0 || hs.is_empty() { (0, None) } else { gapped_rank(&hs, href)? };
    let basis = if rdim == 0 {
        DMatrix::zeros(n, 0)
    } else {
        let svd = hk.clone().svd(true, false);
        let u = svd.u.unwrap();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
        let sel = DMatrix::from_fn(u.nrows(), rdim, |i, j| u[(i, order[j])]);
        &kernel * sel
    };
    Ok(RadicalReport {
        size: n,
        singular_values: s,
        rank,
        gap,
        kernel_dim: kdim,
        radical_dim: rdim,
        quotient_null_dim: kdim - rdim,
        detector_singular_values: hs,
        detector_gap: hgap,
        radical_basis: basis,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimalityReport {
    /// solutions that pair to zero with every generator
    pub null_solutions: Vec<usize>,
    /// null solutions that are not gauge-trivial (violations)
    pub separating_violations: Vec<usize>,
    /// generators that pair to zero with every spanning solution
    pub flagged_generators: Vec<String>,
    /// flagged generators not known to be zero in the quotient, and known
    /// quotient-null generators that were not flagged
    pub redundancy_violations: Vec<String>,
    pub spanning_rank: usize,
    pub expected_rank: usize,
    pub spanning_ok: bool,
    pub passed: bool,
}

/// Separating and non-redundancy tests over a finite family of solutions.
/// `solutions` must be on-shell; the spanning family for non-redundancy is
/// the images of the non-null generators plus the detector solutions.
pub fn optimality_check(
    setup: &MaxwellSetup,
    gens: &[ObservableGenerator],
    dets: &[SpacetimeForm],
    solutions_in: &[GaugePotential],
) -> Result<OptimalityReport> {
    let lmax = setup.green_k.max_eigenvalue();
    // separating
    let mut null_solutions = Vec::new();
    let mut sep_viol = Vec::new();
    for (si, a) in solutions_in.iter().enumerate() {
        let p: Vec<f64> = gens.iter().map(|g| load_pairing(&g.load, &a.field)).collect::<Result<_>>()?;
        let scale = gens.iter().map(|g| g.load.norm()).fold(0.0, f64::max) * a.field.norm();
        if p.iter().all(|x| x.abs() <= 1e-8 * scale.max(1e-300)) {
            null_solutions.push(si);
            let fa = window_norm(setup, &st_d(setup, &a.field));
            let anorm = window_norm(setup, &a.field) * lmax.sqrt();
            let hp: Vec<f64> = dets.iter().map(|d| load_pairing(d, &a.field)).collect::<Result<_>>()?;
            let hscale = dets.iter().map(|d| d.norm()).fold(0.0, f64::max) * a.field.norm();
            let trivial = fa <= 1e-8 * anorm.max(1e-300) && hp.iter().all(|x| x.abs() <= 1e-8 * hscale.max(1e-300));
            if !trivial {
                sep_viol.push(si);
            }
        }
    }
    // non-redundancy
    let mut family: Vec<&SpacetimeForm> = gens.iter().filter(|g| g.kind != GeneratorKind::QuotientNull).map(|g| &g.load).collect();
    family.extend(dets.iter());
    let fam = solutions(setup, &family)?;
    let mut m = DMatrix::zeros(gens.len(), fam.len());
    for (i, g) in gens.iter().enumerate() {
        for (j, s) in fam.iter().enumerate() {
            m[(i, j)] = load_pairing(&g.load, &s.field)?;
        }
    }
    let mscale = m.amax();
    let mut flagged = Vec::new();
    let mut red_viol = Vec::new();
    for (i, g) in gens.iter().enumerate() {
        let null = m.row(i).amax() <= 1e-8 * mscale.max(1e-300);
        if null {
            flagged.push(g.label.clone());
        }
        if null != (g.kind == GeneratorKind::QuotientNull) {
            red_viol.push(g.label.clone());
        }
    }
    let expected = gens.iter().filter(|g| g.kind != GeneratorKind::QuotientNull).count();
    let spanning_rank = linalg::numerical_rank(&m, RANK_TOL);
    let spanning_ok = spanning_rank >= expected;
    Ok(OptimalityReport {
        passed: sep_viol.is_empty() && red_viol.is_empty() && spanning_ok,
        null_solutions,
        separating_violations: sep_viol,
        flagged_generators: flagged,
        redundancy_violations: red_viol,
        spanning_rank,
        expected_rank: expected,
        spanning_ok,
    })
}

/// Element of the tensor algebra truncated at degree two, with complex
/// coefficients stored as (re, im). Words are generator index sequences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Truncated {
    pub terms: std::collections::BTreeMap<Vec<usize>, (f64, f64)>,
}

impl Truncated {
    pub fn word(w: &[usize]) -> Self {
        let mut t = Truncated::default();
        t.add(w.to_vec(), (1.0, 0.0));
        t
    }
    fn add(&mut self, w: Vec<usize>, c: (f64, f64)) {
        let e = self.terms.entry(w).or_insert((0.0, 0.0));
        e.0 += c.0;
        e.1 += c.1;
    }
    pub fn sub(&self, o: &Truncated) -> Truncated {
        let mut r = self.clone();
        for (w, c) in &o.terms {
            r.add(w.clone(), (-c.0, -c.1));
        }
        r.terms.retain(|_, c| c.0 != 0.0 || c.1 != 0.0);
        r
    }
    /// Reduce modulo a⊗b − b⊗a − iW_ab·1 to ordered words.
    pub fn normal_order(&self, w: &DMatrix<f64>) -> Truncated {
        let mut r = Truncated::default();
        for (word, c) in &self.terms {
            if word.len() == 2 && word[0] > word[1] {
                r.add(vec![word[1], word[0]], *c);
                // i·W_ab times (re, im)
                let wab = w[(word[0], word[1])];
                r.add(vec![], (-c.1 * wab, c.0 * wab));
            } else {
                r.add(word.clone(), *c);
            }
        }
        r.terms.retain(|_, c| c.0 != 0.0 || c.1 != 0.0);
        r
    }
}

/// Largest deviation of the reduced commutators [a, b] from iW_ab·1.
pub fn ccr_smoke_test(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let mut worst = 0.0f64;
    for a in 0..n {
        for b in 0..n {
            let comm = Truncated::word(&[a, b]).sub(&Truncated::word(&[b, a])).normal_order(w);
            let expect = w[(a, b)];
            let mut dev = 0.0f64;
            for (word, c) in &comm.terms {
                if word.is_empty() {
                    dev = dev.max(c.0.abs()).max((c.1 - expect).abs());
                } else {
                    dev = dev.max(c.0.abs()).max(c.1.abs());
                }
            }
            if !comm.terms.contains_key(&Vec::new()) {
                dev = dev.max(expect.abs());
            }
            worst = worst.max(dev);
        }
    }
    worst
}

#[derive(Clone, Debug, Serialize)]
pub struct SymplecticReport {
    pub bc: String,
    pub pairs: usize,
    /// max |σ(Gα, Gβ) − (α, Gβ)| / |σ|
    pub max_pairing_error: f64,
    /// max |σ(A, B) + σ(B, A)| / |σ|
    pub max_antisymmetry: f64,
    /// max change of σ under a gauge shift of either argument or another split, relative
    pub max_gauge_defect: f64,
    pub passed: bool,
}

fn pure_gauge<R: Rng>(setup: &MaxwellSetup, c: &SimplicialComplex, grid: TimeGrid, rng: &mut R) -> SpacetimeForm {
    let v = if setup.tangential() { interior_random(c, setup.k - 1, rng) } else { DVector::from_fn(c.num_simplices(setup.k - 1), |_, _| rng.gen_range(-1.0..1.0)) };
    let w = rng.gen_range(0.5..1.2);
    let chi = SpacetimeForm { k: setup.k - 1, grid, comps: vec![ComponentSeries { degree: setup.k - 1, data: separable(&v, &grid, |t| (w * t).cos()) }] };
    st_d(setup, &chi)
}

/// σ against the load pairing, antisymmetry, gauge invariance and
/// independence of the temporal split, on random exact generators.
pub fn symplectic_check<R: Rng>(setup: &MaxwellSetup, c: &SimplicialComplex, grid: TimeGrid, pairs: usize, rng: &mut R) -> Result<SymplecticReport> {
    use crate::maxwell::{pairing_gtilde, sigma};
    let (mut pe, mut anti, mut gauge) = (0.0f64, 0.0f64, 0.0f64);
    let other = (grid.tau(0) + span(&grid) * 0.25, grid.tau(0) + span(&grid) * 0.45);
    for _ in 0..pairs {
        let la = exact_generator(setup, c, grid, rng);
        let lb = exact_generator(setup, c, grid, rng);
        let a = solve_load(setup, &la)?;
        let b = solve_load(setup, &lb)?;
        let sab = sigma(setup, &a, &b, None)?;
        let sba = sigma(setup, &b, &a, None)?;
        let scale = sab.abs().max(1e-300);
        pe = pe.max((sab - pairing_gtilde(setup, &la, &lb)?).abs() / scale);
        anti = anti.max((sab + sba).abs() / scale);
        let shift = |x: &GaugePotential, g: SpacetimeForm| -> Result<GaugePotential> { Ok(GaugePotential { bc: x.bc, field: x.field.add(&g)? }) };
        let a2 = shift(&a, pure_gauge(setup, c, grid, rng))?;
        let b2 = shift(&b, pure_gauge(setup, c, grid, rng))?;
        for v in [sigma(setup, &a2, &b, None)?, sigma(setup, &a, &b2, None)?, sigma(setup, &a, &b, Some(other))?] {
            gauge = gauge.max((v - sab).abs() / scale);
        }
    }
    Ok(SymplecticReport {
        bc: setup.bc.name().into(),
        pairs,
        max_pairing_error: pe,
        max_antisymmetry: anti,
        max_gauge_defect: gauge,
        passed: pe <= 1e-6 && anti <= 1e-7 && gauge <= 1e-7,
    })
}

/// Radical dimension against the matching Betti number.
#[derive(Clone, Debug, Serialize)]
pub struct CenterReport {
    pub bc: String,
    pub k: usize,
    pub generators: usize,
    pub pairing_asymmetry: f64,
    pub radical: RadicalReport,
    pub betti: usize,
    pub matches: bool,
}

pub fn center_detection<R: Rng>(c: &SimplicialComplex, k: usize, bc: BcTag, grid: Option<TimeGrid>, budget: usize, rng: &mut R) -> Result<CenterReport> {
    let setup = MaxwellSetup::new(c, k, bc)?;
    let grid = match grid {
        Some(g) => g,
        None => default_grid(&setup)?,
    };
    let gens = build_generators(&setup, c, grid, budget, rng)?;
    let dets = detectors(&setup, grid);
    let p = pairing_matrix(&setup, &gens, &dets)?;
    let r = radical(&p)?;
    let betti = if bc == BcTag::MaxwellTangential {
        crate::cohomology::betti_relative(c, k)?
    } else {
        crate::cohomology::betti_absolute(c, k)?
    };
    Ok(CenterReport {
        bc: bc.name().into(),
        k,
        generators: gens.len(),
        pairing_asymmetry: p.asymmetry,
        matches: r.radical_dim == betti,
        radical: r,
        betti,
    })
}

/// Time grid resolving the fastest mode with λ_max dt² = 1 and 90 samples.
pub fn default_grid(setup: &MaxwellSetup) -> Result<TimeGrid> {
    let lmax = setup.green_k.max_eigenvalue().max(setup.green_km1.max_eigenvalue());
    TimeGrid::new(0.0, 1.0 / lmax.sqrt(), 90)
}
