//! Boundary traces, boundary conditions and the constrained operators S_Θ.
//!
//! Traces come in two flavours. The tangential trace `t` is a restriction of
//! coefficients. The normal trace is obtained from the flux functional
//! `b(β)`, the boundary term of the Green formula for Whitney forms:
//! `(dα, β) − (α, δ_s β) = ⟨tα, b(β)⟩`, which also defines the strong
//! codifferential `δ_s`. All of this uses the consistent Whitney masses.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dec::{coboundary, barycentric_gradients, Dec, MassScheme};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mesh::{dot3, sub3, SimplicialComplex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum BcTag {
    Dirichlet,
    BoxTangential,
    BoxNormal,
    RobinTangential,
    RobinNormal,
    MaxwellTangential,
    MaxwellNormal,
}

impl BcTag {
    pub fn is_robin(self) -> bool {
        matches!(self, BcTag::RobinTangential | BcTag::RobinNormal)
    }
    pub fn name(self) -> &'static str {
        match self {
            BcTag::Dirichlet => "dirichlet",
            BcTag::BoxTangential => "box_tangential",
            BcTag::BoxNormal => "box_normal",
            BcTag::RobinTangential => "robin_tangential",
            BcTag::RobinNormal => "robin_normal",
            BcTag::MaxwellTangential => "maxwell_tangential",
            BcTag::MaxwellNormal => "maxwell_normal",
        }
    }
    /// The wave-operator condition used to build propagators.
    pub fn wave_condition(self) -> BcTag {
        match self {
            BcTag::MaxwellTangential => BcTag::BoxTangential,
            BcTag::MaxwellNormal => BcTag::BoxNormal,
            t => t,
        }
    }
}

/// Robin data as written in a config: a constant or one value per boundary top simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RobinData {
    Constant(f64),
    PerSimplex(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcSpec {
    pub kind: BcTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<RobinData>,
}

/// A boundary condition resolved against a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct BCKind {
    pub tag: BcTag,
    /// per boundary (n−1)-simplex, in boundary order
    pub f: Option<Vec<f64>>,
}

impl BCKind {
    pub fn plain(tag: BcTag) -> Self {
        BCKind { tag, f: None }
    }

    pub fn robin_constant(c: &SimplicialComplex, tag: BcTag, value: f64) -> Result<Self> {
        let spec = BcSpec { kind: tag, f: Some(RobinData::Constant(value)) };
        Self::resolve(&spec, c)
    }

    pub fn resolve(spec: &BcSpec, c: &SimplicialComplex) -> Result<Self> {
        let nb = c.boundary_indices(c.dim() - 1).len();
        let f = match (&spec.f, spec.kind.is_robin()) {
            (None, false) => None,
            (Some(_), false) => {
                return Err(Error::Precondition(format!("boundary function given for non-Robin condition {}", spec.kind.name())))
            }
            (None, true) => return Err(Error::Precondition(format!("{} needs a boundary function f", spec.kind.name()))),
            (Some(RobinData::Constant(v)), true) => Some(vec![*v; nb]),
            (Some(RobinData::PerSimplex(v)), true) => {
                if v.len() != nb {
                    return Err(Error::Precondition(format!("f has {} values, boundary has {nb} simplices", v.len())));
                }
                Some(v.clone())
            }
        };
        let bc = BCKind { tag: spec.kind, f };
        bc.validate()?;
        Ok(bc)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(f) = &self.f {
            if !self.tag.is_robin() {
                return Err(Error::Precondition("boundary function only allowed for Robin conditions".into()));
            }
            for (i, &v) in f.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::SignViolation(format!("f[{i}] is not finite")));
                }
                if self.tag == BcTag::RobinTangential && v < 0.0 {
                    return Err(Error::SignViolation(format!("robin_tangential needs f >= 0, got f[{i}] = {v}")));
                }
                if self.tag == BcTag::RobinNormal && v > 0.0 {
                    return Err(Error::SignViolation(format!("robin_normal needs f <= 0, got f[{i}] = {v}")));
                }
            }
        } else if self.tag.is_robin() {
            return Err(Error::Precondition("Robin condition without f".into()));
        }
        Ok(())
    }
}

/// Trace maps and the strong codifferential, all on consistent masses.
pub struct TraceOperators {
    pub n: usize,
    pub dec: Dec,
    /// boundary simplices (parent indices) per degree 0..n−1
    pub bsimp: Vec<Vec<usize>>,
    bpos: Vec<HashMap<usize, usize>>,
    /// t_j: selection onto boundary j-simplices, j in 0..n
    pub t: Vec<DMatrix<f64>>,
    /// b_j: j-forms to boundary (j−1)-cochains (index j−1), j in 1..=n
    pub b: Vec<DMatrix<f64>>,
    /// boundary masses per boundary degree
    pub mb: Vec<DMatrix<f64>>,
    /// δ_s for j in 1..=n (index j−1)
    pub delta_s: Vec<DMatrix<f64>>,
}

impl TraceOperators {
    pub fn new(c: &SimplicialComplex) -> Result<Self> {
        let n = c.dim();
        let dec = Dec::new(c, MassScheme::Whitney)?;
        let bsimp: Vec<Vec<usize>> = (0..n).map(|k| c.boundary_indices(k)).collect();
        let bpos: Vec<HashMap<usize, usize>> =
            bsimp.iter().map(|l| l.iter().enumerate().map(|(p, &i)| (i, p)).collect()).collect();
        let t: Vec<DMatrix<f64>> = (0..n).map(|j| linalg::selection(&bsimp[j], c.num_simplices(j))).collect();
        let ones = vec![1.0; bsimp[n - 1].len()];
        let mb: Vec<DMatrix<f64>> = (0..n).map(|j| boundary_mass(c, &bsimp, &bpos, j, &ones)).collect();
        let mut b = Vec::with_capacity(n);
        for j in 1..=n {
            b.push(flux_functional(c, &bsimp, &bpos, j)?);
        }
        let mut delta_s = Vec::with_capacity(n);
        for j in 1..=n {
            let rhs = dec.d[j - 1].transpose() * &dec.mass[j] - t[j - 1].transpose() * &b[j - 1];
            delta_s.push(dec.solve_mass(j - 1, &rhs));
        }
        Ok(TraceOperators { n, dec, bsimp, bpos, t, b, mb, delta_s })
    }

    pub fn boundary_position(&self, k: usize, parent: usize) -> Option<usize> {
        self.bpos.get(k)?.get(&parent).copied()
    }

    /// Tangential trace; empty for j = n.
    pub fn tangential(&self, j: usize, w: &DVector<f64>) -> DVector<f64> {
        if j >= self.n {
            return DVector::zeros(0);
        }
        &self.t[j] * w
    }

    /// Flux functional b(ω) of a j-form, j ≥ 1.
    pub fn flux(&self, j: usize, w: &DVector<f64>) -> DVector<f64> {
        if j == 0 || j > self.n {
            return DVector::zeros(0);
        }
        &self.b[j - 1] * w
    }

    /// Normal trace ν = M_∂^{-1} b(ω), a boundary (j−1)-cochain.
    pub fn normal(&self, j: usize, w: &DVector<f64>) -> Result<DVector<f64>> {
        if j == 0 || j > self.n {
            return Ok(DVector::zeros(0));
        }
        let chol = linalg::cholesky(&self.mb[j - 1], "boundary mass")?;
        Ok(chol.solve(&self.flux(j, w)))
    }

    pub fn normal_matrix(&self, j: usize) -> Result<DMatrix<f64>> {
        let chol = linalg::cholesky(&self.mb[j - 1], "boundary mass")?;
        Ok(chol.solve(&self.b[j - 1]))
    }

    pub fn strong_delta(&self, j: usize) -> Option<&DMatrix<f64>> {
        if j == 0 || j > self.n {
            None
        } else {
            Some(&self.delta_s[j - 1])
        }
    }

    /// L_s = d δ_s + δ_s d on j-forms.
    pub fn strong_laplacian(&self, j: usize, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(w.len());
        if j >= 1 {
            out += &self.dec.d[j - 1] * (&self.delta_s[j - 1] * w);
        }
        if j < self.n {
            out += &self.delta_s[j] * (&self.dec.d[j] * w);
        }
        out
    }

    /// tδ_s ω on boundary (j−1)-simplices.
    pub fn t_delta(&self, j: usize, w: &DVector<f64>) -> DVector<f64> {
        if j == 0 || j > self.n {
            return DVector::zeros(0);
        }
        self.tangential(j - 1, &(&self.delta_s[j - 1] * w))
    }

    /// n dω on boundary j-simplices.
    pub fn n_d(&self, j: usize, w: &DVector<f64>) -> Result<DVector<f64>> {
        if j >= self.n {
            return Ok(DVector::zeros(0));
        }
        self.normal(j + 1, &(&self.dec.d[j] * w))
    }

    pub fn boundary_inner(&self, k: usize, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        if a.len() == 0 {
            return 0.0;
        }
        a.dot(&(&self.mb[k] * b))
    }

    /// γ₀ = (n ω, t ω) of one component.
    pub fn gamma0(&self, j: usize, w: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        Ok((self.normal(j, w)?, self.tangential(j, w)))
    }

    /// γ₁ = (tδ ω, −n dω) of one component. The minus sign on the second
    /// slot is what makes the abstract Green identity hold with the
    /// positive operator dδ + δd.
    pub fn gamma1(&self, j: usize, w: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        Ok((self.t_delta(j, w), -self.n_d(j, w)?))
    }

    /// (x | y) on pairs living on boundary degrees (j−1, j).
    fn triple_pairing(&self, j: usize, x: &(DVector<f64>, DVector<f64>), y: &(DVector<f64>, DVector<f64>)) -> f64 {
        let mut s = 0.0;
        if j >= 1 && x.0.len() > 0 {
            s += self.boundary_inner(j - 1, &x.0, &y.0);
        }
        if j < self.n && x.1.len() > 0 {
            s += self.boundary_inner(j, &x.1, &y.1);
        }
        s
    }
}

fn boundary_mass(
    c: &SimplicialComplex,
    bsimp: &[Vec<usize>],
    bpos: &[HashMap<usize, usize>],
    j: usize,
    weight: &[f64],
) -> DMatrix<f64> {
    let n = c.dim();
    let nb = bsimp[j].len();
    let mut m = DMatrix::zeros(nb, nb);
    if n == 1 {
        // points carry counting measure
        for (p, w) in weight.iter().enumerate() {
            m[(p, p)] = *w;
        }
        return m;
    }
    // n = 2: boundary curve made of edges
    for (q, &e) in bsimp[1].iter().enumerate() {
        let len = c.volume(1, e);
        let w = weight[q];
        if j == 1 {
            m[(q, q)] += w / len;
        } else {
            let s = c.simplex(1, e);
            let (a, b) = (bpos[0][&s[0]], bpos[0][&s[1]]);
            m[(a, a)] += w * len / 3.0;
            m[(b, b)] += w * len / 3.0;
            m[(a, b)] += w * len / 6.0;
            m[(b, a)] += w * len / 6.0;
        }
    }
    m
}

/// Rows: boundary (j−1)-simplices. Columns: j-simplices.
fn flux_functional(
    c: &SimplicialComplex,
    bsimp: &[Vec<usize>],
    bpos: &[HashMap<usize, usize>],
    j: usize,
) -> Result<DMatrix<f64>> {
    let n = c.dim();
    let mut b = DMatrix::zeros(bsimp[j - 1].len(), c.num_simplices(j));
    if j == n {
        for (p, &f) in bsimp[n - 1].iter().enumerate() {
            let &(t, _) = &c.cofaces(n - 1, f)[0];
            let s = c.faces(n, t).iter().find(|&&(g, _)| g == f).unwrap().1 as f64;
            b[(p, t)] = s / c.volume(n, t);
        }
        return Ok(b);
    }
    // n = 2, j = 1: b_v = ∫_∂ λ_v (φ_E · ν) ds, Simpson on each boundary edge
    debug_assert!(n == 2 && j == 1);
    for &e in &bsimp[1] {
        let (t, _) = c.cofaces(1, e)[0];
        let tv = c.simplex(2, t);
        let pts: Vec<[f64; 3]> = tv.iter().map(|&v| c.vertex(v)).collect();
        let grads = barycentric_gradients(&pts).ok_or(Error::DegenerateSimplex { degree: 2, id: t })?;
        let ev = c.simplex(1, e);
        let lp = tv.iter().position(|&v| v == ev[0]).unwrap();
        let lq = tv.iter().position(|&v| v == ev[1]).unwrap();
        let lr = 3 - lp - lq;
        let (pp, pq, pr) = (pts[lp], pts[lq], pts[lr]);
        let tang = sub3(pq, pp);
        let len = dot3(tang, tang).sqrt();
        let w = sub3(pr, pp);
        let proj = dot3(w, tang) / (len * len);
        let perp = [w[0] - proj * tang[0], w[1] - proj * tang[1], w[2] - proj * tang[2]];
        let pn = dot3(perp, perp).sqrt();
        let nu = [-perp[0] / pn, -perp[1] / pn, -perp[2] / pn];
        // barycentric values at the Simpson nodes (p, midpoint, q)
        let lam = |node: usize, local: usize| -> f64 {
            match node {
                0 => (local == lp) as i32 as f64,
                1 => {
                    if local == lp || local == lq {
                        0.5
                    } else {
                        0.0
                    }
                }
                _ => (local == lq) as i32 as f64,
            }
        };
        let wts = [len / 6.0, 4.0 * len / 6.0, len / 6.0];
        for (la, lb) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let edge = c.find_simplex(1, &[tv[la], tv[lb]]).unwrap();
            let (ga, gb) = (dot3(grads[la], nu), dot3(grads[lb], nu));
            for (lv, v) in [(lp, ev[0]), (lq, ev[1])] {
                let mut acc = 0.0;
                for node in 0..3 {
                    let phi = lam(node, la) * gb - lam(node, lb) * ga;
                    acc += wts[node] * lam(node, lv) * phi;
                }
                b[(bpos[0][&v], edge)] += acc;
            }
        }
    }
    Ok(b)
}

/// (dα, β) − (α, δ_s β) for α of degree k and β of degree k+1.
pub fn green_defect(tr: &TraceOperators, k: usize, alpha: &DVector<f64>, beta: &DVector<f64>) -> Result<f64> {
    if k >= tr.n {
        return Err(Error::DegreeOutOfRange { degree: k, lo: 0, hi: tr.n - 1 });
    }
    if alpha.len() != tr.dec.dim(k) || beta.len() != tr.dec.dim(k + 1) {
        return Err(Error::Precondition("green_defect: form sizes do not match degrees (k, k+1)".into()));
    }
    let lhs = tr.dec.inner(k + 1, &(&tr.dec.d[k] * alpha), beta);
    let rhs = tr.dec.inner(k, alpha, &(&tr.delta_s[k] * beta));
    Ok(lhs - rhs)
}

/// One component of a constrained block.
#[derive(Clone, Debug)]
pub struct ConstrainedComponent {
    pub degree: usize,
    pub a: DMatrix<f64>,
    pub m: DMatrix<f64>,
    /// full cochain = p * reduced
    pub p: DMatrix<f64>,
    /// mass of the full cochain space (turns fields into loads)
    pub full_mass: DMatrix<f64>,
}

/// S_Θ on (k−1, k) pairs with the boundary condition built in.
#[derive(Clone, Debug)]
pub struct ConstrainedOperator {
    pub k: usize,
    pub n: usize,
    pub bc: BCKind,
    pub scheme: MassScheme,
    /// components in order ω₀ (degree k−1) then ω₁ (degree k); absent degrees skipped
    pub components: Vec<ConstrainedComponent>,
}

impl ConstrainedOperator {
    pub fn stiffness(&self) -> DMatrix<f64> {
        self.components.iter().fold(DMatrix::zeros(0, 0), |acc, c| linalg::block_diag(&acc, &c.a))
    }
    pub fn mass(&self) -> DMatrix<f64> {
        self.components.iter().fold(DMatrix::zeros(0, 0), |acc, c| linalg::block_diag(&acc, &c.m))
    }
    pub fn prolongation(&self) -> DMatrix<f64> {
        self.components.iter().fold(DMatrix::zeros(0, 0), |acc, c| linalg::block_diag(&acc, &c.p))
    }
    pub fn reduced_dim(&self) -> usize {
        self.components.iter().map(|c| c.a.nrows()).sum()
    }
    pub fn full_dim(&self) -> usize {
        self.components.iter().map(|c| c.p.nrows()).sum()
    }
    pub fn component(&self, degree: usize) -> Option<&ConstrainedComponent> {
        self.components.iter().find(|c| c.degree == degree)
    }
    /// Offsets of each component inside the stacked reduced vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut o = Vec::new();
        let mut s = 0;
        for c in &self.components {
            o.push(s);
            s += c.a.nrows();
        }
        o
    }
}

/// Build S_Θ for the block (k−1, k), k in 0..=n+1, with the default
/// lumped vertex mass.
pub fn build_constrained(c: &SimplicialComplex, k: usize, bc: &BCKind) -> Result<ConstrainedOperator> {
    build_constrained_with(c, k, bc, MassScheme::default())
}

pub fn build_constrained_with(c: &SimplicialComplex, k: usize, bc: &BCKind, scheme: MassScheme) -> Result<ConstrainedOperator> {
    bc.validate()?;
    let n = c.dim();
    if k > n + 1 {
        return Err(Error::DegreeOutOfRange { degree: k, lo: 0, hi: n + 1 });
    }
    let dec = Dec::new(c, scheme)?;
    let tr = TraceOperators::new(c)?;
    let mut components = Vec::new();
    let lo = if k == 0 { 0 } else { k - 1 };
    for j in lo..=k.min(n) {
        if k >= 1 && j == k - 1 || j == k {
            components.push(build_component(c, &dec, &tr, j, bc)?);
        }
    }
    Ok(ConstrainedOperator { k, n, bc: bc.clone(), scheme, components })
}

/// Absolute (natural) stiffness of degree j.
fn absolute_component(dec: &Dec, j: usize) -> ConstrainedComponent {
    let dim = dec.dim(j);
    ConstrainedComponent { degree: j, a: dec.laplacian_stiffness(j), m: dec.mass[j].clone(), p: DMatrix::identity(dim, dim), full_mass: dec.mass[j].clone() }
}

/// Relative complex: cochains vanishing on boundary simplices.
fn relative_component(c: &SimplicialComplex, dec: &Dec, j: usize) -> Result<ConstrainedComponent> {
    let n = dec.n;
    let idx = |k: usize| c.interior_indices(k);
    let sub = |m: &DMatrix<f64>, r: &[usize], cl: &[usize]| DMatrix::from_fn(r.len(), cl.len(), |a, b| m[(r[a], cl[b])]);
    let ij = idx(j);
    let mj = sub(&dec.mass[j], &ij, &ij);
    let mut a = DMatrix::zeros(ij.len(), ij.len());
    if j >= 1 {
        let im = idx(j - 1);
        let dm = sub(&dec.d[j - 1], &ij, &im);
        let mm = sub(&dec.mass[j - 1], &im, &im);
        if !im.is_empty() {
            let chol = linalg::cholesky(&mm, "relative mass")?;
            let bt = dm.transpose() * &mj;
            a += bt.transpose() * chol.solve(&bt);
        }
    }
    if j < n {
        let ip = idx(j + 1);
        let dp = sub(&dec.d[j], &ip, &ij);
        let mp = sub(&dec.mass[j + 1], &ip, &ip);
        a += dp.transpose() * mp * dp;
    }
    Ok(ConstrainedComponent { degree: j, a: linalg::symmetrize(&a), m: mj, p: linalg::selection(&ij, c.num_simplices(j)).transpose(), full_mass: dec.mass[j].clone() })
}

fn build_component(c: &SimplicialComplex, dec: &Dec, tr: &TraceOperators, j: usize, bc: &BCKind) -> Result<ConstrainedComponent> {
    let n = dec.n;
    match bc.tag.wave_condition() {
        BcTag::BoxNormal => Ok(absolute_component(dec, j)),
        BcTag::BoxTangential => relative_component(c, dec, j),
        BcTag::Dirichlet => {
            let abs = absolute_component(dec, j);
            let sel = linalg::selection(&c.interior_indices(j), c.num_simplices(j)).transpose();
            let z = if j >= 1 {
                let nb = &tr.b[j - 1] * &sel;
                let zz = linalg::null_space(&nb, 1e-12);
                &sel * zz
            } else {
                sel
            };
            let a = linalg::symmetrize(&(z.transpose() * &abs.a * &z));
            let m = linalg::symmetrize(&(z.transpose() * &abs.m * &z));
            Ok(ConstrainedComponent { degree: j, a, m, p: z, full_mass: abs.m })
        }
        BcTag::RobinNormal => {
            let mut comp = absolute_component(dec, j);
            if j < n {
                let f: Vec<f64> = bc.f.as_ref().unwrap().iter().map(|x| -x).collect();
                let mf = boundary_mass(c, &tr.bsimp, &tr.bpos, j, &f);
                comp.a += tr.t[j].transpose() * mf * &tr.t[j];
                comp.a = linalg::symmetrize(&comp.a);
            }
            Ok(comp)
        }
        BcTag::RobinTangential => {
            let mut comp = relative_component(c, dec, j)?;
            if j >= 1 {
                let f = bc.f.as_ref().unwrap();
                let mf = boundary_mass(c, &tr.bsimp, &tr.bpos, j - 1, f);
                let nmat = tr.normal_matrix(j)? * &comp.p;
                comp.a += nmat.transpose() * mf * nmat;
                comp.a = linalg::symmetrize(&comp.a);
            }
            Ok(comp)
        }
        BcTag::MaxwellNormal | BcTag::MaxwellTangential => unreachable!(),
    }
}

/// A form pair in the constrained space of a given condition.
#[derive(Clone, Debug)]
pub struct ConstrainedForm {
    pub bc: BcTag,
    pub k: usize,
    /// stacked reduced coordinates
    pub reduced: DVector<f64>,
}

impl ConstrainedForm {
    pub fn from_reduced(op: &ConstrainedOperator, reduced: DVector<f64>) -> Result<Self> {
        if reduced.len() != op.reduced_dim() {
            return Err(Error::Precondition("reduced vector has the wrong length".into()));
        }
        Ok(ConstrainedForm { bc: op.bc.tag, k: op.k, reduced })
    }

    /// Project a full stacked cochain pair; errors if it violates the
    /// essential constraints by more than 1e−10 relative.
    pub fn from_full(op: &ConstrainedOperator, full: &DVector<f64>) -> Result<Self> {
        let p = op.prolongation();
        if full.len() != p.nrows() {
            return Err(Error::Precondition("full vector has the wrong length".into()));
        }
        // P has orthonormal columns
        let red = p.transpose() * full;
        let back = &p * &red;
        if (&back - full).norm() > 1e-10 * full.norm().max(1e-300) {
            return Err(Error::BcMismatch(format!("form violates the essential constraints of {}", op.bc.tag.name())));
        }
        Ok(ConstrainedForm { bc: op.bc.tag, k: op.k, reduced: red })
    }
}

/// (S_Θ α, β)_M − (α, S_Θ β)_M in the constrained space.
pub fn box_green_defect(op: &ConstrainedOperator, alpha: &ConstrainedForm, beta: &ConstrainedForm) -> Result<f64> {
    for f in [alpha, beta] {
        if f.bc != op.bc.tag || f.k != op.k {
            return Err(Error::BcMismatch(format!(
                "form built for {} (k={}) used with operator {} (k={})",
                f.bc.name(),
                f.k,
                op.bc.tag.name(),
                op.k
            )));
        }
    }
    let a = op.stiffness();
    let m = op.mass();
    let chol = linalg::cholesky(&m, "constrained mass")?;
    let sa = chol.solve(&(&a * &alpha.reduced));
    let sb = chol.solve(&(&a * &beta.reduced));
    Ok(sa.dot(&(&m * &beta.reduced)) - alpha.reduced.dot(&(&m * sb)))
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenDefectReport {
    pub bc: BcTag,
    pub k: usize,
    pub samples: usize,
    /// max |defect| / (‖α‖_M ‖β‖_M ‖S_Θ‖)
    pub max_relative: f64,
}

/// `box_green_defect` on random constrained pairs, normalized by the
/// operator scale and the pair norms.
pub fn green_defect_check<R: Rng>(op: &ConstrainedOperator, samples: usize, rng: &mut R) -> Result<GreenDefectReport> {
    let scale = operator_scale(op)?;
    let m = op.mass();
    let mut worst = 0.0f64;
    let draw = |rng: &mut R| -> Result<ConstrainedForm> {
        ConstrainedForm::from_reduced(op, DVector::from_fn(op.reduced_dim(), |_, _| rng.gen_range(-1.0..1.0)))
    };
    for _ in 0..samples {
        let a = draw(rng)?;
        let b = draw(rng)?;
        let d = box_green_defect(op, &a, &b)?;
        let na = a.reduced.dot(&(&m * &a.reduced)).sqrt();
        let nb = b.reduced.dot(&(&m * &b.reduced)).sqrt();
        let denom = na * nb * scale;
        if denom > 0.0 {
            worst = worst.max(d.abs() / denom);
        }
    }
    Ok(GreenDefectReport { bc: op.bc.tag, k: op.k, samples, max_relative: worst })
}

/// Largest generalized eigenvalue magnitude, used as ‖S_Θ‖.
pub fn operator_scale(op: &ConstrainedOperator) -> Result<f64> {
    let (vals, _) = linalg::generalized_eigen(&op.stiffness(), &op.mass())?;
    Ok(vals.iter().fold(0.0f64, |a, &b| a.max(b.abs())))
}

#[derive(Clone, Debug, Serialize)]
pub struct PositivityReport {
    pub bc: BcTag,
    pub k: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub relative_min: f64,
    pub passed: bool,
}

pub fn positivity_check(op: &ConstrainedOperator) -> Result<PositivityReport> {
    let (vals, _) = linalg::generalized_eigen(&op.stiffness(), &op.mass())?;
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    let rel = if max > 0.0 { min / max } else { 0.0 };
    Ok(PositivityReport { bc: op.bc.tag, k: op.k, min_eigenvalue: min, max_eigenvalue: max, relative_min: rel, passed: rel >= -1e-9 })
}

#[derive(Clone, Debug, Serialize)]
pub struct TripleIdentityReport {
    pub k: usize,
    pub samples: usize,
    /// random unconstrained pairs
    pub max_discrepancy_random: f64,
    pub max_relative_discrepancy_random: f64,
    /// pairs supported away from the boundary
    pub max_discrepancy_interior: f64,
    /// (f, f) pairs
    pub max_discrepancy_diagonal: f64,
    /// smooth interpolants on the mesh and on its refinement
    pub smooth_discrepancy_coarse: f64,
    pub smooth_discrepancy_fine: f64,
    pub decay_ratio: f64,
}

/// Both sides of the abstract Green identity for one stacked pair.
/// Returns (lhs, rhs, scale) where scale bounds the size of the terms.
pub fn triple_sides(tr: &TraceOperators, k: usize, f: &[(usize, DVector<f64>)], g: &[(usize, DVector<f64>)]) -> Result<(f64, f64, f64)> {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut scale = 0.0f64;
    for ((j, a), (j2, b)) in f.iter().zip(g) {
        debug_assert_eq!(j, j2);
        let _ = k;
        let la = tr.strong_laplacian(*j, a);
        let lb = tr.strong_laplacian(*j, b);
        let t1 = tr.dec.inner(*j, &la, b);
        let t2 = tr.dec.inner(*j, a, &lb);
        lhs += t1 - t2;
        let g0a = tr.gamma0(*j, a)?;
        let g0b = tr.gamma0(*j, b)?;
        let g1a = tr.gamma1(*j, a)?;
        let g1b = tr.gamma1(*j, b)?;
        let r1 = tr.triple_pairing(*j, &g1a, &g0b);
        let r2 = tr.triple_pairing(*j, &g0a, &g1b);
        rhs += r1 - r2;
        scale = scale.max(t1.abs()).max(t2.abs()).max(r1.abs()).max(r2.abs());
    }
    Ok((lhs, rhs, scale))
}

fn block_degrees(n: usize, k: usize) -> Vec<usize> {
    let mut v = Vec::new();
    if k >= 1 && k - 1 <= n {
        v.push(k - 1);
    }
    if k <= n {
        v.push(k);
    }
    v
}

fn random_pair<R: Rng>(c: &SimplicialComplex, k: usize, rng: &mut R, interior: bool) -> Vec<(usize, DVector<f64>)> {
    block_degrees(c.dim(), k)
        .into_iter()
        .map(|j| {
            let v = DVector::from_fn(c.num_simplices(j), |i, _| {
                if interior && c.touches_boundary(j, i) {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            });
            (j, v)
        })
        .collect()
}

/// Smooth test pair on a 1-D mesh: components are interpolated from
/// fixed analytic functions.
fn smooth_pair_1d(c: &SimplicialComplex, k: usize, which: usize) -> Result<Vec<(usize, DVector<f64>)>> {
    use crate::dec::{interpolate, Sampler};
    let f0: &dyn Fn([f64; 3]) -> f64 = if which == 0 { &|p: [f64; 3]| (p[0]).cos() + 0.25 * p[0] * p[0] } else { &|p: [f64; 3]| (2.0 * p[0]).sin() + p[0] };
    let f1: &dyn Fn([f64; 3]) -> f64 = if which == 0 { &|p: [f64; 3]| 1.0 + (p[0]).sin() } else { &|p: [f64; 3]| (0.5 * p[0]).cos() * p[0] };
    let mut out = Vec::new();
    for j in block_degrees(c.dim(), k) {
        let s = if j == 0 { Sampler::Scalar(f0) } else { Sampler::Scalar(f1) };
        out.push((j, interpolate(c, j, &s)?.values));
    }
    Ok(out)
}

/// Check (S*f|f′) − (f|S*f′) = (γ₁f|γ₀f′) − (γ₀f|γ₁f′) on random,
/// interior and smooth pairs.
pub fn triple_identity_check<R: Rng>(c: &SimplicialComplex, k: usize, samples: usize, rng: &mut R) -> Result<TripleIdentityReport> {
    if k > c.dim() + 1 {
        return Err(Error::DegreeOutOfRange { degree: k, lo: 0, hi: c.dim() + 1 });
    }
    let tr = TraceOperators::new(c)?;
    let (mut rand_max, mut rand_rel, mut int_max, mut diag_max) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let f = random_pair(c, k, rng, false);
        let g = random_pair(c, k, rng, false);
        let (l, r, s) = triple_sides(&tr, k, &f, &g)?;
        rand_max = rand_max.max((l - r).abs());
        rand_rel = rand_rel.max((l - r).abs() / s.max(1e-300));
        let (l, r, _) = triple_sides(&tr, k, &f, &f)?;
        diag_max = diag_max.max((l - r).abs()).max(l.abs()).max(r.abs());
        let fi = random_pair(c, k, rng, true);
        let gi = random_pair(c, k, rng, true);
        let (l, r, _) = triple_sides(&tr, k, &fi, &gi)?;
        int_max = int_max.max((l - r).abs()).max(l.abs()).max(r.abs());
    }
    let (coarse, fine) = if c.dim() == 1 {
        let fine_c = c.refine()?;
        let tr_f = TraceOperators::new(&fine_c)?;
        let (l0, r0, _) = triple_sides(&tr, k, &smooth_pair_1d(c, k, 0)?, &smooth_pair_1d(c, k, 1)?)?;
        let (l1, r1, _) = triple_sides(&tr_f, k, &smooth_pair_1d(&fine_c, k, 0)?, &smooth_pair_1d(&fine_c, k, 1)?)?;
        ((l0 - r0).abs(), (l1 - r1).abs())
    } else {
        (0.0, 0.0)
    };
    let ratio = if fine > 0.0 { coarse / fine } else { f64::INFINITY };
    Ok(TripleIdentityReport {
        k,
        samples,
        max_discrepancy_random: rand_max,
        max_relative_discrepancy_random: rand_rel,
        max_discrepancy_interior: int_max,
        max_discrepancy_diagonal: diag_max,
        smooth_discrepancy_coarse: coarse,
        smooth_discrepancy_fine: fine,
        decay_ratio: ratio,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SurjectivityReport {
    pub degree: usize,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub full_row_rank: bool,
}

/// Rank of the stacked map (n, t, tδ, nd) on unconstrained j-forms.
pub fn trace_surjectivity(c: &SimplicialComplex, j: usize) -> Result<SurjectivityReport> {
    let tr = TraceOperators::new(c)?;
    let n = tr.n;
    let cols = c.num_simplices(j);
    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    if j >= 1 {
        blocks.push(tr.normal_matrix(j)?);
        blocks.push(&tr.t[j - 1] * &tr.delta_s[j - 1]);
    }
    if j < n {
        blocks.push(tr.t[j].clone());
        blocks.push(tr.normal_matrix(j + 1)? * &tr.dec.d[j]);
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in &blocks {
        m.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    let rank = linalg::numerical_rank(&m, 1e-10);
    Ok(SurjectivityReport { degree: j, rows, cols, rank, full_row_rank: rank == rows })
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    pub degree: usize,
    pub relative: Vec<f64>,
    pub absolute_dual: Vec<f64>,
    pub max_relative_gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare the lowest nonzero eigenvalues of the relative j-Laplacian with
/// those of the absolute (n−j)-Laplacian.
pub fn hodge_duality_check(c: &SimplicialComplex, j: usize, modes: usize) -> Result<DualityReport> {
    let n = c.dim();
    if j > n {
        return Err(Error::DegreeOutOfRange { degree: j, lo: 0, hi: n });
    }
    let dec = Dec::new(c, MassScheme::default())?;
    let rel = relative_component(c, &dec, j)?;
    let abs = absolute_component(&dec, n - j);
    let nonzero = |a: &DMatrix<f64>, m: &DMatrix<f64>| -> Result<Vec<f64>> {
        let (v, _) = linalg::generalized_eigen(a, m)?;
        let top = v.iter().cloned().fold(0.0f64, f64::max);
        Ok(v.iter().cloned().filter(|&x| x > 1e-9 * top).take(modes).collect())
    };
    let r = nonzero(&rel.a, &rel.m)?;
    let a = nonzero(&abs.a, &abs.m)?;
    let h = c.mesh_size();
    let gap = r.iter().zip(&a).map(|(x, y)| (x - y).abs() / y.abs()).fold(0.0, f64::max);
    let tol = 10.0 * h;
    Ok(DualityReport { degree: j, relative: r, absolute_dual: a, max_relative_gap: gap, tolerance: tol, passed: gap <= tol })
}

/// The zero matrix test: d_{j+1} d_j on the full complex.
pub fn coboundary_squared_norm(c: &SimplicialComplex, j: usize) -> f64 {
    if j + 1 >= c.dim() {
        return 0.0;
    }
    (coboundary(c, j + 1) * coboundary(c, j)).norm()
}
