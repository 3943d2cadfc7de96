//! Absolute and relative cohomology by exact integer ranks, plus harmonic
//! representatives from the constrained Laplacians.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::boundary::{build_constrained, BCKind, BcTag};
use crate::error::{Error, Result};
use crate::mesh::SimplicialComplex;
use crate::propagator::{eigendecompose, ModeCount};

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Rank of an integer matrix by fraction-free elimination. Rows are divided
/// by their gcd after every step, which keeps entries small for incidence
/// matrices; overflow is reported rather than wrapped.
pub fn integer_rank(rows: &[Vec<i64>]) -> Result<usize> {
    let mut m: Vec<Vec<i128>> = rows.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
    let ncols = m.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for col in 0..ncols {
        let Some(p) = (rank..m.len()).filter(|&r| m[r][col] != 0).min_by_key(|&r| m[r][col].abs()) else {
            continue;
        };
        m.swap(rank, p);
        let pivot = m[rank][col];
        for r in rank + 1..m.len() {
            let f = m[r][col];
            if f == 0 {
                continue;
            }
            let mut g = 0i128;
            for c in col..ncols {
                let v = m[r][c]
                    .checked_mul(pivot)
                    .and_then(|x| m[rank][c].checked_mul(f).and_then(|y| x.checked_sub(y)))
                    .ok_or(Error::RankOverflow)?;
                m[r][c] = v;
                g = gcd(g, v);
            }
            if g > 1 {
                for c in col..ncols {
                    m[r][c] /= g;
                }
            }
        }
        rank += 1;
        if rank == m.len() {
            break;
        }
    }
    Ok(rank)
}

/// Coboundary d_k as an integer matrix (rows (k+1)-simplices).
fn coboundary_int(c: &SimplicialComplex, k: usize) -> Vec<Vec<i64>> {
    let mut m = vec![vec![0i64; c.num_simplices(k)]; c.num_simplices(k + 1)];
    for (r, col, s) in c.incidence(k + 1) {
        m[col][r] = s;
    }
    m
}

fn restrict(m: &[Vec<i64>], rows: &[usize], cols: &[usize]) -> Vec<Vec<i64>> {
    rows.iter().map(|&r| cols.iter().map(|&c| m[r][c]).collect()).collect()
}

/// Betti numbers of a cochain complex given the dimensions and the ranks of d_k.
fn betti_from_ranks(dims: &[usize], ranks: &[usize]) -> Vec<usize> {
    (0..dims.len())
        .map(|k| {
            let rk = ranks.get(k).copied().unwrap_or(0);
            let rkm = if k == 0 { 0 } else { ranks[k - 1] };
            dims[k] - rk - rkm
        })
        .collect()
}

pub fn betti_absolute_all(c: &SimplicialComplex) -> Result<Vec<usize>> {
    let n = c.dim();
    let dims: Vec<usize> = (0..=n).map(|k| c.num_simplices(k)).collect();
    let ranks = (0..n).map(|k| integer_rank(&coboundary_int(c, k))).collect::<Result<Vec<_>>>()?;
    Ok(betti_from_ranks(&dims, &ranks))
}

/// Cohomology of the subcomplex of cochains vanishing on boundary simplices.
pub fn betti_relative_all(c: &SimplicialComplex) -> Result<Vec<usize>> {
    let n = c.dim();
    let idx: Vec<Vec<usize>> = (0..=n).map(|k| c.interior_indices(k)).collect();
    let dims: Vec<usize> = idx.iter().map(|v| v.len()).collect();
    let ranks = (0..n)
        .map(|k| integer_rank(&restrict(&coboundary_int(c, k), &idx[k + 1], &idx[k])))
        .collect::<Result<Vec<_>>>()?;
    Ok(betti_from_ranks(&dims, &ranks))
}

/// Betti numbers of ∂Σ as a complex of its own.
pub fn betti_boundary_all(c: &SimplicialComplex) -> Result<Vec<usize>> {
    let n = c.dim();
    let idx: Vec<Vec<usize>> = (0..n).map(|k| c.boundary_indices(k)).collect();
    let dims: Vec<usize> = idx.iter().map(|v| v.len()).collect();
    let ranks = (0..n.saturating_sub(1))
        .map(|k| integer_rank(&restrict(&coboundary_int(c, k), &idx[k + 1], &idx[k])))
        .collect::<Result<Vec<_>>>()?;
    Ok(betti_from_ranks(&dims, &ranks))
}

pub fn betti_absolute(c: &SimplicialComplex, k: usize) -> Result<usize> {
    check_degree(c, k)?;
    Ok(betti_absolute_all(c)?[k])
}

pub fn betti_relative(c: &SimplicialComplex, k: usize) -> Result<usize> {
    check_degree(c, k)?;
    Ok(betti_relative_all(c)?[k])
}

fn check_degree(c: &SimplicialComplex, k: usize) -> Result<()> {
    if k > c.dim() {
        return Err(Error::DegreeOutOfRange { degree: k, lo: 0, hi: c.dim() });
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct LefschetzReport {
    /// (k, b_k^rel, b_{n−k}, holds)
    pub degrees: Vec<(usize, usize, usize, bool)>,
    pub passed: bool,
}

pub fn lefschetz_check(c: &SimplicialComplex) -> Result<LefschetzReport> {
    let n = c.dim();
    let abs = betti_absolute_all(c)?;
    let rel = betti_relative_all(c)?;
    let degrees: Vec<_> = (0..=n).map(|k| (k, rel[k], abs[n - k], rel[k] == abs[n - k])).collect();
    let passed = degrees.iter().all(|d| d.3);
    Ok(LefschetzReport { degrees, passed })
}

/// Σ_k (−1)^k (b_k^rel − b_k + b_k(∂Σ)), zero by exactness of the long
/// sequence of the pair.
pub fn long_exact_defect(c: &SimplicialComplex) -> Result<i64> {
    let abs = betti_absolute_all(c)?;
    let rel = betti_relative_all(c)?;
    let bd = betti_boundary_all(c)?;
    let mut s = 0i64;
    for k in 0..=c.dim() {
        let sign = if k % 2 == 0 { 1 } else { -1 };
        s += sign * (rel[k] as i64 - abs[k] as i64 + bd.get(k).copied().unwrap_or(0) as i64);
    }
    Ok(s)
}

#[derive(Clone, Debug)]
pub struct HarmonicBasis {
    pub bc: BcTag,
    pub degree: usize,
    /// full cochains, mass-orthonormal columns
    pub forms: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl HarmonicBasis {
    pub fn dim(&self) -> usize {
        self.forms.ncols()
    }
}

/// Zero modes of the degree-j Laplacian under ⊥ (absolute) or ∥ (relative).
pub fn harmonic_basis(c: &SimplicialComplex, j: usize, tangential: bool) -> Result<HarmonicBasis> {
    check_degree(c, j)?;
    let tag = if tangential { BcTag::BoxTangential } else { BcTag::BoxNormal };
    let op = build_constrained(c, j, &BCKind::plain(tag))?;
    let d = eigendecompose(&op, ModeCount::All)?;
    let b = d.block(j).expect("block contains degree j");
    let z = b.zero_modes;
    Ok(HarmonicBasis { bc: tag, degree: j, forms: b.modes.columns(0, z).into_owned(), warnings: d.warnings.clone() })
}

#[derive(Clone, Debug, Serialize)]
pub struct CohomologyReport {
    pub dimension: usize,
    pub betti_absolute: Vec<usize>,
    pub betti_relative: Vec<usize>,
    pub betti_boundary: Vec<usize>,
    pub harmonic_normal: Vec<usize>,
    pub harmonic_tangential: Vec<usize>,
    pub euler_characteristic: i64,
    pub euler_from_betti: i64,
    pub lefschetz: LefschetzReport,
    pub long_exact_defect: i64,
    pub warnings: Vec<String>,
    pub passed: bool,
}

pub fn cohomology_report(c: &SimplicialComplex) -> Result<CohomologyReport> {
    let n = c.dim();
    let abs = betti_absolute_all(c)?;
    let rel = betti_relative_all(c)?;
    let bd = betti_boundary_all(c)?;
    let mut warnings = Vec::new();
    let mut hn = Vec::new();
    let mut ht = Vec::new();
    for j in 0..=n {
        let a = harmonic_basis(c, j, false)?;
        let t = harmonic_basis(c, j, true)?;
        warnings.extend(a.warnings.iter().chain(&t.warnings).cloned());
        hn.push(a.dim());
        ht.push(t.dim());
    }
    let chi_b: i64 = abs.iter().enumerate().map(|(k, &b)| if k % 2 == 0 { b as i64 } else { -(b as i64) }).sum();
    let lef = lefschetz_check(c)?;
    let les = long_exact_defect(c)?;
    let chi = c.euler_characteristic();
    let passed = lef.passed && les == 0 && chi == chi_b && hn == abs && ht == rel;
    warnings.sort();
    warnings.dedup();
    Ok(CohomologyReport {
        dimension: n,
        betti_absolute: abs,
        betti_relative: rel,
        betti_boundary: bd,
        harmonic_normal: hn,
        harmonic_tangential: ht,
        euler_characteristic: chi,
        euler_from_betti: chi_b,
        lefschetz: lef,
        long_exact_defect: les,
        warnings,
        passed,
    })
}

/// Oriented closed edge loop through the boundary edges whose endpoints
/// satisfy `pick`, as a 1-chain (±1 per edge). Errors unless the picked
/// edges form exactly one cycle.
pub fn boundary_loop(c: &SimplicialComplex, pick: impl Fn([f64; 3]) -> bool) -> Result<DVector<f64>> {
    let edges: Vec<usize> = c
        .boundary_indices(1)
        .into_iter()
        .filter(|&e| c.simplex(1, e).iter().all(|&v| pick(c.vertex(v))))
        .collect();
    if edges.is_empty() {
        return Err(Error::Precondition("no boundary edges selected for the loop".into()));
    }
    let mut chain = DVector::zeros(c.num_simplices(1));
    let mut used = vec![false; edges.len()];
    let start = c.simplex(1, edges[0])[0];
    let mut at = start;
    for _ in 0..edges.len() {
        let next = (0..edges.len()).find(|&i| !used[i] && c.simplex(1, edges[i]).contains(&at));
        let Some(i) = next else {
            return Err(Error::Precondition("selected edges do not form a single cycle".into()));
        };
        used[i] = true;
        let s = c.simplex(1, edges[i]);
        // sorted-vertex orientation: s[0] → s[1]
        if s[0] == at {
            chain[edges[i]] = 1.0;
            at = s[1];
        } else {
            chain[edges[i]] = -1.0;
            at = s[0];
        }
    }
    if at != start {
        return Err(Error::Precondition("selected edges do not close".into()));
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate, MeshGeneratorSpec};

    fn disk() -> SimplicialComplex {
        generate(&MeshGeneratorSpec::Disk { radius: 1.0, resolution: 3 }).unwrap()
    }
    fn annulus() -> SimplicialComplex {
        generate(&MeshGeneratorSpec::Annulus { inner_radius: 1.0, outer_radius: 2.0, resolution: 2 }).unwrap()
    }

    /// Rank by floating SVD, as an independent oracle.
    fn float_rank(m: &[Vec<i64>]) -> usize {
        if m.is_empty() || m[0].is_empty() {
            return 0;
        }
        let a = DMatrix::from_fn(m.len(), m[0].len(), |i, j| m[i][j] as f64);
        crate::linalg::numerical_rank(&a, 1e-10)
    }

    #[test]
    fn integer_rank_matches_svd() {
        for c in [disk(), annulus()] {
            for k in 0..c.dim() {
                let m = coboundary_int(&c, k);
                assert_eq!(integer_rank(&m).unwrap(), float_rank(&m));
            }
        }
        assert_eq!(integer_rank(&[vec![2, 4], vec![1, 2]]).unwrap(), 1);
        assert_eq!(integer_rank(&[vec![0, 0]]).unwrap(), 0);
    }

    #[test]
    fn betti_tables() {
        assert_eq!(betti_absolute_all(&disk()).unwrap(), vec![1, 0, 0]);
        assert_eq!(betti_relative_all(&disk()).unwrap(), vec![0, 0, 1]);
        assert_eq!(betti_absolute_all(&annulus()).unwrap(), vec![1, 1, 0]);
        assert_eq!(betti_relative_all(&annulus()).unwrap(), vec![0, 1, 1]);
        let i = generate(&MeshGeneratorSpec::Interval { length: 1.0, resolution: 5 }).unwrap();
        assert_eq!(betti_absolute_all(&i).unwrap(), vec![1, 0]);
        assert_eq!(betti_relative_all(&i).unwrap(), vec![0, 1]);
        assert_eq!(betti_boundary_all(&i).unwrap(), vec![2]);
        assert_eq!(betti_boundary_all(&annulus()).unwrap(), vec![2, 2]);
    }

    #[test]
    fn refinement_keeps_betti_numbers() {
        let a = annulus();
        let r = a.refine().unwrap();
        assert_eq!(betti_absolute_all(&a).unwrap(), betti_absolute_all(&r).unwrap());
        assert_eq!(betti_relative_all(&a).unwrap(), betti_relative_all(&r).unwrap());
    }

    #[test]
    fn report_is_consistent() {
        for c in [disk(), annulus()] {
            let r = cohomology_report(&c).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn harmonic_one_form_circulates_around_the_hole() {
        let a = annulus();
        let h = harmonic_basis(&a, 1, false).unwrap();
        assert_eq!(h.dim(), 1);
        let inner = boundary_loop(&a, |p| (p[0] * p[0] + p[1] * p[1]).sqrt() < 1.5).unwrap();
        let circ = inner.dot(&h.forms.column(0));
        assert!(circ.abs() > 1e-3, "{circ}");
        // the outer circle carries the same circulation up to orientation
        let outer = boundary_loop(&a, |p| (p[0] * p[0] + p[1] * p[1]).sqrt() > 1.5).unwrap();
        let circ2 = outer.dot(&h.forms.column(0));
        assert!((circ.abs() - circ2.abs()).abs() < 1e-9 * circ.abs());
        assert_eq!(harmonic_basis(&disk(), 1, true).unwrap().dim(), 0);
        assert_eq!(harmonic_basis(&disk(), 0, false).unwrap().dim(), 1);
    }
}
