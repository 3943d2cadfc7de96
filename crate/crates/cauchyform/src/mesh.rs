//! Oriented simplicial complexes with boundary, used as the Cauchy slice.
//!
//! Every simplex is stored as its sorted vertex list, which fixes the
//! reference orientation. The orientation of the manifold lives on the top
//! simplices as a sign relative to that reference.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MESH_FORMAT: &str = "cauchyform-mesh-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum MeshGeneratorSpec {
    Interval { length: f64, resolution: usize },
    Rectangle { width: f64, height: f64, resolution: usize },
    Disk { radius: f64, resolution: usize },
    Annulus { inner_radius: f64, outer_radius: f64, resolution: usize },
    CylinderStrip { radius: f64, height: f64, resolution: usize },
}

impl MeshGeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        let res = match *self {
            MeshGeneratorSpec::Interval { length, resolution } => {
                if !(length > 0.0) {
                    return bad("interval length must be positive");
                }
                resolution
            }
            MeshGeneratorSpec::Rectangle { width, height, resolution } => {
                if !(width > 0.0 && height > 0.0) {
                    return bad("rectangle sides must be positive");
                }
                resolution
            }
            MeshGeneratorSpec::Disk { radius, resolution } => {
                if !(radius > 0.0) {
                    return bad("disk radius must be positive");
                }
                resolution
            }
            MeshGeneratorSpec::Annulus { inner_radius, outer_radius, resolution } => {
                if !(inner_radius > 0.0 && outer_radius > 0.0) {
                    return bad("annulus radii must be positive");
                }
                if inner_radius >= outer_radius {
                    return bad("annulus inner radius must be below the outer radius");
                }
                resolution
            }
            MeshGeneratorSpec::CylinderStrip { radius, height, resolution } => {
                if !(radius > 0.0 && height > 0.0) {
                    return bad("cylinder strip radius and height must be positive");
                }
                resolution
            }
        };
        if res < 1 {
            return bad("resolution must be at least 1");
        }
        Ok(())
    }
}

/// Immutable oriented simplicial manifold with boundary, dimension 1 or 2.
#[derive(Clone, Debug)]
pub struct SimplicialComplex {
    dim: usize,
    coords: Vec<[f64; 3]>,
    /// sorted vertex lists, per degree
    simplices: Vec<Vec<Vec<usize>>>,
    lookup: Vec<HashMap<Vec<usize>, usize>>,
    /// top simplices as given (orientation carrying order)
    oriented_top: Vec<Vec<usize>>,
    top_sign: Vec<i8>,
    boundary: Vec<Vec<bool>>,
    /// faces[k][i]: (face index, sign) for k >= 1
    faces: Vec<Vec<Vec<(usize, i8)>>>,
    cofaces: Vec<Vec<Vec<(usize, i8)>>>,
}

fn permutation_sign(tuple: &[usize]) -> i8 {
    let mut s = 1i8;
    for i in 0..tuple.len() {
        for j in i + 1..tuple.len() {
            if tuple[i] > tuple[j] {
                s = -s;
            }
        }
    }
    s
}

impl SimplicialComplex {
    /// Build from vertex coordinates and oriented top simplices, checking
    /// every manifold invariant.
    pub fn from_top_simplices(dim: usize, coords: Vec<[f64; 3]>, tops: Vec<Vec<usize>>) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidSpec(format!("dimension {dim} not supported (1 or 2)")));
        }
        if tops.is_empty() {
            return Err(Error::InvalidSpec("complex has no top simplices".into()));
        }
        let nv = coords.len();
        for (t, s) in tops.iter().enumerate() {
            if s.len() != dim + 1 {
                return Err(Error::Parse(format!("top simplex {t} has {} vertices, expected {}", s.len(), dim + 1)));
            }
            if let Some(&v) = s.iter().find(|&&v| v >= nv) {
                return Err(Error::Parse(format!("top simplex {t} references missing vertex {v}")));
            }
            let set: BTreeSet<_> = s.iter().collect();
            if set.len() != s.len() {
                return Err(Error::Parse(format!("top simplex {t} repeats a vertex")));
            }
        }

        let mut simplices: Vec<Vec<Vec<usize>>> = vec![Vec::new(); dim + 1];
        simplices[0] = (0..nv).map(|v| vec![v]).collect();
        let mut top_sorted = Vec::with_capacity(tops.len());
        let mut top_seen = HashMap::new();
        for (t, s) in tops.iter().enumerate() {
            let mut v = s.clone();
            v.sort_unstable();
            if let Some(prev) = top_seen.insert(v.clone(), t) {
                return Err(Error::InvariantViolation {
                    msg: format!("top simplex {t} duplicates simplex {prev}"),
                    simplex: Some((dim, t)),
                });
            }
            top_sorted.push(v);
        }
        for k in 1..dim {
            let mut set = BTreeSet::new();
            for v in &top_sorted {
                for combo in combinations(v, k + 1) {
                    set.insert(combo);
                }
            }
            simplices[k] = set.into_iter().collect();
        }
        simplices[dim] = top_sorted;

        let lookup: Vec<HashMap<Vec<usize>, usize>> = simplices
            .iter()
            .map(|list| list.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect())
            .collect();

        let mut faces = vec![Vec::new(); dim + 1];
        let mut cofaces: Vec<Vec<Vec<(usize, i8)>>> =
            (0..=dim).map(|k| vec![Vec::new(); simplices[k].len()]).collect();
        for k in 1..=dim {
            let mut fk = Vec::with_capacity(simplices[k].len());
            for (i, s) in simplices[k].iter().enumerate() {
                let mut fl = Vec::with_capacity(k + 1);
                for omit in 0..=k {
                    let face: Vec<usize> = s.iter().enumerate().filter(|&(j, _)| j != omit).map(|(_, &v)| v).collect();
                    let fi = lookup[k - 1][&face];
                    let sign = if omit % 2 == 0 { 1 } else { -1 };
                    fl.push((fi, sign));
                    cofaces[k - 1][fi].push((i, sign));
                }
                fk.push(fl);
            }
            faces[k] = fk;
        }

        for (v, cf) in cofaces[0].iter().enumerate() {
            if cf.is_empty() && dim >= 1 {
                return Err(Error::InvariantViolation {
                    msg: format!("vertex {v} is not used by any simplex"),
                    simplex: Some((0, v)),
                });
            }
        }

        // facets: one or two cofaces
        let mut boundary: Vec<Vec<bool>> = (0..=dim).map(|k| vec![false; simplices[k].len()]).collect();
        for (f, cf) in cofaces[dim - 1].iter().enumerate() {
            match cf.len() {
                1 => boundary[dim - 1][f] = true,
                2 => {}
                c => {
                    return Err(Error::InvariantViolation {
                        msg: format!("non-manifold: {}-simplex {f} {:?} has {c} cofaces", dim - 1, simplices[dim - 1][f]),
                        simplex: Some((dim - 1, f)),
                    })
                }
            }
        }
        if dim == 2 {
            for (e, &b) in boundary[1].clone().iter().enumerate() {
                if b {
                    for &(v, _) in &faces[1][e] {
                        boundary[0][v] = true;
                    }
                }
            }
            // boundary curve must be closed
            for v in 0..simplices[0].len() {
                if !boundary[0][v] {
                    continue;
                }
                let nb = cofaces[0][v].iter().filter(|&&(e, _)| boundary[1][e]).count();
                if nb != 2 {
                    return Err(Error::InvariantViolation {
                        msg: format!("non-manifold boundary: vertex {v} has {nb} boundary edges"),
                        simplex: Some((0, v)),
                    });
                }
            }
        }

        // connectivity over vertices
        let mut parent: Vec<usize> = (0..nv).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for s in &simplices[dim] {
            for w in s.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                parent[a] = b;
            }
        }
        let root = find(&mut parent, 0);
        for v in 0..nv {
            if find(&mut parent, v) != root {
                return Err(Error::InvariantViolation {
                    msg: format!("complex is disconnected (vertex {v})"),
                    simplex: Some((0, v)),
                });
            }
        }

        let top_sign: Vec<i8> = tops.iter().map(|t| permutation_sign(t)).collect();
        let mut c = SimplicialComplex {
            dim,
            coords,
            simplices,
            lookup,
            oriented_top: tops,
            top_sign,
            boundary,
            faces,
            cofaces,
        };
        c.check_orientation()?;
        Ok(c)
    }

    /// Adjacent top simplices must induce opposite orientations on their
    /// shared facet. Propagates an orientation by BFS and names the simplex
    /// on the minority side when the stored signs disagree.
    fn check_orientation(&mut self) -> Result<()> {
        let n = self.dim;
        let nt = self.simplices[n].len();
        let sign_in = |t: usize, f: usize, faces: &Vec<Vec<Vec<(usize, i8)>>>| -> i8 {
            faces[n][t].iter().find(|&&(g, _)| g == f).map(|&(_, s)| s).unwrap()
        };
        let mut propagated: Vec<i8> = vec![0; nt];
        propagated[0] = 1;
        let mut queue = VecDeque::from([0usize]);
        while let Some(t) = queue.pop_front() {
            for &(f, s) in &self.faces[n][t] {
                for &(u, _) in &self.cofaces[n - 1][f] {
                    if u == t {
                        continue;
                    }
                    let want = -propagated[t] * s * sign_in(u, f, &self.faces);
                    if propagated[u] == 0 {
                        propagated[u] = want;
                        queue.push_back(u);
                    } else if propagated[u] != want {
                        return Err(Error::InvariantViolation {
                            msg: format!("non-orientable complex near {n}-simplex {u}"),
                            simplex: Some((n, u)),
                        });
                    }
                }
            }
        }
        let agree: Vec<usize> = (0..nt).filter(|&t| propagated[t] == self.top_sign[t]).collect();
        let disagree: Vec<usize> = (0..nt).filter(|&t| propagated[t] != self.top_sign[t]).collect();
        if !agree.is_empty() && !disagree.is_empty() {
            let bad = if disagree.len() <= agree.len() { disagree[0] } else { agree[0] };
            return Err(Error::InvariantViolation {
                msg: format!(
                    "inconsistent orientation: {n}-simplex {bad} {:?} is flipped relative to its neighbours",
                    self.oriented_top[bad]
                ),
                simplex: Some((n, bad)),
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn num_vertices(&self) -> usize {
        self.coords.len()
    }
    pub fn num_simplices(&self, k: usize) -> usize {
        self.simplices.get(k).map_or(0, |s| s.len())
    }
    pub fn simplex(&self, k: usize, i: usize) -> &[usize] {
        &self.simplices[k][i]
    }
    pub fn simplices(&self, k: usize) -> &[Vec<usize>] {
        &self.simplices[k]
    }
    pub fn find_simplex(&self, k: usize, verts: &[usize]) -> Option<usize> {
        let mut v = verts.to_vec();
        v.sort_unstable();
        self.lookup.get(k)?.get(&v).copied()
    }
    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }
    pub fn vertex(&self, v: usize) -> [f64; 3] {
        self.coords[v]
    }
    pub fn oriented_top(&self) -> &[Vec<usize>] {
        &self.oriented_top
    }
    /// +1 if the stored top simplex agrees with the sorted reference order.
    pub fn top_orientation(&self, t: usize) -> f64 {
        self.top_sign[t] as f64
    }
    pub fn faces(&self, k: usize, i: usize) -> &[(usize, i8)] {
        &self.faces[k][i]
    }
    pub fn cofaces(&self, k: usize, i: usize) -> &[(usize, i8)] {
        &self.cofaces[k][i]
    }
    pub fn is_boundary(&self, k: usize, i: usize) -> bool {
        self.boundary[k][i]
    }
    /// Indices of k-simplices lying in the boundary, ascending.
    pub fn boundary_indices(&self, k: usize) -> Vec<usize> {
        if k >= self.dim {
            return Vec::new();
        }
        (0..self.num_simplices(k)).filter(|&i| self.boundary[k][i]).collect()
    }
    pub fn interior_indices(&self, k: usize) -> Vec<usize> {
        (0..self.num_simplices(k)).filter(|&i| !self.boundary[k][i]).collect()
    }
    /// A simplex touching the boundary shares at least one vertex with it.
    pub fn touches_boundary(&self, k: usize, i: usize) -> bool {
        self.simplices[k][i].iter().any(|&v| self.boundary[0][v])
    }

    pub fn euler_characteristic(&self) -> i64 {
        (0..=self.dim).map(|k| if k % 2 == 0 { 1 } else { -1 } * self.num_simplices(k) as i64).sum()
    }

    /// Signed incidence matrix ∂_k as (row = (k-1)-simplex, col = k-simplex, sign) triplets.
    pub fn incidence(&self, k: usize) -> Vec<(usize, usize, i64)> {
        let mut out = Vec::new();
        if k == 0 || k > self.dim {
            return out;
        }
        for (i, fl) in self.faces[k].iter().enumerate() {
            for &(f, s) in fl {
                out.push((f, i, s as i64));
            }
        }
        out
    }

    /// Dense integer version of ∂_k.
    pub fn incidence_dense(&self, k: usize) -> Vec<Vec<i64>> {
        let rows = if k == 0 { 0 } else { self.num_simplices(k - 1) };
        let mut m = vec![vec![0i64; self.num_simplices(k)]; rows];
        for (r, c, s) in self.incidence(k) {
            m[r][c] = s;
        }
        m
    }

    /// Largest |entry| of ∂_{k−1}∂_k over all k, in exact integers. The
    /// coboundary composite is its transpose.
    pub fn boundary_squared_max(&self) -> i64 {
        let mut worst = 0i64;
        for k in 2..=self.dim {
            let mut acc: HashMap<(usize, usize), i64> = HashMap::new();
            for (i, fl) in self.faces[k].iter().enumerate() {
                for &(f, s) in fl {
                    for &(g, t) in &self.faces[k - 1][f] {
                        *acc.entry((g, i)).or_insert(0) += s as i64 * t as i64;
                    }
                }
            }
            worst = acc.values().fold(worst, |w, v| w.max(v.abs()));
        }
        worst
    }

    /// Unsigned k-volume of a simplex from its Gram determinant.
    pub fn volume(&self, k: usize, i: usize) -> f64 {
        simplex_volume(&self.simplices[k][i].iter().map(|&v| self.coords[v]).collect::<Vec<_>>())
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.num_simplices(self.dim)).map(|t| self.volume(self.dim, t)).sum()
    }

    pub fn barycenter(&self, k: usize, i: usize) -> [f64; 3] {
        let s = &self.simplices[k][i];
        let mut c = [0.0; 3];
        for &v in s {
            for d in 0..3 {
                c[d] += self.coords[v][d] / s.len() as f64;
            }
        }
        c
    }

    /// Longest edge length.
    pub fn mesh_size(&self) -> f64 {
        (0..self.num_simplices(1)).map(|e| self.volume(1, e)).fold(0.0, f64::max)
    }

    /// The boundary as its own complex of dimension n-1. Vertex and simplex
    /// indices refer back to this complex through the returned maps.
    pub fn boundary_complex(&self) -> BoundaryComplex {
        let n = self.dim;
        let per_degree: Vec<Vec<usize>> = (0..n).map(|k| self.boundary_indices(k)).collect();
        BoundaryComplex { dim: n - 1, simplices: per_degree }
    }

    /// Uniform subdivision: edge bisection in 1-D, 4-way split in 2-D.
    pub fn refine(&self) -> Result<Self> {
        let mut coords = self.coords.clone();
        let nv = coords.len();
        for e in &self.simplices[1] {
            let (a, b) = (coords[e[0]], coords[e[1]]);
            coords.push([(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0]);
        }
        let mid = |a: usize, b: usize| nv + self.lookup[1][&sorted2(a, b)];
        let mut tops = Vec::new();
        for t in &self.oriented_top {
            if self.dim == 1 {
                let m = mid(t[0], t[1]);
                tops.push(vec![t[0], m]);
                tops.push(vec![m, t[1]]);
            } else {
                let (a, b, c) = (t[0], t[1], t[2]);
                let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
                tops.push(vec![a, ab, ca]);
                tops.push(vec![ab, b, bc]);
                tops.push(vec![ca, bc, c]);
                tops.push(vec![ab, bc, ca]);
            }
        }
        SimplicialComplex::from_top_simplices(self.dim, coords, tops)
    }

    pub fn refine_times(&self, times: usize) -> Result<Self> {
        let mut c = self.clone();
        for _ in 0..times {
            c = c.refine()?;
        }
        Ok(c)
    }

    pub fn to_file(&self) -> MeshFile {
        MeshFile {
            format: MESH_FORMAT.to_string(),
            dimension: self.dim,
            vertices: self.coords.iter().map(|p| p[..self.ambient_dim()].to_vec()).collect(),
            simplices: self.oriented_top.clone(),
            boundary_vertices: Some(self.boundary_indices(0)),
        }
    }

    /// Number of meaningful coordinates: trailing all-zero axes are dropped.
    pub fn ambient_dim(&self) -> usize {
        if self.coords.iter().any(|p| p[2] != 0.0) {
            3
        } else if self.coords.iter().any(|p| p[1] != 0.0) || self.dim == 2 {
            2
        } else {
            1
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.to_file()).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, s)?;
        Ok(())
    }
}

fn sorted2(a: usize, b: usize) -> Vec<usize> {
    if a < b {
        vec![a, b]
    } else {
        vec![b, a]
    }
}

fn combinations(v: &[usize], r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..r).collect();
    if r > v.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| v[i]).collect());
        let mut i = r;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + v.len() - r {
                break;
            }
            if i == 0 && idx[0] == v.len() - r {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub(crate) fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
pub(crate) fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn simplex_volume(pts: &[[f64; 3]]) -> f64 {
    match pts.len() {
        1 => 1.0,
        2 => dot3(sub3(pts[1], pts[0]), sub3(pts[1], pts[0])).sqrt(),
        3 => {
            let c = cross3(sub3(pts[1], pts[0]), sub3(pts[2], pts[0]));
            0.5 * dot3(c, c).sqrt()
        }
        _ => unreachable!("only simplices up to dimension 2"),
    }
}

/// Boundary subcomplex, indexed by the parent's simplex numbering.
#[derive(Clone, Debug)]
pub struct BoundaryComplex {
    pub dim: usize,
    /// simplices[k] = parent indices of boundary k-simplices
    pub simplices: Vec<Vec<usize>>,
}

impl BoundaryComplex {
    pub fn count(&self, k: usize) -> usize {
        self.simplices.get(k).map_or(0, |s| s.len())
    }
}

/// On-disk mesh representation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshFile {
    pub format: String,
    pub dimension: usize,
    pub vertices: Vec<Vec<f64>>,
    pub simplices: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_vertices: Option<Vec<usize>>,
}

impl MeshFile {
    pub fn into_complex(self) -> Result<SimplicialComplex> {
        if self.format != MESH_FORMAT {
            return Err(Error::Parse(format!("unsupported mesh format '{}', expected '{MESH_FORMAT}'", self.format)));
        }
        let mut coords = Vec::with_capacity(self.vertices.len());
        for (i, v) in self.vertices.iter().enumerate() {
            if v.is_empty() || v.len() > 3 {
                return Err(Error::Parse(format!("vertex {i} has {} coordinates", v.len())));
            }
            let mut p = [0.0; 3];
            p[..v.len()].copy_from_slice(v);
            coords.push(p);
        }
        let c = SimplicialComplex::from_top_simplices(self.dimension, coords, self.simplices)?;
        if let Some(flags) = self.boundary_vertices {
            let mut given = flags;
            given.sort_unstable();
            given.dedup();
            let actual = c.boundary_indices(0);
            if given != actual {
                return Err(Error::InvariantViolation {
                    msg: format!("boundary vertex flags in file {given:?} disagree with recomputed boundary {actual:?}"),
                    simplex: None,
                });
            }
        }
        Ok(c)
    }
}

pub fn load(path: &Path) -> Result<SimplicialComplex> {
    let text = std::fs::read_to_string(path)?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<SimplicialComplex> {
    let f: MeshFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    f.into_complex()
}

pub fn generate(spec: &MeshGeneratorSpec) -> Result<SimplicialComplex> {
    spec.validate()?;
    match *spec {
        MeshGeneratorSpec::Interval { length, resolution } => {
            let coords = (0..=resolution).map(|i| [length * i as f64 / resolution as f64, 0.0, 0.0]).collect();
            let tops = (0..resolution).map(|i| vec![i, i + 1]).collect();
            SimplicialComplex::from_top_simplices(1, coords, tops)
        }
        MeshGeneratorSpec::Rectangle { width, height, resolution } => {
            let n = resolution;
            let mut coords = Vec::new();
            for j in 0..=n {
                for i in 0..=n {
                    coords.push([width * i as f64 / n as f64, height * j as f64 / n as f64, 0.0]);
                }
            }
            let id = |i: usize, j: usize| j * (n + 1) + i;
            let mut tops = Vec::new();
            for j in 0..n {
                for i in 0..n {
                    tops.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                    tops.push(vec![id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
                }
            }
            SimplicialComplex::from_top_simplices(2, coords, tops)
        }
        MeshGeneratorSpec::Disk { radius, resolution } => {
            let r = resolution;
            let mut coords = vec![[0.0, 0.0, 0.0]];
            let mut rings: Vec<Vec<usize>> = Vec::new();
            for i in 1..=r {
                let m = 6 * i;
                let rho = radius * i as f64 / r as f64;
                rings.push(push_ring(&mut coords, m, rho, 0.0));
            }
            let mut tops = Vec::new();
            for a in 0..6 {
                tops.push(vec![0, rings[0][a], rings[0][(a + 1) % 6]]);
            }
            for w in rings.windows(2) {
                zipper(&w[0], &w[1], &mut tops);
            }
            orient_planar(&coords, &mut tops);
            SimplicialComplex::from_top_simplices(2, coords, tops)
        }
        MeshGeneratorSpec::Annulus { inner_radius, outer_radius, resolution } => {
            let h = (outer_radius - inner_radius) / resolution as f64;
            let mut coords = Vec::new();
            let mut rings = Vec::new();
            for j in 0..=resolution {
                let rho = inner_radius + h * j as f64;
                let m = ((2.0 * PI * rho / h).ceil() as usize).max(6);
                rings.push(push_ring(&mut coords, m, rho, 0.0));
            }
            let mut tops = Vec::new();
            for w in rings.windows(2) {
                zipper(&w[0], &w[1], &mut tops);
            }
            orient_planar(&coords, &mut tops);
            SimplicialComplex::from_top_simplices(2, coords, tops)
        }
        MeshGeneratorSpec::CylinderStrip { radius, height, resolution } => {
            let h = height / resolution as f64;
            let m = ((2.0 * PI * radius / h).ceil() as usize).max(6);
            let mut coords = Vec::new();
            let mut rings = Vec::new();
            for j in 0..=resolution {
                let start = coords.len();
                for i in 0..m {
                    let th = 2.0 * PI * i as f64 / m as f64;
                    coords.push([radius * th.cos(), radius * th.sin(), h * j as f64]);
                }
                rings.push((start..start + m).collect::<Vec<_>>());
            }
            let mut tops = Vec::new();
            for w in rings.windows(2) {
                zipper(&w[0], &w[1], &mut tops);
            }
            // outward normal
            for t in tops.iter_mut() {
                let p: Vec<[f64; 3]> = t.iter().map(|&v| coords[v]).collect();
                let nrm = cross3(sub3(p[1], p[0]), sub3(p[2], p[0]));
                let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0, 0.0];
                if dot3(nrm, c) < 0.0 {
                    t.swap(1, 2);
                }
            }
            SimplicialComplex::from_top_simplices(2, coords, tops)
        }
    }
}

fn push_ring(coords: &mut Vec<[f64; 3]>, m: usize, rho: f64, offset: f64) -> Vec<usize> {
    let start = coords.len();
    for i in 0..m {
        let th = offset + 2.0 * PI * i as f64 / m as f64;
        coords.push([rho * th.cos(), rho * th.sin(), 0.0]);
    }
    (start..start + m).collect()
}

/// Triangulate the band between two concentric rings whose vertices are
/// equally spaced in angle starting at angle 0.
fn zipper(inner: &[usize], outer: &[usize], tops: &mut Vec<Vec<usize>>) {
    let (ni, no) = (inner.len(), outer.len());
    let (mut a, mut b) = (0usize, 0usize);
    while a < ni || b < no {
        // compare next angles as fractions of a turn: (b+1)/no vs (a+1)/ni
        let advance_outer = b < no && (a == ni || (b + 1) * ni <= (a + 1) * no);
        if advance_outer {
            tops.push(vec![inner[a % ni], outer[b % no], outer[(b + 1) % no]]);
            b += 1;
        } else {
            tops.push(vec![inner[a % ni], outer[b % no], inner[(a + 1) % ni]]);
            a += 1;
        }
    }
}

fn orient_planar(coords: &[[f64; 3]], tops: &mut [Vec<usize>]) {
    for t in tops.iter_mut() {
        let (p0, p1, p2) = (coords[t[0]], coords[t[1]], coords[t[2]]);
        let area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        if area < 0.0 {
            t.swap(1, 2);
        }
    }
}

/// Count of simplices per degree, for reports.
pub fn simplex_counts(c: &SimplicialComplex) -> BTreeMap<usize, usize> {
    (0..=c.dim()).map(|k| (k, c.num_simplices(k))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn composite_is_zero(c: &SimplicialComplex, k: usize) -> bool {
        let a = c.incidence_dense(k - 1);
        let b = c.incidence_dense(k);
        for row in &a {
            for col in 0..c.num_simplices(k) {
                let s: i64 = row.iter().enumerate().map(|(j, &x)| x * b[j][col]).sum();
                if s != 0 {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn interval_counts_and_boundary() {
        let c = generate(&MeshGeneratorSpec::Interval { length: PI, resolution: 4 }).unwrap();
        assert_eq!(c.num_simplices(0), 5);
        assert_eq!(c.num_simplices(1), 4);
        assert_eq!(c.boundary_indices(0), vec![0, 4]);
    }

    #[test]
    fn euler_characteristics() {
        for r in 1..5 {
            let d = generate(&MeshGeneratorSpec::Disk { radius: 1.0, resolution: r }).unwrap();
            assert_eq!(d.euler_characteristic(), 1);
            assert_eq!(d.num_simplices(2), 6 * r * r);
            let a = generate(&MeshGeneratorSpec::Annulus { inner_radius: 1.0, outer_radius: 2.0, resolution: r }).unwrap();
            assert_eq!(a.euler_characteristic(), 0);
            let s = generate(&MeshGeneratorSpec::CylinderStrip { radius: 1.0, height: 1.0, resolution: r }).unwrap();
            assert_eq!(s.euler_characteristic(), 0);
            let q = generate(&MeshGeneratorSpec::Rectangle { width: 2.0, height: 1.0, resolution: r }).unwrap();
            assert_eq!(q.euler_characteristic(), 1);
        }
    }

    #[test]
    fn boundary_of_boundary_vanishes() {
        let c = generate(&MeshGeneratorSpec::Annulus { inner_radius: 1.0, outer_radius: 2.0, resolution: 2 }).unwrap();
        assert!(composite_is_zero(&c, 2));
        // boundary curve: every boundary vertex has two boundary edges, so
        // the boundary edges' own incidence sums to zero per component
        let mut net = vec![0i64; c.num_vertices()];
        for e in c.boundary_indices(1) {
            for &(v, s) in c.faces(1, e) {
                net[v] += s as i64 * c.top_orientation(c.cofaces(1, e)[0].0) as i64 * c.cofaces(1, e)[0].1 as i64;
            }
        }
        assert!(net.iter().all(|&x| x == 0));
    }

    #[test]
    fn refine_counts() {
        let c = generate(&MeshGeneratorSpec::Interval { length: 1.0, resolution: 4 }).unwrap();
        assert_eq!(c.refine().unwrap().num_simplices(1), 8);
        let d = generate(&MeshGeneratorSpec::Disk { radius: 1.0, resolution: 2 }).unwrap();
        let f = d.num_simplices(2);
        let r = d.refine().unwrap();
        assert_eq!(r.num_simplices(2), 4 * f);
        assert_eq!(r.euler_characteristic(), 1);
        let a = generate(&MeshGeneratorSpec::Annulus { inner_radius: 1.0, outer_radius: 2.0, resolution: 2 }).unwrap();
        assert_eq!(a.refine().unwrap().euler_characteristic(), 0);
    }

    #[test]
    fn round_trip_through_file() {
        let c = generate(&MeshGeneratorSpec::Interval { length: PI, resolution: 4 }).unwrap();
        let text = serde_json::to_string(&c.to_file()).unwrap();
        let back = parse(&text).unwrap();
        assert_eq!(back.simplices(1), c.simplices(1));
        assert_eq!(back.coords(), c.coords());
    }

    #[test]
    fn missing_vertex_is_parse_error() {
        let text = r#"{"format":"cauchyform-mesh-v1","dimension":1,"vertices":[[0.0],[1.0]],"simplices":[[0,1],[1,2]]}"#;
        assert!(matches!(parse(text), Err(Error::Parse(_))));
    }

    #[test]
    fn flipped_triangle_is_named() {
        // fan of four triangles around the origin, third one flipped
        let coords = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]];
        let tops = vec![vec![0, 1, 2], vec![0, 2, 3], vec![0, 4, 3], vec![0, 4, 1]];
        let err = SimplicialComplex::from_top_simplices(2, coords, tops).unwrap_err();
        match err {
            Error::InvariantViolation { simplex, msg } => {
                assert_eq!(simplex, Some((2, 2)), "{msg}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&MeshGeneratorSpec::Annulus { inner_radius: 2.0, outer_radius: 1.0, resolution: 2 }).is_err());
        assert!(generate(&MeshGeneratorSpec::Disk { radius: -1.0, resolution: 2 }).is_err());
        assert!(generate(&MeshGeneratorSpec::Interval { length: 1.0, resolution: 0 }).is_err());
    }
}
