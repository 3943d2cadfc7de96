//! Discrete de Rham complex on the slice: coboundaries, Whitney mass
//! matrices, codifferentials and Hodge Laplacians.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mesh::{dot3, sub3, SimplicialComplex};

/// A cochain of fixed degree.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteForm {
    pub degree: usize,
    pub values: DVector<f64>,
}

impl DiscreteForm {
    pub fn new(c: &SimplicialComplex, degree: usize, values: DVector<f64>) -> Result<Self> {
        if degree > c.dim() {
            return Err(Error::DegreeOutOfRange { degree, lo: 0, hi: c.dim() });
        }
        if values.len() != c.num_simplices(degree) {
            return Err(Error::Precondition(format!(
                "{degree}-form has {} coefficients, mesh has {} simplices",
                values.len(),
                c.num_simplices(degree)
            )));
        }
        Ok(DiscreteForm { degree, values })
    }
    pub fn zeros(c: &SimplicialComplex, degree: usize) -> Self {
        DiscreteForm { degree, values: DVector::zeros(c.num_simplices(degree)) }
    }
}

/// How the degree-0 inner product is assembled. Higher degrees always use
/// the consistent Whitney matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassScheme {
    /// consistent Galerkin mass in every degree
    Whitney,
    /// row-sum lumped vertex mass, consistent elsewhere
    #[default]
    LumpedVertices,
}

pub fn exterior_derivative(c: &SimplicialComplex, k: usize) -> Result<DMatrix<f64>> {
    if k >= c.dim() {
        return Err(Error::DegreeOutOfRange { degree: k, lo: 0, hi: c.dim() - 1 });
    }
    Ok(coboundary(c, k))
}

/// d_k without range checks; returns an empty matrix at the ends of the complex.
pub(crate) fn coboundary(c: &SimplicialComplex, k: usize) -> DMatrix<f64> {
    let rows = c.num_simplices(k + 1);
    let mut d = DMatrix::zeros(rows, c.num_simplices(k));
    for (f, s, sign) in c.incidence(k + 1) {
        d[(s, f)] = sign as f64;
    }
    d
}

/// Inner products ⟨dλ_i, dλ_j⟩ of barycentric gradients on a simplex.
pub(crate) fn gradient_gram(pts: &[[f64; 3]]) -> Option<DMatrix<f64>> {
    let n = pts.len() - 1;
    let e: Vec<[f64; 3]> = (1..=n).map(|i| sub3(pts[i], pts[0])).collect();
    let g = DMatrix::from_fn(n, n, |i, j| dot3(e[i], e[j]));
    let ginv = g.try_inverse()?;
    let mut q = DMatrix::zeros(n + 1, n + 1);
    q.view_mut((1, 1), (n, n)).copy_from(&ginv);
    for i in 1..=n {
        let s: f64 = (1..=n).map(|j| ginv[(i - 1, j - 1)]).sum();
        q[(0, i)] = -s;
        q[(i, 0)] = -s;
    }
    q[(0, 0)] = -(1..=n).map(|i| q[(0, i)]).sum::<f64>();
    Some(q)
}

/// Barycentric gradients as ambient vectors.
pub(crate) fn barycentric_gradients(pts: &[[f64; 3]]) -> Option<Vec<[f64; 3]>> {
    let n = pts.len() - 1;
    let e: Vec<[f64; 3]> = (1..=n).map(|i| sub3(pts[i], pts[0])).collect();
    let g = DMatrix::from_fn(n, n, |i, j| dot3(e[i], e[j]));
    let ginv = g.try_inverse()?;
    let mut grads = vec![[0.0; 3]; n + 1];
    for i in 1..=n {
        for j in 1..=n {
            for a in 0..3 {
                grads[i][a] += ginv[(i - 1, j - 1)] * e[j - 1][a];
            }
        }
    }
    for i in 1..=n {
        for a in 0..3 {
            grads[0][a] -= grads[i][a];
        }
    }
    Some(grads)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

fn local_faces(n: usize, k: usize) -> Vec<Vec<usize>> {
    // sorted (k+1)-subsets of 0..=n
    let mut out = Vec::new();
    let total = n + 1;
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize == k + 1 {
            out.push((0..total).filter(|&i| mask & (1 << i) != 0).collect());
        }
    }
    out.sort();
    out
}

fn det_small(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => 1.0,
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => m.determinant(),
    }
}

/// Consistent Whitney mass matrix of degree k.
pub fn mass_matrix(c: &SimplicialComplex, k: usize) -> Result<DMatrix<f64>> {
    if k > c.dim() {
        return Err(Error::DegreeOutOfRange { degree: k, lo: 0, hi: c.dim() });
    }
    let n = c.dim();
    let nk = c.num_simplices(k);
    let mut m = DMatrix::zeros(nk, nk);
    let lf = local_faces(n, k);
    let kf2 = factorial(k).powi(2);
    for t in 0..c.num_simplices(n) {
        let verts = c.simplex(n, t);
        let pts: Vec<[f64; 3]> = verts.iter().map(|&v| c.vertex(v)).collect();
        let vol = c.volume(n, t);
        if !(vol > 1e-300) {
            return Err(Error::DegenerateSimplex { degree: n, id: t });
        }
        let q = gradient_gram(&pts).ok_or(Error::DegenerateSimplex { degree: n, id: t })?;
        let ll = |i: usize, j: usize| vol * if i == j { 2.0 } else { 1.0 } / ((n + 1) * (n + 2)) as f64;
        let global: Vec<usize> = lf
            .iter()
            .map(|f| {
                let g: Vec<usize> = f.iter().map(|&i| verts[i]).collect();
                c.find_simplex(k, &g).expect("face present")
            })
            .collect();
        for (a, fa) in lf.iter().enumerate() {
            for (b, fb) in lf.iter().enumerate() {
                let mut acc = 0.0;
                for i in 0..=k {
                    for j in 0..=k {
                        let ra: Vec<usize> = fa.iter().enumerate().filter(|&(x, _)| x != i).map(|(_, &v)| v).collect();
                        let rb: Vec<usize> = fb.iter().enumerate().filter(|&(x, _)| x != j).map(|(_, &v)| v).collect();
                        let minor = DMatrix::from_fn(k, k, |p, r| q[(ra[p], rb[r])]);
                        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                        acc += sign * ll(fa[i], fb[j]) * det_small(&minor);
                    }
                }
                m[(global[a], global[b])] += kf2 * acc;
            }
        }
    }
    Ok(linalg::symmetrize(&m))
}

pub fn mass_matrix_with(c: &SimplicialComplex, k: usize, scheme: MassScheme) -> Result<DMatrix<f64>> {
    let m = mass_matrix(c, k)?;
    if k == 0 && scheme == MassScheme::LumpedVertices {
        let sums: Vec<f64> = (0..m.nrows()).map(|i| m.row(i).sum()).collect();
        return Ok(DMatrix::from_diagonal(&DVector::from_vec(sums)));
    }
    Ok(m)
}

/// Assembled complex with factorized masses for one mass scheme.
pub struct Dec {
    pub scheme: MassScheme,
    pub n: usize,
    /// d[k]: k-forms -> (k+1)-forms, k in 0..n
    pub d: Vec<DMatrix<f64>>,
    pub mass: Vec<DMatrix<f64>>,
    chol: Vec<Cholesky<f64, Dyn>>,
}

impl Dec {
    pub fn new(c: &SimplicialComplex, scheme: MassScheme) -> Result<Self> {
        let n = c.dim();
        let d = (0..n).map(|k| coboundary(c, k)).collect();
        let mass: Vec<DMatrix<f64>> = (0..=n).map(|k| mass_matrix_with(c, k, scheme)).collect::<Result<_>>()?;
        let chol = mass
            .iter()
            .enumerate()
            .map(|(k, m)| linalg::cholesky(m, &format!("degree-{k} mass matrix")))
            .collect::<Result<_>>()?;
        Ok(Dec { scheme, n, d, mass, chol })
    }

    pub fn dim(&self, k: usize) -> usize {
        self.mass[k].nrows()
    }

    pub fn solve_mass(&self, k: usize, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol[k].solve(rhs)
    }

    pub fn solve_mass_vec(&self, k: usize, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol[k].solve(rhs)
    }

    pub fn mass_inverse(&self, k: usize) -> DMatrix<f64> {
        self.chol[k].inverse()
    }

    /// δ_k = M_{k−1}^{-1} d_{k−1}^T M_k, mapping k-forms to (k−1)-forms.
    pub fn codifferential(&self, k: usize) -> Result<DMatrix<f64>> {
        if k == 0 || k > self.n {
            return Err(Error::DegreeOutOfRange { degree: k, lo: 1, hi: self.n });
        }
        Ok(self.solve_mass(k - 1, &(self.d[k - 1].transpose() * &self.mass[k])))
    }

    /// Stiffness form of the Laplacian: M d M^{-1} d^T M + d^T M d.
    pub fn laplacian_stiffness(&self, k: usize) -> DMatrix<f64> {
        let dim = self.dim(k);
        let mut a = DMatrix::zeros(dim, dim);
        if k >= 1 {
            let b = self.d[k - 1].transpose() * &self.mass[k];
            a += b.transpose() * self.solve_mass(k - 1, &b);
        }
        if k < self.n {
            a += self.d[k].transpose() * &self.mass[k + 1] * &self.d[k];
        }
        linalg::symmetrize(&a)
    }

    /// L_k = d δ + δ d as an operator on k-forms.
    pub fn hodge_laplacian(&self, k: usize) -> Result<DMatrix<f64>> {
        if k > self.n {
            return Err(Error::DegreeOutOfRange { degree: k, lo: 0, hi: self.n });
        }
        Ok(self.solve_mass(k, &self.laplacian_stiffness(k)))
    }

    pub fn inner(&self, k: usize, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&(&self.mass[k] * b))
    }
}

/// δ_k with the default Whitney masses.
pub fn codifferential(c: &SimplicialComplex, k: usize) -> Result<DMatrix<f64>> {
    Dec::new(c, MassScheme::Whitney)?.codifferential(k)
}

pub fn hodge_laplacian(c: &SimplicialComplex, k: usize) -> Result<DMatrix<f64>> {
    Dec::new(c, MassScheme::Whitney)?.hodge_laplacian(k)
}

/// Smooth data fed to the de Rham map.
pub enum Sampler<'a> {
    /// 0-form values, or the density of a top-degree form
    Scalar(&'a dyn Fn([f64; 3]) -> f64),
    /// 1-form given by its metric-dual vector field
    Vector(&'a dyn Fn([f64; 3]) -> [f64; 3]),
}

/// de Rham map: integrate the sampled form over each k-simplex.
pub fn interpolate(c: &SimplicialComplex, k: usize, sampler: &Sampler) -> Result<DiscreteForm> {
    let n = c.dim();
    if k > n {
        return Err(Error::DegreeOutOfRange { degree: k, lo: 0, hi: n });
    }
    let mut v = DVector::zeros(c.num_simplices(k));
    match (k, sampler) {
        (0, Sampler::Scalar(f)) => {
            for i in 0..c.num_vertices() {
                v[i] = f(c.vertex(i));
            }
        }
        (1, Sampler::Vector(f)) => {
            // 3-point Gauss–Legendre along the sorted edge
            let nodes = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
            for e in 0..c.num_simplices(1) {
                let s = c.simplex(1, e);
                let (a, b) = (c.vertex(s[0]), c.vertex(s[1]));
                let t = sub3(b, a);
                let mut acc = 0.0;
                for &(x, w) in &nodes {
                    let u = 0.5 * (x + 1.0);
                    let p = [a[0] + u * t[0], a[1] + u * t[1], a[2] + u * t[2]];
                    acc += 0.5 * w * dot3(f(p), t);
                }
                v[e] = acc;
            }
        }
        (1, Sampler::Scalar(f)) if n == 1 => {
            let g = |p: [f64; 3]| [f(p), 0.0, 0.0];
            return interpolate(c, 1, &Sampler::Vector(&g));
        }
        (kk, Sampler::Scalar(f)) if kk == n => {
            for t in 0..c.num_simplices(n) {
                v[t] = f(c.barycenter(n, t)) * c.volume(n, t) * c.top_orientation(t);
            }
        }
        _ => {
            return Err(Error::Precondition(format!("sampler kind does not match degree {k} on a {n}-complex")));
        }
    }
    Ok(DiscreteForm { degree: k, values: v })
}
