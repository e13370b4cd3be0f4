//! Problem data and discrete forms.
//!
//! This module holds the diffusion problem description (piecewise-constant
//! SPD tensor, load, labeled boundary), assembly of the conforming,
//! interior-penalty, and mixed bilinear forms, and the lifted discrete
//! gradient that the error estimators consume.

use crate::fem::{Family, FeSpace};
use crate::linalg::SparseMatrix;
use crate::mesh::{Bc, Mesh};
use crate::poly;
use crate::quadrature::{self, form_degree, DATA_DEGREE};
use crate::{Error, Result};
use nalgebra::{DVector, Matrix3, Point3, Vector3};

/// Per-region coefficient data derived once from the SPD tensor.
#[derive(Debug, Clone)]
pub struct CoeffData {
    pub a: Matrix3<f64>,
    pub a_inv: Matrix3<f64>,
    /// Smallest and largest eigenvalues of `a`.
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl CoeffData {
    fn new(a: Matrix3<f64>) -> Result<CoeffData> {
        let defect = (a - a.transpose()).norm();
        if defect > 1e-12 * a.norm().max(1.0) {
            return Err(Error::InvalidArgument("diffusion tensor must be symmetric".into()));
        }
        let a = (a + a.transpose()) / 2.0;
        let eig = a.symmetric_eigen();
        let alpha_min = eig.eigenvalues.min();
        let alpha_max = eig.eigenvalues.max();
        if alpha_min <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "diffusion tensor must be positive definite (eigenvalue {alpha_min:.3e})"
            )));
        }
        let a_inv = a.try_inverse().expect("positive definite tensor is invertible");
        Ok(CoeffData { a, a_inv, alpha_min, alpha_max })
    }
}

/// Diffusion tensor: one constant matrix, or one per mesh region.
#[derive(Debug, Clone)]
pub enum Coefficient {
    Constant(Matrix3<f64>),
    PerRegion(Vec<Matrix3<f64>>),
}

impl Coefficient {
    pub fn identity() -> Coefficient {
        Coefficient::Constant(Matrix3::identity())
    }
}

/// The diffusion problem: -div(A grad u) = f with u = 0 on the Dirichlet
/// part and A grad u . n = 0 on the Neumann part.
pub struct Problem<'a> {
    pub mesh: &'a Mesh,
    pub load: &'a dyn Fn(&Point3<f64>) -> f64,
    data: Vec<CoeffData>,
    per_region: bool,
}

impl<'a> Problem<'a> {
    pub fn new(
        mesh: &'a Mesh,
        coeff: Coefficient,
        load: &'a dyn Fn(&Point3<f64>) -> f64,
    ) -> Result<Problem<'a>> {
        let mut has_dirichlet = false;
        for f in 0..mesh.n_faces() {
            if mesh.is_boundary_face(f) {
                match mesh.faces[f].label {
                    None => {
                        return Err(Error::InvalidArgument(format!(
                            "boundary face {f} carries no label"
                        )))
                    }
                    Some(Bc::Dirichlet) => has_dirichlet = true,
                    Some(Bc::Neumann) => {}
                }
            }
        }
        if !has_dirichlet {
            return Err(Error::InvalidArgument(
                "the Dirichlet boundary part must contain at least one face".into(),
            ));
        }
        let (data, per_region) = match coeff {
            Coefficient::Constant(a) => (vec![CoeffData::new(a)?], false),
            Coefficient::PerRegion(list) => {
                let data = list.into_iter().map(CoeffData::new).collect::<Result<Vec<_>>>()?;
                for &r in &mesh.regions {
                    if r as usize >= data.len() {
                        return Err(Error::InvalidArgument(format!(
                            "mesh region {r} has no coefficient entry"
                        )));
                    }
                }
                (data, true)
            }
        };
        Ok(Problem { mesh, load, data, per_region })
    }

    /// Coefficient data on element k.
    pub fn coef(&self, k: usize) -> &CoeffData {
        if self.per_region {
            &self.data[self.mesh.regions[k] as usize]
        } else {
            &self.data[0]
        }
    }

    /// Largest eigenvalue of A over the elements adjacent to face f.
    pub fn face_alpha_max(&self, f: usize) -> f64 {
        let (lo, hi) = self.mesh.faces[f].tets;
        let mut a = self.coef(lo).alpha_max;
        if let Some(hi) = hi {
            a = a.max(self.coef(hi).alpha_max);
        }
        a
    }

    /// Smallest eigenvalue of A over an element set.
    pub fn alpha_min_over(&self, tets: &[usize]) -> f64 {
        tets.iter().map(|&k| self.coef(k).alpha_min).fold(f64::INFINITY, f64::min)
    }

    /// Largest eigenvalue of A over an element set.
    pub fn alpha_max_over(&self, tets: &[usize]) -> f64 {
        tets.iter().map(|&k| self.coef(k).alpha_max).fold(0.0, f64::max)
    }
}

/// Active/constrained dof bookkeeping: a monotone embedding of the active
/// dofs into the full numbering.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub n_full: usize,
    pub active: Vec<usize>,
    pub to_active: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(n_full: usize, constrained: &[usize]) -> DofMap {
        let mut is_constrained = vec![false; n_full];
        for &c in constrained {
            is_constrained[c] = true;
        }
        let mut active = Vec::with_capacity(n_full - constrained.len().min(n_full));
        let mut to_active = vec![None; n_full];
        for i in 0..n_full {
            if !is_constrained[i] {
                to_active[i] = Some(active.len());
                active.push(i);
            }
        }
        DofMap { n_full, active, to_active }
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn restrict(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.active.len(), |i, _| v[self.active[i]])
    }

    /// Scatter back to the full numbering with zeros on constrained dofs.
    pub fn expand(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_full);
        for (i, &gid) in self.active.iter().enumerate() {
            out[gid] = v[i];
        }
        out
    }
}

/// Drop constrained rows and columns of a sparse matrix.
pub fn restrict_matrix(m: &SparseMatrix, rows: &DofMap, cols: &DofMap) -> SparseMatrix {
    let mut tri = Vec::new();
    m.for_each_entry(|r, c, v| {
        if let (Some(r), Some(c)) = (rows.to_active[r], cols.to_active[c]) {
            tri.push((r, c, v));
        }
    });
    SparseMatrix::from_triplets(rows.n_active(), cols.n_active(), tri)
}

/// Integrate a function over the mesh with the given quadrature degree.
pub fn integrate(mesh: &Mesh, qdeg: usize, f: &mut dyn FnMut(usize, &Point3<f64>) -> f64) -> f64 {
    let rule = quadrature::tet_rule(qdeg);
    let mut total = 0.0;
    for k in 0..mesh.n_tets() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        for (x, w) in pts.iter().zip(&wts) {
            total += w * f(k, x);
        }
    }
    total
}

fn require_scalar(sp: &FeSpace) -> Result<()> {
    if !sp.is_scalar() {
        return Err(Error::InvalidArgument("expected a scalar space".into()));
    }
    Ok(())
}

/// (A grad u, grad v) over the whole mesh, for Lagrange or broken spaces.
pub fn stiffness(pb: &Problem, sp: &FeSpace) -> Result<SparseMatrix> {
    require_scalar(sp)?;
    let mesh = pb.mesh;
    let rule = quadrature::tet_rule(form_degree(sp.degree));
    let dim = sp.element_dim();
    let mut tri = Vec::with_capacity(mesh.n_tets() * dim * dim);
    for k in 0..mesh.n_tets() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let tab = sp.scalar_tab(k, &pts);
        let a = &pb.coef(k).a;
        let ids = &sp.element_dofs[k];
        for i in 0..dim {
            for j in 0..dim {
                let mut v = 0.0;
                for q in 0..pts.len() {
                    v += wts[q] * (a * tab.grad[q][j]).dot(&tab.grad[q][i]);
                }
                tri.push((ids[i], ids[j], v));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(sp.n_dofs, sp.n_dofs, tri))
}

/// Load functional (f, v) for a scalar space, with data-grade quadrature.
pub fn load_vector(pb: &Problem, sp: &FeSpace) -> Result<DVector<f64>> {
    require_scalar(sp)?;
    let mesh = pb.mesh;
    let rule = quadrature::tet_rule(DATA_DEGREE.max(form_degree(sp.degree)));
    let mut out = DVector::zeros(sp.n_dofs);
    for k in 0..mesh.n_tets() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let tab = sp.scalar_tab(k, &pts);
        let ids = &sp.element_dofs[k];
        for (q, x) in pts.iter().enumerate() {
            let fv = (pb.load)(x) * wts[q];
            for (j, &gid) in ids.iter().enumerate() {
                out[gid] += fv * tab.val[q][j];
            }
        }
    }
    Ok(out)
}

/// Moment functional (A g, grad v_i) of a broken vector field against the
/// gradients of a scalar space.
pub fn weighted_gradient_load(
    pb: &Problem,
    sp: &FeSpace,
    g: &GradientField,
) -> Result<DVector<f64>> {
    require_scalar(sp)?;
    let mesh = pb.mesh;
    let rule = quadrature::tet_rule(form_degree(sp.degree.max(g.degree() + 1)));
    let mut out = DVector::zeros(sp.n_dofs);
    for k in 0..mesh.n_tets() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let tab = sp.scalar_tab(k, &pts);
        let gv = g.value(k, &pts);
        let a = &pb.coef(k).a;
        let ids = &sp.element_dofs[k];
        for q in 0..pts.len() {
            let ag = (a * gv[q]) * wts[q];
            for (j, &gid) in ids.iter().enumerate() {
                out[gid] += ag.dot(&tab.grad[q][j]);
            }
        }
    }
    Ok(out)
}

/// Moment functional (g, v_i) of a broken vector field against a vector
/// space basis.
pub fn field_load(mesh: &Mesh, sp: &FeSpace, g: &GradientField) -> Result<DVector<f64>> {
    if sp.is_scalar() {
        return Err(Error::InvalidArgument("expected a vector space".into()));
    }
    let rule = quadrature::tet_rule(form_degree(sp.degree.max(g.degree())));
    let mut out = DVector::zeros(sp.n_dofs);
    for k in 0..mesh.n_tets() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let tab = sp.vector_tab(k, &pts);
        let gv = g.value(k, &pts);
        let ids = &sp.element_dofs[k];
        for q in 0..pts.len() {
            let gw = gv[q] * wts[q];
            for (j, &gid) in ids.iter().enumerate() {
                out[gid] += gw.dot(&tab.val[q][j]);
            }
        }
    }
    Ok(out)
}

/// Weighted vector mass matrix (W v_j, v_i) with W = A or W = A^{-1}.
pub fn weighted_vector_mass(pb: &Problem, sp: &FeSpace, inverse: bool) -> Result<SparseMatrix> {
    if sp.is_scalar() {
        return Err(Error::InvalidArgument("expected a vector space".into()));
    }
    let mesh = pb.mesh;
    let rule = quadrature::tet_rule(form_degree(sp.degree));
    let dim = sp.element_dim();
    let mut tri = Vec::with_capacity(mesh.n_tets() * dim * dim);
    for k in 0..mesh.n_tets() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let tab = sp.vector_tab(k, &pts);
        let cd = pb.coef(k);
        let w = if inverse { &cd.a_inv } else { &cd.a };
        let ids = &sp.element_dofs[k];
        for i in 0..dim {
            for j in 0..dim {
                let mut v = 0.0;
                for q in 0..pts.len() {
                    v += wts[q] * (w * tab.val[q][j]).dot(&tab.val[q][i]);
                }
                tri.push((ids[i], ids[j], v));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(sp.n_dofs, sp.n_dofs, tri))
}

/// Pairing (div v_j, q_i) between a flux space (columns) and a broken
/// pressure space (rows).
pub fn div_pairing(mesh: &Mesh, flux: &FeSpace, pressure: &FeSpace) -> Result<SparseMatrix> {
    if flux.is_scalar() || !pressure.is_scalar() {
        return Err(Error::InvalidArgument("div pairing needs flux x pressure spaces".into()));
    }
    let rule = quadrature::tet_rule(form_degree(flux.degree));
    let nf = flux.element_dim();
    let np = pressure.element_dim();
    let mut tri = Vec::with_capacity(mesh.n_tets() * nf * np);
    for k in 0..mesh.n_tets() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let ftab = flux.vector_tab(k, &pts);
        let ptab = pressure.scalar_tab(k, &pts);
        let fids = &flux.element_dofs[k];
        let pids = &pressure.element_dofs[k];
        for i in 0..np {
            for j in 0..nf {
                let mut v = 0.0;
                for q in 0..pts.len() {
                    v += wts[q] * ftab.div[q][j] * ptab.val[q][i];
                }
                tri.push((pids[i], fids[j], v));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(pressure.n_dofs, flux.n_dofs, tri))
}

/// Values of the scalar jump [u] = u_lower - u_higher (the trace on
/// boundary faces) at given points of face f.
pub fn scalar_jump(
    mesh: &Mesh,
    sp: &FeSpace,
    u: &DVector<f64>,
    f: usize,
    pts: &[Point3<f64>],
) -> Vec<f64> {
    let (lo, hi) = mesh.faces[f].tets;
    let (mut vals, _) = sp.scalar_field(lo, pts, u);
    if let Some(hi) = hi {
        let (vhi, _) = sp.scalar_field(hi, pts, u);
        for (a, b) in vals.iter_mut().zip(&vhi) {
            *a -= b;
        }
    }
    vals
}

/// Interior-penalty stiffness matrix on a broken space: volume diffusion,
/// symmetric consistency terms on interior and Dirichlet faces, and the
/// face penalty beta alpha_max p^2 / h_F. Neumann faces carry no terms.
pub fn sipg_matrix(pb: &Problem, sp: &FeSpace, beta: f64) -> Result<SparseMatrix> {
    if sp.family != Family::Broken {
        return Err(Error::InvalidArgument("interior penalty assembly needs a broken space".into()));
    }
    if beta <= 0.0 {
        return Err(Error::InvalidArgument("penalty parameter must be positive".into()));
    }
    let mesh = pb.mesh;
    let p = sp.degree;
    let dim = sp.element_dim();

    let mut tri = Vec::new();
    let rule = quadrature::tet_rule(form_degree(p));
    for k in 0..mesh.n_tets() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let tab = sp.scalar_tab(k, &pts);
        let a = &pb.coef(k).a;
        let ids = &sp.element_dofs[k];
        for i in 0..dim {
            for j in 0..dim {
                let mut v = 0.0;
                for q in 0..pts.len() {
                    v += wts[q] * (a * tab.grad[q][j]).dot(&tab.grad[q][i]);
                }
                tri.push((ids[i], ids[j], v));
            }
        }
    }

    let frule = quadrature::tri_rule(form_degree(p));
    for f in 0..mesh.n_faces() {
        let face = &mesh.faces[f];
        let interior = face.tets.1.is_some();
        if !interior && face.label != Some(Bc::Dirichlet) {
            continue;
        }
        let (pts, wts) = mesh.face_quadrature(f, &frule);
        let n = face.normal;
        let pen = beta * pb.face_alpha_max(f) * (p as f64).powi(2) / face.h;
        let avg = if interior { 0.5 } else { 1.0 };
        let mut sides = vec![(face.tets.0, 1.0f64)];
        if let Some(hi) = face.tets.1 {
            sides.push((hi, -1.0));
        }
        let tabs: Vec<_> = sides.iter().map(|&(k, _)| sp.scalar_tab(k, &pts)).collect();
        for (su, &(ku, sgn_u)) in sides.iter().enumerate() {
            let au = &pb.coef(ku).a;
            for (sv, &(kv, sgn_v)) in sides.iter().enumerate() {
                let av = &pb.coef(kv).a;
                let idu = &sp.element_dofs[ku];
                let idv = &sp.element_dofs[kv];
                for i in 0..dim {
                    for j in 0..dim {
                        let mut val = 0.0;
                        for q in 0..pts.len() {
                            let w = wts[q];
                            let uj = tabs[su].val[q][j];
                            let vi = tabs[sv].val[q][i];
                            // Penalty ([u], [v]).
                            val += w * pen * sgn_u * sgn_v * uj * vi;
                            // -([u], {A grad v} . n)
                            val -= w * sgn_u * avg * uj * (av * tabs[sv].grad[q][i]).dot(&n);
                            // -([v], {A grad u} . n)
                            val -= w * sgn_v * avg * vi * (au * tabs[su].grad[q][j]).dot(&n);
                        }
                        tri.push((idv[i], idu[j], val));
                    }
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(sp.n_dofs, sp.n_dofs, tri))
}

/// A piecewise-polynomial vector field stored componentwise in a broken
/// scalar space. This is the common representation of every discrete
/// gradient handed to the estimators.
pub struct GradientField {
    pub space: FeSpace,
    pub comp: [DVector<f64>; 3],
}

impl GradientField {
    pub fn zeros(mesh: &Mesh, degree: usize) -> Result<GradientField> {
        let space = FeSpace::new(mesh, Family::Broken, degree)?;
        let n = space.n_dofs;
        Ok(GradientField { space, comp: [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)] })
    }

    pub fn degree(&self) -> usize {
        self.space.degree
    }

    pub fn value(&self, k: usize, pts: &[Point3<f64>]) -> Vec<Vector3<f64>> {
        let tab = self.space.scalar_tab(k, pts);
        let ids = &self.space.element_dofs[k];
        (0..pts.len())
            .map(|q| {
                let mut v = Vector3::zeros();
                for (j, &gid) in ids.iter().enumerate() {
                    v += Vector3::new(self.comp[0][gid], self.comp[1][gid], self.comp[2][gid])
                        * tab.val[q][j];
                }
                v
            })
            .collect()
    }

    /// Jacobian J with J[(i, j)] = d w_i / d x_j.
    pub fn jacobian(&self, k: usize, pts: &[Point3<f64>]) -> Vec<Matrix3<f64>> {
        let tab = self.space.scalar_tab(k, pts);
        let ids = &self.space.element_dofs[k];
        (0..pts.len())
            .map(|q| {
                let mut jmat = Matrix3::zeros();
                for (j, &gid) in ids.iter().enumerate() {
                    let g = tab.grad[q][j];
                    for i in 0..3 {
                        let ci = self.comp[i][gid];
                        for d in 0..3 {
                            jmat[(i, d)] += ci * g[d];
                        }
                    }
                }
                jmat
            })
            .collect()
    }

    pub fn curl(&self, k: usize, pts: &[Point3<f64>]) -> Vec<Vector3<f64>> {
        self.jacobian(k, pts)
            .into_iter()
            .map(|j| {
                Vector3::new(j[(2, 1)] - j[(1, 2)], j[(0, 2)] - j[(2, 0)], j[(1, 0)] - j[(0, 1)])
            })
            .collect()
    }

    /// self += c * other; the spaces must have identical layout.
    pub fn axpy(&mut self, c: f64, other: &GradientField) {
        assert_eq!(self.space.n_dofs, other.space.n_dofs);
        assert_eq!(self.space.degree, other.space.degree);
        for i in 0..3 {
            self.comp[i] += c * &other.comp[i];
        }
    }
}

/// L2 projection of a pointwise-evaluable vector field onto broken
/// polynomials of the given degree; exact when the field is already
/// piecewise polynomial of that degree and the quadrature covers it.
pub fn project_vector_field(
    mesh: &Mesh,
    degree: usize,
    qdeg: usize,
    g: &dyn Fn(usize, &Point3<f64>) -> Vector3<f64>,
) -> Result<GradientField> {
    let mut field = GradientField::zeros(mesh, degree)?;
    let rule = quadrature::tet_rule(qdeg.max(form_degree(degree)));
    for k in 0..mesh.n_tets() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let tab = field.space.scalar_tab(k, &pts);
        let ids: Vec<usize> = field.space.element_dofs[k].clone();
        for (q, x) in pts.iter().enumerate() {
            let gv = g(k, x) * wts[q];
            for (j, &gid) in ids.iter().enumerate() {
                let phi = tab.val[q][j];
                for c in 0..3 {
                    field.comp[c][gid] += gv[c] * phi;
                }
            }
        }
    }
    Ok(field)
}

/// Elementwise gradient of a scalar field, represented exactly: the
/// gradient of degree-p polynomials lies in broken P_{p-1}^3.
pub fn broken_gradient(mesh: &Mesh, sp: &FeSpace, u: &DVector<f64>) -> Result<GradientField> {
    require_scalar(sp)?;
    let mut field = GradientField::zeros(mesh, sp.degree.saturating_sub(1))?;
    let rule = quadrature::tet_rule(form_degree(sp.degree));
    for k in 0..mesh.n_tets() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let (_, grads) = sp.scalar_field(k, &pts, u);
        let tab = field.space.scalar_tab(k, &pts);
        let ids: Vec<usize> = field.space.element_dofs[k].clone();
        for q in 0..pts.len() {
            let gw = grads[q] * wts[q];
            for (j, &gid) in ids.iter().enumerate() {
                let phi = tab.val[q][j];
                for c in 0..3 {
                    field.comp[c][gid] += gw[c] * phi;
                }
            }
        }
    }
    Ok(field)
}

/// Discrete gradient of a broken scalar field: the broken gradient plus the
/// jump lifting. The lifting L(u) lies in broken polynomials of degree
/// `lifting_degree` (default p-1) and is defined against every test field w
/// of that degree by (L(u), w) = -sum_F ([u], {w} . n_F) over interior and
/// Dirichlet faces, with {w} the usual average (the trace on the boundary).
///
/// The orthonormal broken basis is ordered by polynomial degree, so the
/// leading dim P_l functions span exactly P_l; lifting moments are taken
/// against that leading block only.
pub fn lifted_gradient(
    mesh: &Mesh,
    sp: &FeSpace,
    u: &DVector<f64>,
    lifting_degree: Option<usize>,
) -> Result<GradientField> {
    if sp.family != Family::Broken {
        return Err(Error::InvalidArgument("lifted gradients act on broken fields".into()));
    }
    let p = sp.degree;
    let ell = lifting_degree.unwrap_or(p.saturating_sub(1));
    if ell + 1 > p {
        return Err(Error::InvalidArgument(
            "lifting degree above p-1 leaves the broken gradient unrepresented".into(),
        ));
    }
    let mut field = broken_gradient(mesh, sp, u)?;

    // Jump lifting: direct moments against the leading orthonormal block.
    let n_lift = poly::dim_p3(ell);
    let frule = quadrature::tri_rule(form_degree(p));
    for f in 0..mesh.n_faces() {
        let face = &mesh.faces[f];
        let interior = face.tets.1.is_some();
        if !interior && face.label != Some(Bc::Dirichlet) {
            continue;
        }
        let (pts, wts) = mesh.face_quadrature(f, &frule);
        let jump = scalar_jump(mesh, sp, u, f, &pts);
        let n = face.normal;
        let avg = if interior { 0.5 } else { 1.0 };
        let mut sides = vec![face.tets.0];
        if let Some(hi) = face.tets.1 {
            sides.push(hi);
        }
        for &k in &sides {
            let tab = field.space.scalar_tab(k, &pts);
            let ids = &field.space.element_dofs[k];
            for j in 0..n_lift {
                let mut m = 0.0;
                for q in 0..pts.len() {
                    m += wts[q] * jump[q] * tab.val[q][j];
                }
                let gid = ids[j];
                for c in 0..3 {
                    field.comp[c][gid] -= avg * n[c] * m;
                }
            }
        }
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{label_all_dirichlet, label_x_dirichlet};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn quadratic_load(_: &Point3<f64>) -> f64 {
        2.0
    }

    #[test]
    fn problem_validation() {
        let mut mesh = Mesh::structured_cube(1).unwrap();
        let f = |_: &Point3<f64>| 0.0;
        assert!(Problem::new(&mesh, Coefficient::identity(), &f).is_err());
        mesh.label_boundary(|_, _| Bc::Neumann);
        assert!(Problem::new(&mesh, Coefficient::identity(), &f).is_err());
        label_all_dirichlet(&mut mesh);
        assert!(Problem::new(&mesh, Coefficient::identity(), &f).is_ok());
        let bad = Matrix3::from_diagonal(&Vector3::new(1.0, -2.0, 1.0));
        assert!(Problem::new(&mesh, Coefficient::Constant(bad), &f).is_err());
    }

    #[test]
    fn dof_map_round_trips() {
        let map = DofMap::new(6, &[1, 4]);
        assert_eq!(map.n_active(), 4);
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = map.restrict(&v);
        assert_eq!(r.as_slice(), &[1.0, 3.0, 4.0, 6.0]);
        let e = map.expand(&r);
        assert_eq!(e.as_slice(), &[1.0, 0.0, 3.0, 4.0, 0.0, 6.0]);
    }

    #[test]
    fn lifting_satisfies_defining_identity() {
        let mut mesh = Mesh::structured_cube(2).unwrap();
        crate::mesh::label_x_neumann(&mut mesh);
        let mut rng = StdRng::seed_from_u64(50);
        for p in [1usize, 2] {
            for ell in 0..p {
                let sp = FeSpace::new(&mesh, Family::Broken, p).unwrap();
                let u = DVector::from_fn(sp.n_dofs, |_, _| rng.gen_range(-1.0..1.0));
                // Isolate the lifting by subtracting the broken gradient.
                let mut lift = lifted_gradient(&mesh, &sp, &u, Some(ell)).unwrap();
                let proj = broken_gradient(&mesh, &sp, &u).unwrap();
                lift.axpy(-1.0, &proj);

                // Random test field w in broken P_ell^3, stored in the same
                // degree p-1 layout via the leading orthonormal block.
                let mut w = GradientField::zeros(&mesh, p - 1).unwrap();
                let nl = poly::dim_p3(ell);
                for k in 0..mesh.n_tets() {
                    for (j, &gid) in w.space.element_dofs[k].iter().enumerate() {
                        if j < nl {
                            for c in 0..3 {
                                w.comp[c][gid] = rng.gen_range(-1.0..1.0);
                            }
                        }
                    }
                }

                let rule = quadrature::tet_rule(form_degree(p));
                let mut lhs = 0.0;
                for k in 0..mesh.n_tets() {
                    let (pts, wts) = mesh.tet_quadrature(k, &rule);
                    let lv = lift.value(k, &pts);
                    let wv = w.value(k, &pts);
                    for q in 0..pts.len() {
                        lhs += wts[q] * lv[q].dot(&wv[q]);
                    }
                }

                // Independent face quadrature of -([u], {w} . n).
                let frule = quadrature::tri_rule(2 * p + 5);
                let mut rhs = 0.0;
                for fc in 0..mesh.n_faces() {
                    let face = &mesh.faces[fc];
                    let interior = face.tets.1.is_some();
                    if !interior && face.label != Some(Bc::Dirichlet) {
                        continue;
                    }
                    let (pts, wts) = mesh.face_quadrature(fc, &frule);
                    let jump = scalar_jump(&mesh, &sp, &u, fc, &pts);
                    let wlo = w.value(face.tets.0, &pts);
                    let whi = face.tets.1.map(|hi| w.value(hi, &pts));
                    for q in 0..pts.len() {
                        let avg = match &whi {
                            Some(whi) => (wlo[q] + whi[q]) / 2.0,
                            None => wlo[q],
                        };
                        rhs -= wts[q] * jump[q] * avg.dot(&face.normal);
                    }
                }
                assert!(
                    (lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs().max(rhs.abs())),
                    "p={p} ell={ell}: lifting moment {lhs} vs face integral {rhs}"
                );
            }
        }
    }

    #[test]
    fn sipg_matrix_is_symmetric_and_positive() {
        let mut mesh = Mesh::structured_cube(1).unwrap();
        label_all_dirichlet(&mut mesh);
        let f = quadratic_load;
        let pb = Problem::new(&mesh, Coefficient::identity(), &f).unwrap();
        let sp = FeSpace::new(&mesh, Family::Broken, 1).unwrap();
        let a = sipg_matrix(&pb, &sp, 10.0).unwrap();
        assert!(a.symmetry_defect() <= 1e-12 * a.max_abs());
        assert!(a.to_dense().cholesky().is_some(), "penalty 10 gives a positive form");
    }

    #[test]
    fn div_pairing_matches_direct_quadrature() {
        let mesh = Mesh::structured_cube(2).unwrap();
        let mut rng = StdRng::seed_from_u64(51);
        let flux = FeSpace::new(&mesh, Family::RaviartThomas, 2).unwrap();
        let press = FeSpace::new(&mesh, Family::Broken, 1).unwrap();
        let b = div_pairing(&mesh, &flux, &press).unwrap();
        let sig = DVector::from_fn(flux.n_dofs, |_, _| rng.gen_range(-1.0..1.0));
        let q = DVector::from_fn(press.n_dofs, |_, _| rng.gen_range(-1.0..1.0));
        let via_matrix = q.dot(&b.matvec(&sig));
        let rule = quadrature::tet_rule(7);
        let mut direct = 0.0;
        for k in 0..mesh.n_tets() {
            let (pts, wts) = mesh.tet_quadrature(k, &rule);
            let divs = flux.vector_field(k, &pts, &sig).1;
            let (qv, _) = press.scalar_field(k, &pts, &q);
            for i in 0..pts.len() {
                direct += wts[i] * divs[i] * qv[i];
            }
        }
        assert!((via_matrix - direct).abs() < 1e-11 * (1.0 + direct.abs()));
    }

    #[test]
    fn weighted_norms_agree_with_pointwise_identity() {
        // ||A w||_{A^{-1}} = ||w||_A, checked through the stored A and A^{-1}.
        let mut mesh = Mesh::structured_cube(2).unwrap();
        label_x_dirichlet(&mut mesh);
        let f = |_: &Point3<f64>| 0.0;
        let a = Matrix3::new(2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 3.0);
        let pb = Problem::new(&mesh, Coefficient::Constant(a), &f).unwrap();
        let mut rng = StdRng::seed_from_u64(52);
        let w = {
            let mut g = GradientField::zeros(&mesh, 1).unwrap();
            for c in 0..3 {
                g.comp[c] = DVector::from_fn(g.space.n_dofs, |_, _| rng.gen_range(-1.0..1.0));
            }
            g
        };
        let rule = quadrature::tet_rule(4);
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for k in 0..mesh.n_tets() {
            let (pts, wts) = mesh.tet_quadrature(k, &rule);
            let vals = w.value(k, &pts);
            let cd = pb.coef(k);
            for q in 0..pts.len() {
                let aw = cd.a * vals[q];
                lhs += wts[q] * (cd.a_inv * aw).dot(&aw);
                rhs += wts[q] * (cd.a * vals[q]).dot(&vals[q]);
            }
        }
        assert!((lhs - rhs).abs() < 1e-12 * rhs.abs());
        let cd = pb.coef(0);
        assert!(cd.alpha_min > 0.0 && cd.alpha_max >= cd.alpha_min);
    }
}
