//! Finite element spaces on tetrahedral meshes.
//!
//! Four families are provided: continuous Lagrange elements, broken
//! (discontinuous) polynomials with an elementwise L2-orthonormal basis,
//! Raviart-Thomas H(div) elements, and first-kind Nedelec H(curl) elements.
//!
//! Basis functions are polynomials in physical coordinates, expressed through
//! the generators of [`gen`] in the element-local variable y = (x - x0)/h.
//! Each element basis is produced numerically: the matrix of degrees of
//! freedom applied to generators is inverted (pseudo-inverted for the
//! redundant Nedelec generator list), which makes the basis nodal by
//! construction.
//!
//! All degree-of-freedom functionals are defined on global entities with
//! globally computed frames (face normals and tangents, edge tangents,
//! lattice points), so two elements sharing an entity agree on the
//! functional without any sign or permutation bookkeeping. Conformity of the
//! assembled spaces (continuity of traces, normal traces, or tangential
//! traces) follows from that convention and is exercised by the tests.

pub mod gen;

use crate::mesh::{Bc, Mesh, LOCAL_EDGES};
use crate::poly;
use crate::quadrature::{self, form_degree, LineRule, TetRule, TriRule, DATA_DEGREE};
use crate::{Error, Result};
use gen::Gen;
use nalgebra::{DMatrix, DVector, Point3, Vector3};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Lagrange,
    Broken,
    RaviartThomas,
    Nedelec,
}

impl Family {
    pub fn is_scalar(&self) -> bool {
        matches!(self, Family::Lagrange | Family::Broken)
    }
}

/// Global identity of a degree of freedom: the mesh entity it lives on and
/// its index within that entity's block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DofKey {
    Vertex(usize),
    Edge(usize, usize),
    Face(usize, usize),
    Cell(usize, usize),
}

/// The functional itself. Moments are normalized by the entity measure and
/// use entity-local scaled coordinates, so all values stay O(1).
#[derive(Debug, Clone)]
pub enum DofFunc {
    /// Point evaluation (Lagrange).
    Point { x: Point3<f64> },
    /// (1/|F|) int_F (v . n_F) m(xhat) dS with xhat the in-plane coordinate
    /// of the global face frame scaled by the face diameter.
    FaceNormalMoment { face: usize, m: [usize; 2] },
    /// (1/|F|) int_F (v . t_dir) m(xhat) dS, dir in {0, 1} selecting t1/t2.
    FaceTangentMoment { face: usize, dir: usize, m: [usize; 2] },
    /// (1/|l|) int_l (v . tau) shat^m ds with shat the centered arc-length
    /// coordinate scaled by the edge length.
    EdgeMoment { edge: usize, m: usize },
    /// (1/|K|) int_K (v . e_k) m(yhat) dx with yhat the element-local
    /// coordinate of element `elem`.
    CellAxisMoment { elem: usize, k: usize, m: [usize; 3] },
    /// Coefficient against the elementwise orthonormal broken basis; never
    /// applied as an integral functional.
    BrokenCoefficient,
}

#[derive(Debug, Clone)]
pub struct Dof {
    pub key: DofKey,
    pub func: DofFunc,
}

pub(crate) struct RuleSet {
    pub tet: TetRule,
    pub tri: TriRule,
    pub line: LineRule,
}

impl RuleSet {
    pub fn new(degree: usize) -> RuleSet {
        RuleSet {
            tet: quadrature::tet_rule(degree),
            tri: quadrature::tri_rule(degree),
            line: quadrature::line_rule(degree),
        }
    }
}

/// Apply one vector dof functional to a batch of n functions. `eval` fills
/// the values of all n functions at a requested point.
pub(crate) fn apply_vector_dof(
    mesh: &Mesh,
    func: &DofFunc,
    rules: &RuleSet,
    n: usize,
    eval: &mut dyn FnMut(&Point3<f64>, &mut [Vector3<f64>]),
) -> Vec<f64> {
    let mut row = vec![0.0; n];
    let mut buf = vec![Vector3::zeros(); n];
    match *func {
        DofFunc::Point { .. } => unreachable!("point evaluation is a scalar functional"),
        DofFunc::BrokenCoefficient => unreachable!("broken coefficients are not integrals"),
        DofFunc::FaceNormalMoment { face, m } => {
            let fc = &mesh.faces[face];
            let (pts, wts) = mesh.face_quadrature(face, &rules.tri);
            for (x, w) in pts.iter().zip(&wts) {
                let (u, v) = mesh.face_local(face, x);
                let s = w * poly::eval2(m, u, v) / fc.area;
                eval(x, &mut buf);
                for j in 0..n {
                    row[j] += s * buf[j].dot(&fc.normal);
                }
            }
        }
        DofFunc::FaceTangentMoment { face, dir, m } => {
            let fc = &mesh.faces[face];
            let t = if dir == 0 { fc.t1 } else { fc.t2 };
            let (pts, wts) = mesh.face_quadrature(face, &rules.tri);
            for (x, w) in pts.iter().zip(&wts) {
                let (u, v) = mesh.face_local(face, x);
                let s = w * poly::eval2(m, u, v) / fc.area;
                eval(x, &mut buf);
                for j in 0..n {
                    row[j] += s * buf[j].dot(&t);
                }
            }
        }
        DofFunc::EdgeMoment { edge, m } => {
            let ed = &mesh.edges[edge];
            let (pts, wts) = mesh.edge_quadrature(edge, &rules.line);
            for (x, w) in pts.iter().zip(&wts) {
                let s = w * mesh.edge_local(edge, x).powi(m as i32) / ed.length;
                eval(x, &mut buf);
                for j in 0..n {
                    row[j] += s * buf[j].dot(&ed.tangent);
                }
            }
        }
        DofFunc::CellAxisMoment { elem, k, m } => {
            let g = &mesh.geom[elem];
            let (pts, wts) = mesh.tet_quadrature(elem, &rules.tet);
            for (x, w) in pts.iter().zip(&wts) {
                let yhat = (x - g.centroid) / g.h;
                let s = w * poly::eval3(m, &yhat) / g.volume;
                eval(x, &mut buf);
                for j in 0..n {
                    row[j] += s * buf[j][k];
                }
            }
        }
    }
    row
}

/// One element's basis: generators, the coefficient matrix mapping basis
/// index to generator weights, and the local frame.
#[derive(Debug, Clone)]
pub struct ElementBasis {
    pub gens: Vec<Gen>,
    /// n_gens x n_basis; column j holds the generator weights of basis j.
    pub coef: DMatrix<f64>,
    pub x0: Point3<f64>,
    pub h: f64,
}

/// Tabulated scalar basis values, indexed `[point][basis]`.
pub struct ScalarTab {
    pub val: Vec<Vec<f64>>,
    pub grad: Vec<Vec<Vector3<f64>>>,
}

/// Tabulated vector basis values, indexed `[point][basis]`.
pub struct VectorTab {
    pub val: Vec<Vec<Vector3<f64>>>,
    pub div: Vec<Vec<f64>>,
    pub curl: Vec<Vec<Vector3<f64>>>,
}

impl ElementBasis {
    pub fn n_basis(&self) -> usize {
        self.coef.ncols()
    }

    pub fn scalar_tab(&self, pts: &[Point3<f64>]) -> ScalarTab {
        let ng = self.gens.len();
        let nb = self.n_basis();
        let mut val = Vec::with_capacity(pts.len());
        let mut grad = Vec::with_capacity(pts.len());
        for x in pts {
            let y = (x - self.x0) / self.h;
            let gv: Vec<(f64, Vector3<f64>)> =
                self.gens.iter().map(|g| g.scalar(&y, self.h)).collect();
            let mut vrow = vec![0.0; nb];
            let mut grow = vec![Vector3::zeros(); nb];
            for j in 0..nb {
                for i in 0..ng {
                    let c = self.coef[(i, j)];
                    if c != 0.0 {
                        vrow[j] += c * gv[i].0;
                        grow[j] += c * gv[i].1;
                    }
                }
            }
            val.push(vrow);
            grad.push(grow);
        }
        ScalarTab { val, grad }
    }

    pub fn vector_tab(&self, pts: &[Point3<f64>]) -> VectorTab {
        let ng = self.gens.len();
        let nb = self.n_basis();
        let mut val = Vec::with_capacity(pts.len());
        let mut div = Vec::with_capacity(pts.len());
        let mut curl = Vec::with_capacity(pts.len());
        for x in pts {
            let y = (x - self.x0) / self.h;
            let gv: Vec<(Vector3<f64>, f64, Vector3<f64>)> =
                self.gens.iter().map(|g| g.vector(&y, self.h)).collect();
            let mut vrow = vec![Vector3::zeros(); nb];
            let mut drow = vec![0.0; nb];
            let mut crow = vec![Vector3::zeros(); nb];
            for j in 0..nb {
                for i in 0..ng {
                    let c = self.coef[(i, j)];
                    if c != 0.0 {
                        vrow[j] += c * gv[i].0;
                        drow[j] += c * gv[i].1;
                        crow[j] += c * gv[i].2;
                    }
                }
            }
            val.push(vrow);
            div.push(drow);
            curl.push(crow);
        }
        VectorTab { val, div, curl }
    }
}

/// Per-entity dof multiplicities [vertex, edge, face, cell] of a family.
fn multiplicities(family: Family, degree: usize) -> [usize; 4] {
    let p = degree;
    match family {
        Family::Lagrange => [
            1,
            p - 1,
            if p >= 3 { poly::dim_p2(p - 3) } else { 0 },
            if p >= 4 { poly::dim_p3(p - 4) } else { 0 },
        ],
        Family::Broken => [0, 0, 0, poly::dim_p3(p)],
        Family::RaviartThomas => {
            [0, 0, poly::dim_p2(p - 1), if p >= 2 { 3 * poly::dim_p3(p - 2) } else { 0 }]
        }
        Family::Nedelec => [
            0,
            p,
            if p >= 2 { 2 * poly::dim_p2(p - 2) } else { 0 },
            if p >= 3 { 3 * poly::dim_p3(p - 3) } else { 0 },
        ],
    }
}

fn element_dof_list(mesh: &Mesh, k: usize, family: Family, degree: usize) -> Vec<Dof> {
    let t = &mesh.tets[k];
    let p = degree;
    let vx = |i: usize| mesh.vertices[t[i]];
    let mut dofs = Vec::new();
    match family {
        Family::Lagrange => {
            for i in 0..4 {
                dofs.push(Dof { key: DofKey::Vertex(t[i]), func: DofFunc::Point { x: vx(i) } });
            }
            if p >= 2 {
                for (le, (a, b)) in LOCAL_EDGES.iter().enumerate() {
                    let e = mesh.tet_edges[k][le];
                    for j in 1..p {
                        let x = Point3::from(
                            (vx(*a).coords * (p - j) as f64 + vx(*b).coords * j as f64) / p as f64,
                        );
                        dofs.push(Dof { key: DofKey::Edge(e, j - 1), func: DofFunc::Point { x } });
                    }
                }
            }
            if p >= 3 {
                for lf in 0..4 {
                    let f = mesh.tet_faces[k][lf];
                    let fv = mesh.faces[f].v;
                    let mut intra = 0;
                    for wb in 1..=p - 2 {
                        for wc in 1..=p - 1 - wb {
                            let wa = p - wb - wc;
                            let x = Point3::from(
                                (mesh.vertices[fv[0]].coords * wa as f64
                                    + mesh.vertices[fv[1]].coords * wb as f64
                                    + mesh.vertices[fv[2]].coords * wc as f64)
                                    / p as f64,
                            );
                            dofs.push(Dof { key: DofKey::Face(f, intra), func: DofFunc::Point { x } });
                            intra += 1;
                        }
                    }
                }
            }
            if p >= 4 {
                let mut intra = 0;
                for w1 in 1..=p - 3 {
                    for w2 in 1..=p - 2 - w1 {
                        for w3 in 1..=p - 1 - w1 - w2 {
                            let w0 = p - w1 - w2 - w3;
                            let x = Point3::from(
                                (vx(0).coords * w0 as f64
                                    + vx(1).coords * w1 as f64
                                    + vx(2).coords * w2 as f64
                                    + vx(3).coords * w3 as f64)
                                    / p as f64,
                            );
                            dofs.push(Dof { key: DofKey::Cell(k, intra), func: DofFunc::Point { x } });
                            intra += 1;
                        }
                    }
                }
            }
        }
        Family::Broken => {
            for j in 0..poly::dim_p3(p) {
                dofs.push(Dof { key: DofKey::Cell(k, j), func: DofFunc::BrokenCoefficient });
            }
        }
        Family::RaviartThomas => {
            for lf in 0..4 {
                let f = mesh.tet_faces[k][lf];
                for (j, m) in poly::multi_indices_2d(p - 1).into_iter().enumerate() {
                    dofs.push(Dof {
                        key: DofKey::Face(f, j),
                        func: DofFunc::FaceNormalMoment { face: f, m },
                    });
                }
            }
            if p >= 2 {
                let mut intra = 0;
                for kk in 0..3 {
                    for m in poly::multi_indices_3d(p - 2) {
                        dofs.push(Dof {
                            key: DofKey::Cell(k, intra),
                            func: DofFunc::CellAxisMoment { elem: k, k: kk, m },
                        });
                        intra += 1;
                    }
                }
            }
        }
        Family::Nedelec => {
            for le in 0..6 {
                let e = mesh.tet_edges[k][le];
                for j in 0..p {
                    dofs.push(Dof { key: DofKey::Edge(e, j), func: DofFunc::EdgeMoment { edge: e, m: j } });
                }
            }
            if p >= 2 {
                for lf in 0..4 {
                    let f = mesh.tet_faces[k][lf];
                    let mut intra = 0;
                    for dir in 0..2 {
                        for m in poly::multi_indices_2d(p - 2) {
                            dofs.push(Dof {
                                key: DofKey::Face(f, intra),
                                func: DofFunc::FaceTangentMoment { face: f, dir, m },
                            });
                            intra += 1;
                        }
                    }
                }
            }
            if p >= 3 {
                let mut intra = 0;
                for kk in 0..3 {
                    for m in poly::multi_indices_3d(p - 3) {
                        dofs.push(Dof {
                            key: DofKey::Cell(k, intra),
                            func: DofFunc::CellAxisMoment { elem: k, k: kk, m },
                        });
                        intra += 1;
                    }
                }
            }
        }
    }
    dofs
}

fn build_element(
    mesh: &Mesh,
    k: usize,
    family: Family,
    degree: usize,
    rules: &RuleSet,
) -> Result<(ElementBasis, Vec<Dof>)> {
    let g = &mesh.geom[k];
    let (x0, h) = (g.centroid, g.h);
    let dofs = element_dof_list(mesh, k, family, degree);
    let gens = match family {
        Family::Lagrange | Family::Broken => gen::scalar_generators(degree),
        Family::RaviartThomas => gen::rt_generators(degree),
        Family::Nedelec => gen::nedelec_generators(degree),
    };
    let ng = gens.len();

    if family == Family::Broken {
        // Orthonormalize the monomials in L2(K): Gram = L L^T, basis = G L^{-T}.
        let (pts, wts) = mesh.tet_quadrature(k, &rules.tet);
        let mut gram = DMatrix::zeros(ng, ng);
        for (x, w) in pts.iter().zip(&wts) {
            let y = (x - x0) / h;
            let gv: Vec<f64> = gens.iter().map(|g| g.scalar(&y, h).0).collect();
            for i in 0..ng {
                for j in 0..ng {
                    gram[(i, j)] += w * gv[i] * gv[j];
                }
            }
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Invariant("broken Gram matrix not positive definite".into()))?;
        let lt = chol.l().transpose();
        let coef = lt
            .solve_upper_triangular(&DMatrix::identity(ng, ng))
            .ok_or_else(|| Error::Invariant("broken Gram factor not invertible".into()))?;
        return Ok((ElementBasis { gens, coef, x0, h }, dofs));
    }

    let nd = dofs.len();
    let mut dmat = DMatrix::zeros(nd, ng);
    for (i, d) in dofs.iter().enumerate() {
        match &d.func {
            DofFunc::Point { x } => {
                let y = (x - x0) / h;
                for (j, g) in gens.iter().enumerate() {
                    dmat[(i, j)] = g.scalar(&y, h).0;
                }
            }
            func => {
                let row = apply_vector_dof(mesh, func, rules, ng, &mut |x, buf| {
                    let y = (x - x0) / h;
                    for (j, g) in gens.iter().enumerate() {
                        buf[j] = g.vector(&y, h).0;
                    }
                });
                for (j, v) in row.into_iter().enumerate() {
                    dmat[(i, j)] = v;
                }
            }
        }
    }

    let coef = if ng == nd && family != Family::Nedelec {
        dmat.clone()
            .lu()
            .solve(&DMatrix::identity(nd, nd))
            .ok_or_else(|| Error::Invariant(format!("singular dof matrix on element {k}")))?
    } else {
        dmat.clone()
            .svd(true, true)
            .pseudo_inverse(1e-10)
            .map_err(|e| Error::Invariant(format!("dof matrix pseudo-inverse failed: {e}")))?
    };
    // Nodality check: dofs applied to the constructed basis give the identity.
    let resid = {
        let mut r = &dmat * &coef;
        for i in 0..nd {
            r[(i, i)] -= 1.0;
        }
        r.amax()
    };
    if resid > 5e-9 {
        return Err(Error::Invariant(format!(
            "element {k} basis is not nodal: residual {resid:.2e}"
        )));
    }
    Ok((ElementBasis { gens, coef, x0, h }, dofs))
}

/// A finite element space over the whole mesh: element bases plus the global
/// dof numbering (entity-major: vertices, edges, faces, cells, each block
/// ordered by entity id).
pub struct FeSpace {
    pub family: Family,
    pub degree: usize,
    pub n_dofs: usize,
    pub elements: Vec<ElementBasis>,
    /// Per element: local basis index to global dof id.
    pub element_dofs: Vec<Vec<usize>>,
    /// Per global dof: its key and functional.
    pub dofs: Vec<Dof>,
    mults: [usize; 4],
    bases: [usize; 4],
}

impl FeSpace {
    pub fn new(mesh: &Mesh, family: Family, degree: usize) -> Result<FeSpace> {
        let ok = match family {
            Family::Lagrange => (1..=4).contains(&degree),
            Family::Broken => degree <= 4,
            Family::RaviartThomas | Family::Nedelec => (1..=3).contains(&degree),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "unsupported degree {degree} for {family:?}"
            )));
        }
        let mults = multiplicities(family, degree);
        let bases = [
            0,
            mesh.n_vertices() * mults[0],
            mesh.n_vertices() * mults[0] + mesh.n_edges() * mults[1],
            mesh.n_vertices() * mults[0] + mesh.n_edges() * mults[1] + mesh.n_faces() * mults[2],
        ];
        let n_dofs = bases[3] + mesh.n_tets() * mults[3];
        let key_to_id = |key: &DofKey| -> usize {
            match *key {
                DofKey::Vertex(v) => bases[0] + v * mults[0],
                DofKey::Edge(e, i) => bases[1] + e * mults[1] + i,
                DofKey::Face(f, i) => bases[2] + f * mults[2] + i,
                DofKey::Cell(c, i) => bases[3] + c * mults[3] + i,
            }
        };

        let rules = RuleSet::new(form_degree(degree));
        let mut elements = Vec::with_capacity(mesh.n_tets());
        let mut element_dofs = Vec::with_capacity(mesh.n_tets());
        let mut dofs: Vec<Option<Dof>> = vec![None; n_dofs];
        for k in 0..mesh.n_tets() {
            let (basis, local) = build_element(mesh, k, family, degree, &rules)?;
            let ids: Vec<usize> = local
                .iter()
                .map(|d| {
                    let id = key_to_id(&d.key);
                    if dofs[id].is_none() {
                        dofs[id] = Some(d.clone());
                    }
                    id
                })
                .collect();
            elements.push(basis);
            element_dofs.push(ids);
        }
        let dofs = dofs
            .into_iter()
            .map(|d| d.ok_or_else(|| Error::Invariant("unreached global dof".into())))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeSpace { family, degree, n_dofs, elements, element_dofs, dofs, mults, bases })
    }

    pub fn is_scalar(&self) -> bool {
        self.family.is_scalar()
    }

    /// Basis functions per element (uniform over the mesh).
    pub fn element_dim(&self) -> usize {
        self.elements[0].n_basis()
    }

    pub fn key_to_id(&self, key: &DofKey) -> usize {
        match *key {
            DofKey::Vertex(v) => self.bases[0] + v * self.mults[0],
            DofKey::Edge(e, i) => self.bases[1] + e * self.mults[1] + i,
            DofKey::Face(f, i) => self.bases[2] + f * self.mults[2] + i,
            DofKey::Cell(c, i) => self.bases[3] + c * self.mults[3] + i,
        }
    }

    pub fn local_index(&self, k: usize, gid: usize) -> Option<usize> {
        self.element_dofs[k].iter().position(|&g| g == gid)
    }

    /// Lowest-indexed element adjacent to the entity carrying the dof.
    pub fn dof_owner(&self, mesh: &Mesh, gid: usize) -> usize {
        match self.dofs[gid].key {
            DofKey::Vertex(v) => mesh.vertex_tets[v][0],
            DofKey::Edge(e, _) => mesh.edge_tets[e][0],
            DofKey::Face(f, _) => mesh.faces[f].tets.0,
            DofKey::Cell(c, _) => c,
        }
    }

    /// Dofs attached to the closure of the given faces (their vertices and
    /// edges included). Zeroing them removes the matching trace: full trace
    /// for Lagrange, normal trace for Raviart-Thomas, tangential trace for
    /// Nedelec. Sorted ascending.
    pub fn dofs_on_faces(&self, mesh: &Mesh, faces: &[usize]) -> Vec<usize> {
        let fset: BTreeSet<usize> = faces.iter().copied().collect();
        let mut eset = BTreeSet::new();
        let mut vset = BTreeSet::new();
        for &f in &fset {
            for e in mesh.face_edges(f) {
                eset.insert(e);
            }
            for v in mesh.faces[f].v {
                vset.insert(v);
            }
        }
        self.dofs
            .iter()
            .enumerate()
            .filter(|(_, d)| match d.key {
                DofKey::Vertex(v) => vset.contains(&v),
                DofKey::Edge(e, _) => eset.contains(&e),
                DofKey::Face(f, _) => fset.contains(&f),
                DofKey::Cell(..) => false,
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Dofs on the closure of the boundary part with the given label.
    pub fn dofs_on_label(&self, mesh: &Mesh, label: Bc) -> Vec<usize> {
        self.dofs_on_faces(mesh, &mesh.labeled_faces(label))
    }

    /// Sorted global dofs reachable from the given elements.
    pub fn patch_dofs(&self, tets: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = tets.iter().flat_map(|&k| self.element_dofs[k].iter().copied()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn scalar_tab(&self, k: usize, pts: &[Point3<f64>]) -> ScalarTab {
        self.elements[k].scalar_tab(pts)
    }

    pub fn vector_tab(&self, k: usize, pts: &[Point3<f64>]) -> VectorTab {
        self.elements[k].vector_tab(pts)
    }

    /// Value and gradient of a scalar field on element k.
    pub fn scalar_field(
        &self,
        k: usize,
        pts: &[Point3<f64>],
        u: &DVector<f64>,
    ) -> (Vec<f64>, Vec<Vector3<f64>>) {
        let tab = self.scalar_tab(k, pts);
        let ids = &self.element_dofs[k];
        let mut vals = Vec::with_capacity(pts.len());
        let mut grads = Vec::with_capacity(pts.len());
        for p in 0..pts.len() {
            let mut v = 0.0;
            let mut g = Vector3::zeros();
            for (j, &gid) in ids.iter().enumerate() {
                v += u[gid] * tab.val[p][j];
                g += u[gid] * tab.grad[p][j];
            }
            vals.push(v);
            grads.push(g);
        }
        (vals, grads)
    }

    /// Value, divergence, and curl of a vector field on element k.
    pub fn vector_field(
        &self,
        k: usize,
        pts: &[Point3<f64>],
        u: &DVector<f64>,
    ) -> (Vec<Vector3<f64>>, Vec<f64>, Vec<Vector3<f64>>) {
        let tab = self.vector_tab(k, pts);
        let ids = &self.element_dofs[k];
        let mut vals = Vec::with_capacity(pts.len());
        let mut divs = Vec::with_capacity(pts.len());
        let mut curls = Vec::with_capacity(pts.len());
        for p in 0..pts.len() {
            let mut v = Vector3::zeros();
            let mut d = 0.0;
            let mut c = Vector3::zeros();
            for (j, &gid) in ids.iter().enumerate() {
                v += u[gid] * tab.val[p][j];
                d += u[gid] * tab.div[p][j];
                c += u[gid] * tab.curl[p][j];
            }
            vals.push(v);
            divs.push(d);
            curls.push(c);
        }
        (vals, divs, curls)
    }

    /// Nodal interpolation of a scalar function. The function receives an
    /// owner element for each evaluation point, so discrete fields can be
    /// interpolated as well.
    pub fn interpolate_scalar(
        &self,
        mesh: &Mesh,
        f: &dyn Fn(usize, &Point3<f64>) -> f64,
    ) -> Result<DVector<f64>> {
        if self.family != Family::Lagrange {
            return Err(Error::InvalidArgument(
                "scalar interpolation is defined for the Lagrange family".into(),
            ));
        }
        let mut out = DVector::zeros(self.n_dofs);
        for gid in 0..self.n_dofs {
            let owner = self.dof_owner(mesh, gid);
            match &self.dofs[gid].func {
                DofFunc::Point { x } => out[gid] = f(owner, x),
                _ => unreachable!(),
            }
        }
        Ok(out)
    }

    /// Nodal interpolation of a vector function through the moment
    /// functionals, evaluated with data-grade quadrature.
    pub fn interpolate_vector(
        &self,
        mesh: &Mesh,
        f: &dyn Fn(usize, &Point3<f64>) -> Vector3<f64>,
    ) -> Result<DVector<f64>> {
        if self.is_scalar() {
            return Err(Error::InvalidArgument(
                "vector interpolation needs a vector family".into(),
            ));
        }
        let rules = RuleSet::new(DATA_DEGREE);
        let mut out = DVector::zeros(self.n_dofs);
        for gid in 0..self.n_dofs {
            let owner = self.dof_owner(mesh, gid);
            let row = apply_vector_dof(mesh, &self.dofs[gid].func, &rules, 1, &mut |x, buf| {
                buf[0] = f(owner, x);
            });
            out[gid] = row[0];
        }
        Ok(out)
    }

    /// Elementwise L2 projection onto a broken space; exactness is limited
    /// by the given quadrature degree.
    pub fn project_broken(
        &self,
        mesh: &Mesh,
        quad_degree: usize,
        f: &dyn Fn(usize, &Point3<f64>) -> f64,
    ) -> Result<DVector<f64>> {
        if self.family != Family::Broken {
            return Err(Error::InvalidArgument("projection target must be a broken space".into()));
        }
        let rule = quadrature::tet_rule(quad_degree.max(2 * self.degree));
        let mut out = DVector::zeros(self.n_dofs);
        for k in 0..mesh.n_tets() {
            let (pts, wts) = mesh.tet_quadrature(k, &rule);
            let tab = self.scalar_tab(k, &pts);
            for (p, w) in wts.iter().enumerate() {
                let fv = f(k, &pts[p]);
                for (j, &gid) in self.element_dofs[k].iter().enumerate() {
                    out[gid] += w * fv * tab.val[p][j];
                }
            }
        }
        Ok(out)
    }
}
