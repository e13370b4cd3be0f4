//! Equilibrated estimators.
//!
//! Two reconstructions feed these indicators.  A curl-free potential is
//! built in three stages of local constrained minimizations: per vertex, a
//! divergence-free correction approximating grad(hat) x g in a
//! Raviart-Thomas patch space; per vertex and element, a lifting of that
//! correction's hat-weighted normal trace, which removes it from the sum;
//! per vertex, a Nedelec field with prescribed elementwise curl.  The sum of
//! the Nedelec fields is tangentially conforming and curl-free, with zero
//! tangential trace on the Dirichlet part.  For the penalty scheme a
//! divergence-conforming flux with div sigma = (elementwise projection of f)
//! and zero normal trace on the Neumann part is equilibrated on the same
//! patches.  The resulting bound is constant-free.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Point3, Vector3};

use super::residual::data_oscillation_sq;
use super::EstimatorReport;
use crate::assembly::{div_pairing, field_load, restrict_matrix, DofMap, GradientField, Problem};
use crate::fem::{DofFunc, DofKey, Family, FeSpace};
use crate::linalg::{self, ConstrainedQuadratic};
use crate::mesh::{Bc, FreeTrace, Mesh};
use crate::poly;
use crate::quadrature::{self, form_degree, DATA_DEGREE};
use crate::schemes::{SchemeOutput, Solution};
use crate::{Error, Result};

/// Ceiling for patch-solve residuals and conformity defects, relative.
pub const PATCH_TOL: f64 = 1e-9;

/// Outcome of one constrained patch minimization.
#[derive(Debug, Clone)]
pub struct PatchSolveInfo {
    pub stage: &'static str,
    /// Seed entity of the patch: a vertex here, an edge for the edge fluxes.
    pub seed: usize,
    pub nullspace_dim: usize,
    pub constraint_residual: f64,
    pub stationarity_residual: f64,
}

/// Curl-free potential and, for the penalty scheme, an equilibrated flux.
pub struct Reconstruction {
    /// Data degree the stages were run at.
    pub degree: usize,
    /// Nedelec space carrying the potential.
    pub potential_space: FeSpace,
    pub potential: DVector<f64>,
    /// Raviart-Thomas space carrying the flux, when one was built.
    pub flux_space: Option<FeSpace>,
    pub flux: Option<DVector<f64>>,
    pub info: Vec<PatchSolveInfo>,
}

/// The hypothesis behind both reconstructions: the gradient has no moment
/// against divergence-free lowest-order Raviart-Thomas fields with zero
/// normal trace on the Neumann part.
pub fn verify_gradient_orthogonality(pb: &Problem, g: &GradientField) -> Result<()> {
    let mesh = pb.mesh;
    let rt1 = FeSpace::new(mesh, Family::RaviartThomas, 1)?;
    let p0 = FeSpace::new(mesh, Family::Broken, 0)?;
    let constrained = rt1.dofs_on_label(mesh, Bc::Neumann);
    let cols = DofMap::new(rt1.n_dofs, &constrained);
    let rows = DofMap::new(p0.n_dofs, &[]);
    let b = restrict_matrix(&div_pairing(mesh, &rt1, &p0)?, &rows, &cols);
    let kernel = linalg::nullspace(&b.to_dense(), 1e-12);
    let moments = cols.restrict(&field_load(mesh, &rt1, g)?);
    let viol = kernel.transpose() * &moments;
    let scale = 1.0 + moments.norm();
    for j in 0..viol.nrows() {
        if viol[j].abs() > PATCH_TOL * scale {
            return Err(Error::Compatibility(format!(
                "gradient carries moment {:.3e} against divergence-free test field {} \
                 (scale {:.3e}); the reconstruction hypothesis fails",
                viol[j], j, scale
            )));
        }
    }
    Ok(())
}

/// Spaces and per-element data shared by every patch solve.
struct Ctx<'p, 'a> {
    pb: &'p Problem<'a>,
    g: &'p GradientField,
    /// Lagrange hats, one dof per vertex.
    hats: FeSpace,
    /// Stage one space, RT_{q+1}.
    rt_a: FeSpace,
    /// Stage two space, RT_{q+2}.
    rt_b: FeSpace,
    /// Stage three space, N_{q+2}.
    ned: FeSpace,
    /// Orthonormal scalars of degree q (stage one divergence rows).
    onb_q: FeSpace,
    /// Orthonormal scalars of degree q+1 (stage two divergence rows).
    onb_q1: FeSpace,
    /// Per element: coefficient columns of an L2-orthonormal basis of the
    /// divergence-free subspace of P_{q+1}^3, over the onb_q1 vector basis
    /// (row index 3*m + component).
    solenoidal: Vec<DMatrix<f64>>,
}

impl<'p, 'a> Ctx<'p, 'a> {
    fn new(pb: &'p Problem<'a>, g: &'p GradientField, q: usize) -> Result<Ctx<'p, 'a>> {
        let mesh = pb.mesh;
        let hats = FeSpace::new(mesh, Family::Lagrange, 1)?;
        let rt_a = FeSpace::new(mesh, Family::RaviartThomas, q + 1)?;
        let rt_b = FeSpace::new(mesh, Family::RaviartThomas, q + 2)?;
        let ned = FeSpace::new(mesh, Family::Nedelec, q + 2)?;
        let onb_q = FeSpace::new(mesh, Family::Broken, q)?;
        let onb_q1 = FeSpace::new(mesh, Family::Broken, q + 1)?;
        let n0 = onb_q.element_dim();
        let n1 = onb_q1.element_dim();
        let rule = quadrature::tet_rule(form_degree(q + 1));
        let mut solenoidal = Vec::with_capacity(mesh.tets.len());
        for k in 0..mesh.tets.len() {
            let (pts, wts) = mesh.tet_quadrature(k, &rule);
            let t1 = onb_q1.scalar_tab(k, &pts);
            let t0 = onb_q.scalar_tab(k, &pts);
            let mut d = DMatrix::zeros(n0, 3 * n1);
            for (i, w) in wts.iter().enumerate() {
                for m in 0..n1 {
                    for c in 0..3 {
                        let dv = t1.grad[i][m][c];
                        for j in 0..n0 {
                            d[(j, 3 * m + c)] += w * dv * t0.val[i][j];
                        }
                    }
                }
            }
            let z = linalg::nullspace(&d, 1e-12);
            if z.ncols() != 3 * n1 - n0 {
                return Err(Error::Invariant(format!(
                    "element {k}: divergence-free basis has dimension {} instead of {}",
                    z.ncols(),
                    3 * n1 - n0
                )));
            }
            solenoidal.push(z);
        }
        Ok(Ctx { pb, g, hats, rt_a, rt_b, ned, onb_q, onb_q1, solenoidal })
    }

    /// Hat value and gradient on element k, or None when the vertex is not
    /// incident (the hat vanishes there).
    fn hat_local(&self, k: usize, a: usize) -> Option<usize> {
        self.hats.local_index(k, a)
    }

    /// Divergence-free orthonormal fields on element k at the given points,
    /// indexed `[point][field]`.
    fn solenoidal_at(&self, k: usize, pts: &[Point3<f64>]) -> Vec<Vec<Vector3<f64>>> {
        let z = &self.solenoidal[k];
        let tab = self.onb_q1.scalar_tab(k, pts);
        let n1 = self.onb_q1.element_dim();
        let mut out = Vec::with_capacity(pts.len());
        for vals in &tab.val {
            let mut row = Vec::with_capacity(z.ncols());
            for j in 0..z.ncols() {
                let mut v = Vector3::zeros();
                for m in 0..n1 {
                    for c in 0..3 {
                        v[c] += z[(3 * m + c, j)] * vals[m];
                    }
                }
                row.push(v);
            }
            out.push(row);
        }
        out
    }
}

/// Pack constraint rows and solve the patch minimization, validating the
/// advertised residual ceilings.
pub(crate) fn solve_patch(
    stage: &'static str,
    seed: usize,
    vars: &[usize],
    n_global: usize,
    m: DMatrix<f64>,
    b: DVector<f64>,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
) -> Result<(DVector<f64>, PatchSolveInfo)> {
    let nv = vars.len();
    let mut c = DMatrix::zeros(rows.len(), nv);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            c[(i, j)] = *v;
        }
    }
    let cq = ConstrainedQuadratic { m, b, c, g: DVector::from_vec(rhs) };
    let sol = cq.solve()?;
    if sol.constraint_residual > PATCH_TOL || sol.stationarity_residual > PATCH_TOL {
        return Err(Error::Invariant(format!(
            "{stage} patch {seed}: constraint residual {:.3e}, \
             stationarity residual {:.3e}",
            sol.constraint_residual, sol.stationarity_residual
        )));
    }
    let mut out = DVector::zeros(n_global);
    for (i, &gid) in vars.iter().enumerate() {
        out[gid] = sol.x[i];
    }
    let info = PatchSolveInfo {
        stage,
        seed,
        nullspace_dim: sol.nullspace_dim,
        constraint_residual: sol.constraint_residual,
        stationarity_residual: sol.stationarity_residual,
    };
    Ok((out, info))
}

pub(crate) fn patch_vars(
    space: &FeSpace,
    mesh: &Mesh,
    tets: &[usize],
    constrained_faces: &[usize],
) -> Vec<usize> {
    let fixed: BTreeSet<usize> = space.dofs_on_faces(mesh, constrained_faces).into_iter().collect();
    space
        .patch_dofs(tets)
        .into_iter()
        .filter(|d| !fixed.contains(d))
        .collect()
}

/// Stage one: the divergence-free patch correction targeting
/// grad(hat_a) x g, with its elementwise constant moments pinned to the
/// target's.  Those moments make the hat-weighted trace liftable in stage
/// two.
fn hat_correction(ctx: &Ctx, a: usize) -> Result<(DVector<f64>, PatchSolveInfo)> {
    let mesh = ctx.pb.mesh;
    let patch = mesh.vertex_patch(a);
    let constrained = patch.constrained_faces(mesh, FreeTrace::NeumannClosure);
    let vars = patch_vars(&ctx.rt_a, mesh, &patch.tets, &constrained);
    let nv = vars.len();
    let rule = quadrature::tet_rule(form_degree(ctx.rt_a.degree));

    let mut m = DMatrix::zeros(nv, nv);
    let mut b = DVector::zeros(nv);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for &k in &patch.tets {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let tab = ctx.rt_a.vector_tab(k, &pts);
        let ids = &ctx.rt_a.element_dofs[k];
        let pos: Vec<Option<usize>> = ids.iter().map(|gid| vars.binary_search(gid).ok()).collect();
        let acoef = ctx.pb.coef(k).a;
        let hl = ctx.hat_local(k, a).expect("patch elements touch the seed vertex");
        let hat = ctx.hats.scalar_tab(k, &pts);
        let gvals = ctx.g.value(k, &pts);
        let target: Vec<Vector3<f64>> =
            (0..pts.len()).map(|i| hat.grad[i][hl].cross(&gvals[i])).collect();

        for (i, w) in wts.iter().enumerate() {
            let at = acoef * target[i];
            for (i_loc, pi) in pos.iter().enumerate() {
                let Some(vi) = *pi else { continue };
                b[vi] += w * at.dot(&tab.val[i][i_loc]);
                let avi = acoef * tab.val[i][i_loc];
                for (j_loc, pj) in pos.iter().enumerate() {
                    if let Some(vj) = *pj {
                        m[(vi, vj)] += w * avi.dot(&tab.val[i][j_loc]);
                    }
                }
            }
        }
        // Elementwise constant moments of the field match the target.
        for c in 0..3 {
            let mut row = vec![0.0; nv];
            let mut r = 0.0;
            for (i, w) in wts.iter().enumerate() {
                r += w * target[i][c];
                for (i_loc, pi) in pos.iter().enumerate() {
                    if let Some(vi) = *pi {
                        row[vi] += w * tab.val[i][i_loc][c];
                    }
                }
            }
            rows.push(row);
            rhs.push(r);
        }
        // Divergence vanishes identically.
        let otab = ctx.onb_q.scalar_tab(k, &pts);
        for j in 0..ctx.onb_q.element_dim() {
            let mut row = vec![0.0; nv];
            for (i, w) in wts.iter().enumerate() {
                for (i_loc, pi) in pos.iter().enumerate() {
                    if let Some(vi) = *pi {
                        row[vi] += w * tab.div[i][i_loc] * otab.val[i][j];
                    }
                }
            }
            rows.push(row);
            rhs.push(0.0);
        }
    }
    solve_patch("hat-correction", a, &vars, ctx.rt_a.n_dofs, m, b, rows, rhs)
}

/// Values of the space's face-dof functionals applied to a prescribed
/// normal trace `data . n`, sampled from the face's owning element.
fn face_trace_moments(
    mesh: &Mesh,
    space: &FeSpace,
    f: usize,
    data: &mut dyn FnMut(usize, &[Point3<f64>]) -> Vec<f64>,
) -> Vec<(usize, f64)> {
    let face = &mesh.faces[f];
    let rule = quadrature::tri_rule(form_degree(space.degree));
    let (pts, wts) = mesh.face_quadrature(f, &rule);
    let lo = face.tets.0;
    let normal_vals = data(lo, &pts);
    let mut out = Vec::new();
    for &gid in &space.element_dofs[lo] {
        if !matches!(space.dofs[gid].key, DofKey::Face(fid, _) if fid == f) {
            continue;
        }
        let DofFunc::FaceNormalMoment { m, .. } = &space.dofs[gid].func else {
            continue;
        };
        let mut val = 0.0;
        for (g, w) in wts.iter().enumerate() {
            let (u, v) = mesh.face_local(f, &pts[g]);
            val += w * poly::eval2(*m, u, v) * normal_vals[g] / face.area;
        }
        out.push((gid, val));
    }
    out
}

/// Stage two, one element of one vertex patch: the divergence-free field
/// matching the hat-weighted stage-one trace on the element boundary,
/// closest to hat_a * theta_hat inside.  Summed over the four vertices these
/// reproduce theta_hat exactly, which is what makes the final potential
/// curl-free.
fn tilde_correction(ctx: &Ctx, a: usize, theta_hat: &DVector<f64>) -> Result<DVector<f64>> {
    let mesh = ctx.pb.mesh;
    let patch = mesh.vertex_patch(a);
    let mut tilde = DVector::zeros(ctx.rt_b.n_dofs);
    let rule = quadrature::tet_rule(form_degree(ctx.rt_b.degree));
    let frule = quadrature::tri_rule(form_degree(ctx.rt_b.degree));

    for &k in &patch.tets {
        // Fix every face dof of the element to the prescribed trace.
        let mut fixed: Vec<(usize, f64)> = Vec::new();
        let mut boundary_flux = 0.0;
        let mut boundary_scale = 0.0;
        for &f in &mesh.tet_faces[k] {
            let face = &mesh.faces[f];
            let lo = face.tets.0;
            let normal = face.normal;
            // psi_a (theta_hat . n) sampled from the face's owning element;
            // the trace is single-valued, and the hat vanishes on elements
            // not incident to the vertex.
            let mut data = |side: usize, pts: &[Point3<f64>]| -> Vec<f64> {
                let th = ctx.rt_a.vector_field(side, pts, theta_hat).0;
                match ctx.hat_local(side, a) {
                    Some(hl) => {
                        let hat = ctx.hats.scalar_tab(side, pts);
                        (0..pts.len())
                            .map(|i| hat.val[i][hl] * th[i].dot(&normal))
                            .collect()
                    }
                    None => vec![0.0; pts.len()],
                }
            };
            fixed.extend(face_trace_moments(mesh, &ctx.rt_b, f, &mut data));
            // Stokes compatibility of the prescribed trace on this element.
            let (pts, wts) = mesh.face_quadrature(f, &frule);
            let vals = data(lo, &pts);
            let sgn = mesh.face_sign(f, k);
            for (i, w) in wts.iter().enumerate() {
                boundary_flux += sgn * w * vals[i];
                boundary_scale += w * vals[i].abs();
            }
        }
        if boundary_flux.abs() > PATCH_TOL * (1.0 + boundary_scale) {
            return Err(Error::Compatibility(format!(
                "vertex {a}, element {k}: hat-weighted correction trace has net flux {:.3e}",
                boundary_flux
            )));
        }

        let ids = &ctx.rt_b.element_dofs[k];
        let fixed_map: std::collections::BTreeMap<usize, f64> = fixed.iter().copied().collect();
        let free_loc: Vec<usize> = (0..ids.len())
            .filter(|&l| !fixed_map.contains_key(&ids[l]))
            .collect();
        let nv = free_loc.len();

        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let tab = ctx.rt_b.vector_tab(k, &pts);
        // Data minus the fixed part of the trial field.
        let th = ctx.rt_a.vector_field(k, &pts, theta_hat).0;
        let hl = ctx.hat_local(k, a).expect("patch elements touch the seed vertex");
        let hat = ctx.hats.scalar_tab(k, &pts);
        let mut resid: Vec<Vector3<f64>> =
            (0..pts.len()).map(|i| hat.val[i][hl] * th[i]).collect();
        let mut fixed_div: Vec<f64> = vec![0.0; pts.len()];
        for (l, gid) in ids.iter().enumerate() {
            if let Some(cv) = fixed_map.get(gid) {
                for i in 0..pts.len() {
                    resid[i] -= *cv * tab.val[i][l];
                    fixed_div[i] += *cv * tab.div[i][l];
                }
            }
        }

        let mut m = DMatrix::zeros(nv, nv);
        let mut b = DVector::zeros(nv);
        for (i, w) in wts.iter().enumerate() {
            for (ii, &li) in free_loc.iter().enumerate() {
                b[ii] += w * resid[i].dot(&tab.val[i][li]);
                for (jj, &lj) in free_loc.iter().enumerate() {
                    m[(ii, jj)] += w * tab.val[i][li].dot(&tab.val[i][lj]);
                }
            }
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        let otab = ctx.onb_q1.scalar_tab(k, &pts);
        for j in 0..ctx.onb_q1.element_dim() {
            let mut row = vec![0.0; nv];
            let mut r = 0.0;
            for (i, w) in wts.iter().enumerate() {
                r -= w * fixed_div[i] * otab.val[i][j];
                for (ii, &li) in free_loc.iter().enumerate() {
                    row[ii] += w * tab.div[i][li] * otab.val[i][j];
                }
            }
            rows.push(row);
            rhs.push(r);
        }
        let nrows = rows.len();
        let mut c = DMatrix::zeros(nrows, nv);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                c[(i, j)] = *v;
            }
        }
        let cq = ConstrainedQuadratic { m, b, c, g: DVector::from_vec(rhs) };
        let sol = cq.solve()?;
        if sol.constraint_residual > PATCH_TOL || sol.stationarity_residual > PATCH_TOL {
            return Err(Error::Invariant(format!(
                "trace lifting at vertex {a}, element {k}: constraint residual {:.3e}, \
                 stationarity residual {:.3e}",
                sol.constraint_residual, sol.stationarity_residual
            )));
        }
        for (gid, cv) in &fixed {
            tilde[*gid] = *cv;
        }
        for (ii, &li) in free_loc.iter().enumerate() {
            tilde[ids[li]] = sol.x[ii];
        }
    }
    Ok(tilde)
}

/// Stage three: the Nedelec patch field closest to hat_a * g whose
/// elementwise curl equals the corrected stage-one field.
fn potential_stage(
    ctx: &Ctx,
    a: usize,
    theta_hat_a: &DVector<f64>,
    tilde_a: &DVector<f64>,
) -> Result<(DVector<f64>, PatchSolveInfo)> {
    let mesh = ctx.pb.mesh;
    let patch = mesh.vertex_patch(a);
    let constrained = patch.constrained_faces(mesh, FreeTrace::NeumannClosure);
    let vars = patch_vars(&ctx.ned, mesh, &patch.tets, &constrained);
    let nv = vars.len();
    let rule = quadrature::tet_rule(form_degree(ctx.ned.degree));

    let mut m = DMatrix::zeros(nv, nv);
    let mut b = DVector::zeros(nv);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for &k in &patch.tets {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let tab = ctx.ned.vector_tab(k, &pts);
        let ids = &ctx.ned.element_dofs[k];
        let pos: Vec<Option<usize>> = ids.iter().map(|gid| vars.binary_search(gid).ok()).collect();
        let acoef = ctx.pb.coef(k).a;
        let hl = ctx.hat_local(k, a).expect("patch elements touch the seed vertex");
        let hat = ctx.hats.scalar_tab(k, &pts);
        let gvals = ctx.g.value(k, &pts);

        for (i, w) in wts.iter().enumerate() {
            let at = acoef * (hat.val[i][hl] * gvals[i]);
            for (i_loc, pi) in pos.iter().enumerate() {
                let Some(vi) = *pi else { continue };
                b[vi] += w * at.dot(&tab.val[i][i_loc]);
                let avi = acoef * tab.val[i][i_loc];
                for (j_loc, pj) in pos.iter().enumerate() {
                    if let Some(vj) = *pj {
                        m[(vi, vj)] += w * avi.dot(&tab.val[i][j_loc]);
                    }
                }
            }
        }
        // Curl rows against the divergence-free orthonormal fields; both the
        // trial curls and the target live in their span, so these moments
        // pin the curl exactly.
        let zeta = ctx.solenoidal_at(k, &pts);
        let theta: Vec<Vector3<f64>> = {
            let h = ctx.rt_a.vector_field(k, &pts, theta_hat_a).0;
            let t = ctx.rt_b.vector_field(k, &pts, tilde_a).0;
            (0..pts.len()).map(|i| h[i] - t[i]).collect()
        };
        let nz = ctx.solenoidal[k].ncols();
        for j in 0..nz {
            let mut row = vec![0.0; nv];
            let mut r = 0.0;
            for (i, w) in wts.iter().enumerate() {
                r += w * theta[i].dot(&zeta[i][j]);
                for (i_loc, pi) in pos.iter().enumerate() {
                    if let Some(vi) = *pi {
                        row[vi] += w * tab.curl[i][i_loc].dot(&zeta[i][j]);
                    }
                }
            }
            rows.push(row);
            rhs.push(r);
        }
    }
    solve_patch("potential", a, &vars, ctx.ned.n_dofs, m, b, rows, rhs)
}

/// Flux equilibration for the penalty scheme: per vertex, the
/// Raviart-Thomas patch field minimizing the distance to -A (hat_a g) in the
/// inverse-weighted norm, under the divergence constraint
/// div w = hat_a f - (A grad hat_a) . g projected elementwise.  Free trace
/// on Dirichlet-closure faces at the vertex, zero elsewhere.
fn flux_stage(
    ctx: &Ctx,
    flux_space: &FeSpace,
    onb_p: &FeSpace,
    a: usize,
) -> Result<(DVector<f64>, PatchSolveInfo)> {
    let mesh = ctx.pb.mesh;
    let patch = mesh.vertex_patch(a);
    let constrained = patch.constrained_faces(mesh, FreeTrace::DirichletClosure);
    let vars = patch_vars(flux_space, mesh, &patch.tets, &constrained);
    let nv = vars.len();
    let rule = quadrature::tet_rule(form_degree(flux_space.degree));
    let drule = quadrature::tet_rule(DATA_DEGREE.max(form_degree(flux_space.degree)));

    // Fully constrained patches need the load moment against the hat to
    // vanish; this is the scheme's orthogonality against conforming hats.
    if !patch.has_free_trace(mesh, FreeTrace::DirichletClosure) {
        let mut net = 0.0;
        let mut scale = 0.0;
        for &k in &patch.tets {
            let (pts, wts) = mesh.tet_quadrature(k, &drule);
            let hl = ctx.hat_local(k, a).expect("patch elements touch the seed vertex");
            let hat = ctx.hats.scalar_tab(k, &pts);
            let gvals = ctx.g.value(k, &pts);
            let acoef = ctx.pb.coef(k).a;
            for (i, w) in wts.iter().enumerate() {
                let v = hat.val[i][hl] * (ctx.pb.load)(&pts[i])
                    - (acoef * hat.grad[i][hl]).dot(&gvals[i]);
                net += w * v;
                scale += w * v.abs();
            }
        }
        if net.abs() > PATCH_TOL * (1.0 + scale) {
            return Err(Error::Compatibility(format!(
                "vertex {a}: load moment {net:.3e} against the hat function does not vanish; \
                 the scheme output is not orthogonal to conforming hats"
            )));
        }
    }

    let mut m = DMatrix::zeros(nv, nv);
    let mut b = DVector::zeros(nv);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for &k in &patch.tets {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let tab = flux_space.vector_tab(k, &pts);
        let ids = &flux_space.element_dofs[k];
        let pos: Vec<Option<usize>> = ids.iter().map(|gid| vars.binary_search(gid).ok()).collect();
        let ainv = ctx.pb.coef(k).a_inv;
        let hl = ctx.hat_local(k, a).expect("patch elements touch the seed vertex");
        let hat = ctx.hats.scalar_tab(k, &pts);
        let gvals = ctx.g.value(k, &pts);

        for (i, w) in wts.iter().enumerate() {
            let t = hat.val[i][hl] * gvals[i];
            for (i_loc, pi) in pos.iter().enumerate() {
                let Some(vi) = *pi else { continue };
                b[vi] -= w * t.dot(&tab.val[i][i_loc]);
                let avi = ainv * tab.val[i][i_loc];
                for (j_loc, pj) in pos.iter().enumerate() {
                    if let Some(vj) = *pj {
                        m[(vi, vj)] += w * avi.dot(&tab.val[i][j_loc]);
                    }
                }
            }
        }
        // Divergence rows at form accuracy, data moments at data accuracy.
        let otab = onb_p.scalar_tab(k, &pts);
        let mut row_block = vec![vec![0.0; nv]; onb_p.element_dim()];
        for (i, w) in wts.iter().enumerate() {
            for (i_loc, pi) in pos.iter().enumerate() {
                if let Some(vi) = *pi {
                    for (j, row) in row_block.iter_mut().enumerate() {
                        row[vi] += w * tab.div[i][i_loc] * otab.val[i][j];
                    }
                }
            }
        }
        let (dpts, dwts) = mesh.tet_quadrature(k, &drule);
        let dotab = onb_p.scalar_tab(k, &dpts);
        let dhat = ctx.hats.scalar_tab(k, &dpts);
        let dg = ctx.g.value(k, &dpts);
        let acoef = ctx.pb.coef(k).a;
        let mut rhs_block = vec![0.0; onb_p.element_dim()];
        for (i, w) in dwts.iter().enumerate() {
            let v = dhat.val[i][hl] * (ctx.pb.load)(&dpts[i])
                - (acoef * dhat.grad[i][hl]).dot(&dg[i]);
            for (j, r) in rhs_block.iter_mut().enumerate() {
                *r += w * v * dotab.val[i][j];
            }
        }
        rows.extend(row_block);
        rhs.extend(rhs_block);
    }
    solve_patch("flux", a, &vars, flux_space.n_dofs, m, b, rows, rhs)
}

/// Run every stage and validate the reconstruction invariants.
pub fn reconstruct(pb: &Problem, out: &SchemeOutput) -> Result<Reconstruction> {
    let with_flux = !matches!(out.solution, Solution::Mixed { .. });
    let q = out.p.saturating_sub(1).max(1);
    verify_gradient_orthogonality(pb, &out.gradient)?;
    let ctx = Ctx::new(pb, &out.gradient, q)?;
    let mesh = pb.mesh;
    let nverts = mesh.vertices.len();

    let mut info = Vec::new();
    let mut theta_hats = Vec::with_capacity(nverts);
    let mut theta_sum = DVector::zeros(ctx.rt_a.n_dofs);
    for a in 0..nverts {
        let (th, i) = hat_correction(&ctx, a)?;
        theta_sum += &th;
        theta_hats.push(th);
        info.push(i);
    }

    let mut phi = DVector::zeros(ctx.ned.n_dofs);
    for a in 0..nverts {
        let tilde = tilde_correction(&ctx, a, &theta_sum)?;
        let (phi_a, i) = potential_stage(&ctx, a, &theta_hats[a], &tilde)?;
        phi += &phi_a;
        info.push(i);
    }

    // The potential must be curl-free elementwise; the stage-two lifting
    // telescopes the corrections away, so only solver roundoff remains.
    let rule = quadrature::tet_rule(form_degree(ctx.ned.degree));
    let mut curl_sq = 0.0;
    let mut g_sq = 0.0;
    for k in 0..mesh.tets.len() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let curls = ctx.ned.vector_field(k, &pts, &phi).2;
        let gvals = ctx.g.value(k, &pts);
        for (i, w) in wts.iter().enumerate() {
            curl_sq += w * curls[i].norm_squared();
            g_sq += w * gvals[i].norm_squared();
        }
    }
    if curl_sq.sqrt() > PATCH_TOL * (1.0 + g_sq.sqrt()) {
        return Err(Error::Invariant(format!(
            "reconstructed potential has curl of size {:.3e}",
            curl_sq.sqrt()
        )));
    }

    let mut flux_space = None;
    let mut flux = None;
    if with_flux {
        let fs = FeSpace::new(mesh, Family::RaviartThomas, out.p + 1)?;
        let onb_p = FeSpace::new(mesh, Family::Broken, out.p)?;
        let mut sigma = DVector::zeros(fs.n_dofs);
        for a in 0..nverts {
            let (s, i) = flux_stage(&ctx, &fs, &onb_p, a)?;
            sigma += &s;
            info.push(i);
        }
        // div sigma must equal the elementwise projection of the load.
        let proj = onb_p.project_broken(mesh, DATA_DEGREE, &|_, x| (pb.load)(x))?;
        let drule = quadrature::tet_rule(DATA_DEGREE.max(form_degree(fs.degree)));
        let mut dsq = 0.0;
        let mut fsq = 0.0;
        for k in 0..mesh.tets.len() {
            let (pts, wts) = mesh.tet_quadrature(k, &drule);
            let divs = fs.vector_field(k, &pts, &sigma).1;
            let (pvals, _) = onb_p.scalar_field(k, &pts, &proj);
            for (i, w) in wts.iter().enumerate() {
                dsq += w * (divs[i] - pvals[i]).powi(2);
                fsq += w * pvals[i] * pvals[i];
            }
        }
        if dsq.sqrt() > PATCH_TOL * (1.0 + fsq.sqrt()) {
            return Err(Error::Invariant(format!(
                "equilibrated flux misses the projected load by {:.3e}",
                dsq.sqrt()
            )));
        }
        flux_space = Some(fs);
        flux = Some(sigma);
    }

    Ok(Reconstruction {
        degree: q,
        potential_space: ctx.ned,
        potential: phi,
        flux_space,
        flux,
        info,
    })
}

/// Equilibrated indicator: for the penalty scheme the flux misfit plus the
/// nonconformity of the potential; for the mixed scheme the nonconformity
/// alone, since the scheme's own flux is equilibrated.  Oscillation carries
/// the Poincare weight h/pi and enters the reliability bound additively.
pub fn estimate_equilibrated(
    pb: &Problem,
    out: &SchemeOutput,
) -> Result<(EstimatorReport, Reconstruction)> {
    let scheme = match &out.solution {
        Solution::Conforming { .. } => "conforming",
        Solution::InteriorPenalty { .. } => "ipdg",
        Solution::Mixed { .. } => "mixed",
    };
    let recon = reconstruct(pb, out)?;
    let mesh = pb.mesh;
    let g = &out.gradient;
    let n = mesh.tets.len();

    let deg = recon
        .potential_space
        .degree
        .max(g.degree())
        .max(recon.flux_space.as_ref().map(|s| s.degree).unwrap_or(0));
    let rule = quadrature::tet_rule(form_degree(deg));

    let mut t_pot = vec![0.0; n];
    let mut t_flux = vec![0.0; n];
    for k in 0..n {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let acoef = pb.coef(k).a;
        let gvals = g.value(k, &pts);
        let pvals = recon.potential_space.vector_field(k, &pts, &recon.potential).0;
        let mut s = 0.0;
        for (i, w) in wts.iter().enumerate() {
            let d = gvals[i] - pvals[i];
            s += w * (acoef * d).dot(&d);
        }
        t_pot[k] = s;
        if let (Some(fs), Some(sigma)) = (&recon.flux_space, &recon.flux) {
            let ainv = pb.coef(k).a_inv;
            let svals = fs.vector_field(k, &pts, sigma).0;
            let mut s = 0.0;
            for (i, w) in wts.iter().enumerate() {
                let d = ainv * svals[i] + gvals[i];
                s += w * (acoef * d).dot(&d);
            }
            t_flux[k] = s;
        }
    }

    // The divergence actually achieved decides the projection in the data
    // term: the reconstructed flux reaches degree p, the mixed scheme's own
    // flux only degree p-1.
    let osc_degree = match &out.solution {
        Solution::Mixed { .. } => out.p - 1,
        _ => out.p,
    };
    let osc_raw = data_oscillation_sq(pb, osc_degree)?;
    let osc: Vec<f64> = (0..n)
        .map(|k| (mesh.geom[k].h / std::f64::consts::PI).powi(2) * osc_raw[k])
        .collect();

    let terms = if recon.flux.is_some() {
        vec![("flux".to_string(), t_flux), ("potential".to_string(), t_pot)]
    } else {
        vec![("potential".to_string(), t_pot)]
    };
    let report = EstimatorReport::new("equilibrated", scheme, out.p, n, terms, Some(osc), None)?;
    Ok((report, recon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{project_vector_field, Coefficient};
    use crate::mesh::{label_all_dirichlet, label_x_dirichlet, label_x_neumann};
    use crate::schemes::{solve_conforming, solve_ipdg, solve_mixed, DEFAULT_BETA};
    use std::f64::consts::PI;

    fn quadratic_load(_: &Point3<f64>) -> f64 {
        2.0
    }

    /// Exact squared energy error of a scheme gradient against a known
    /// gradient.
    fn energy_error_sq(
        pb: &Problem,
        g: &GradientField,
        exact: &dyn Fn(&Point3<f64>) -> Vector3<f64>,
    ) -> f64 {
        let rule = quadrature::tet_rule(DATA_DEGREE.max(form_degree(g.degree())));
        let mut s = 0.0;
        for k in 0..pb.mesh.tets.len() {
            let (pts, wts) = pb.mesh.tet_quadrature(k, &rule);
            let gv = g.value(k, &pts);
            let a = pb.coef(k).a;
            for (i, w) in wts.iter().enumerate() {
                let d = exact(&pts[i]) - gv[i];
                s += w * (a * d).dot(&d);
            }
        }
        s
    }

    #[test]
    fn quadratic_data_makes_every_stage_exact() {
        let mut mesh = Mesh::structured_cube(2).unwrap();
        label_x_dirichlet(&mut mesh);
        let pb = Problem::new(&mesh, Coefficient::identity(), &quadratic_load).unwrap();

        for out in [solve_conforming(&pb, 2).unwrap(), solve_ipdg(&pb, 2, DEFAULT_BETA, None).unwrap()] {
            let (report, recon) = estimate_equilibrated(&pb, &out).unwrap();
            assert!(
                report.total() <= 1e-8,
                "{}: equilibrated total {:.3e}",
                report.scheme,
                report.total()
            );
            assert!(report.oscillation_total_sq() <= 1e-22);
            for i in &recon.info {
                assert!(i.constraint_residual <= PATCH_TOL);
                assert!(i.stationarity_residual <= PATCH_TOL);
            }
        }

        let mx = solve_mixed(&pb, 2).unwrap();
        let (report, _) = estimate_equilibrated(&pb, &mx).unwrap();
        assert!(report.total() <= 1e-8, "mixed equilibrated total {:.3e}", report.total());
    }

    #[test]
    fn reconstruction_is_conforming_and_constrained() {
        let mut mesh = Mesh::structured_cube(2).unwrap();
        label_x_neumann(&mut mesh);
        let f = |x: &Point3<f64>| {
            3.0 * PI * PI * (PI * x.x).cos() * (PI * x.y).sin() * (PI * x.z).sin()
        };
        let pb = Problem::new(&mesh, Coefficient::identity(), &f).unwrap();
        let out = solve_ipdg(&pb, 1, DEFAULT_BETA, None).unwrap();
        let recon = reconstruct(&pb, &out).unwrap();
        let sp = &recon.potential_space;
        let fs = recon.flux_space.as_ref().unwrap();
        let sigma = recon.flux.as_ref().unwrap();
        let rule = quadrature::tri_rule(form_degree(sp.degree));

        let gscale = 1.0 + energy_error_sq(&pb, &out.gradient, &|_| Vector3::zeros()).sqrt();
        for (fid, face) in mesh.faces.iter().enumerate() {
            let (pts, wts) = mesh.face_quadrature(fid, &rule);
            let lo = face.tets.0;
            let plo = sp.vector_field(lo, &pts, &recon.potential).0;
            let slo = fs.vector_field(lo, &pts, sigma).0;
            match face.tets.1 {
                Some(hi) => {
                    // Tangential trace of the potential and normal trace of
                    // the flux are single-valued across interior faces.
                    let phi = sp.vector_field(hi, &pts, &recon.potential).0;
                    let shi = fs.vector_field(hi, &pts, sigma).0;
                    let mut tj = 0.0;
                    let mut nj = 0.0;
                    for (i, w) in wts.iter().enumerate() {
                        tj += w * (plo[i] - phi[i]).cross(&face.normal).norm_squared();
                        nj += w * ((slo[i] - shi[i]).dot(&face.normal)).powi(2);
                    }
                    assert!(tj.sqrt() <= PATCH_TOL * gscale, "face {fid}: tangential jump {tj:.3e}");
                    assert!(nj.sqrt() <= PATCH_TOL * gscale, "face {fid}: normal jump {nj:.3e}");
                }
                None => {
                    let mut t = 0.0;
                    let mut n = 0.0;
                    for (i, w) in wts.iter().enumerate() {
                        t += w * plo[i].cross(&face.normal).norm_squared();
                        n += w * (slo[i].dot(&face.normal)).powi(2);
                    }
                    match face.label.unwrap() {
                        // Zero tangential trace on the Dirichlet part.
                        Bc::Dirichlet => {
                            assert!(t.sqrt() <= PATCH_TOL * gscale, "face {fid}: trace {t:.3e}")
                        }
                        // Zero normal trace on the Neumann part.
                        Bc::Neumann => {
                            assert!(n.sqrt() <= PATCH_TOL * gscale, "face {fid}: flux {n:.3e}")
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn guaranteed_bound_holds_with_exact_errors() {
        let mut mesh = Mesh::structured_cube(2).unwrap();
        label_all_dirichlet(&mut mesh);
        let f = |x: &Point3<f64>| {
            3.0 * PI * PI * (PI * x.x).sin() * (PI * x.y).sin() * (PI * x.z).sin()
        };
        let grad = |x: &Point3<f64>| {
            Vector3::new(
                PI * (PI * x.x).cos() * (PI * x.y).sin() * (PI * x.z).sin(),
                PI * (PI * x.x).sin() * (PI * x.y).cos() * (PI * x.z).sin(),
                PI * (PI * x.x).sin() * (PI * x.y).sin() * (PI * x.z).cos(),
            )
        };
        let pb = Problem::new(&mesh, Coefficient::identity(), &f).unwrap();

        for out in [solve_ipdg(&pb, 1, DEFAULT_BETA, None).unwrap(), solve_mixed(&pb, 1).unwrap()] {
            let (report, _) = estimate_equilibrated(&pb, &out).unwrap();
            let err_sq = energy_error_sq(&pb, &out.gradient, &grad);
            let bound = report.reliability_sq();
            assert!(
                err_sq <= bound * (1.0 + 1e-6),
                "{}: error {:.6e} exceeds bound {:.6e}",
                report.scheme,
                err_sq,
                bound
            );
            // The bound should not be wildly loose on this smooth problem.
            assert!(bound <= 100.0 * err_sq, "{}: bound {bound:.3e} vs error {err_sq:.3e}", report.scheme);
        }
    }

    #[test]
    fn non_orthogonal_gradients_are_rejected() {
        let mut mesh = Mesh::structured_cube(1).unwrap();
        label_all_dirichlet(&mut mesh);
        let zero = |_: &Point3<f64>| 0.0;
        let pb = Problem::new(&mesh, Coefficient::identity(), &zero).unwrap();
        let g = project_vector_field(&mesh, 1, 4, &|_, _| Vector3::x()).unwrap();
        let err = verify_gradient_orthogonality(&pb, &g).unwrap_err();
        assert!(matches!(err, Error::Compatibility(_)), "got {err:?}");
    }
}
