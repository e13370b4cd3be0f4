//! Residual indicators.
//!
//! The lifted-gradient and mixed schemes get indicators built from the
//! reconstructed gradient field: strong-residual and normal-jump parts
//! weighted by the inverse of the local coefficient floor, curl and
//! tangential-jump parts weighted by the local coefficient ceiling.  The
//! textbook indicator for the penalty scheme (volume residual, flux jumps,
//! penalty-scaled solution jumps on the broken gradient) is kept alongside
//! as the comparison target.
//!
//! Face norms are attributed in full to both adjacent elements.  Normal
//! jumps are collected on every face outside the Dirichlet part, tangential
//! and solution jumps on every face outside the Neumann part; on boundary
//! faces the jump degenerates to the trace.

use super::{double_extension, EstimatorReport};
use crate::assembly::{broken_gradient, scalar_jump, GradientField, Problem};
use crate::fem::{Family, FeSpace};
use crate::mesh::Bc;
use crate::quadrature::{self, form_degree, DATA_DEGREE};
use crate::schemes::{SchemeOutput, Solution};
use crate::{Error, Result};

/// Coefficient extremes over the two-hop neighborhood of each element.
struct Weights {
    inv_min: Vec<f64>,
    max: Vec<f64>,
}

fn neighborhood_weights(pb: &Problem) -> Weights {
    let n = pb.mesh.tets.len();
    let mut inv_min = Vec::with_capacity(n);
    let mut max = Vec::with_capacity(n);
    for k in 0..n {
        let hood = double_extension(pb.mesh, k);
        inv_min.push(1.0 / pb.alpha_min_over(&hood));
        max.push(pb.alpha_max_over(&hood));
    }
    Weights { inv_min, max }
}

/// Per-element squared norm of div(A g) + f.
fn divergence_residual_sq(pb: &Problem, g: &GradientField) -> Vec<f64> {
    let mesh = pb.mesh;
    let rule = quadrature::tet_rule(DATA_DEGREE.max(form_degree(g.degree())));
    let mut out = Vec::with_capacity(mesh.tets.len());
    for k in 0..mesh.tets.len() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let jac = g.jacobian(k, &pts);
        let a = pb.coef(k).a;
        let mut s = 0.0;
        for (i, w) in wts.iter().enumerate() {
            // The coefficient is constant per element, so div(A g) = tr(A J)
            // with J the gradient's Jacobian.
            let r = (a * jac[i]).trace() + (pb.load)(&pts[i]);
            s += w * r * r;
        }
        out.push(s);
    }
    out
}

/// Per-element squared norm of curl g.
fn curl_sq(pb: &Problem, g: &GradientField) -> Vec<f64> {
    let mesh = pb.mesh;
    let rule = quadrature::tet_rule(form_degree(g.degree()));
    let mut out = Vec::with_capacity(mesh.tets.len());
    for k in 0..mesh.tets.len() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let curls = g.curl(k, &pts);
        let s: f64 = wts.iter().zip(&curls).map(|(w, c)| w * c.norm_squared()).sum();
        out.push(s);
    }
    out
}

/// Squared face norms of [A g] . n accumulated onto both adjacent elements,
/// skipping the Dirichlet part.
fn normal_jump_sq(pb: &Problem, g: &GradientField, qdeg: usize) -> Vec<f64> {
    let mesh = pb.mesh;
    let rule = quadrature::tri_rule(qdeg);
    let mut acc = vec![0.0; mesh.tets.len()];
    for (f, face) in mesh.faces.iter().enumerate() {
        if face.label == Some(Bc::Dirichlet) {
            continue;
        }
        let (pts, wts) = mesh.face_quadrature(f, &rule);
        let lo = face.tets.0;
        let vlo = g.value(lo, &pts);
        let a_lo = pb.coef(lo).a;
        let mut s = 0.0;
        match face.tets.1 {
            Some(hi) => {
                let vhi = g.value(hi, &pts);
                let a_hi = pb.coef(hi).a;
                for (i, w) in wts.iter().enumerate() {
                    let j = (a_lo * vlo[i] - a_hi * vhi[i]).dot(&face.normal);
                    s += w * j * j;
                }
                acc[lo] += s;
                acc[hi] += s;
            }
            None => {
                for (i, w) in wts.iter().enumerate() {
                    let j = (a_lo * vlo[i]).dot(&face.normal);
                    s += w * j * j;
                }
                acc[lo] += s;
            }
        }
    }
    acc
}

/// Squared face norms of [g] x n accumulated onto both adjacent elements,
/// skipping the Neumann part.
fn tangential_jump_sq(pb: &Problem, g: &GradientField, qdeg: usize) -> Vec<f64> {
    let mesh = pb.mesh;
    let rule = quadrature::tri_rule(qdeg);
    let mut acc = vec![0.0; mesh.tets.len()];
    for (f, face) in mesh.faces.iter().enumerate() {
        if face.label == Some(Bc::Neumann) {
            continue;
        }
        let (pts, wts) = mesh.face_quadrature(f, &rule);
        let lo = face.tets.0;
        let vlo = g.value(lo, &pts);
        let mut s = 0.0;
        match face.tets.1 {
            Some(hi) => {
                let vhi = g.value(hi, &pts);
                for (i, w) in wts.iter().enumerate() {
                    s += w * (vlo[i] - vhi[i]).cross(&face.normal).norm_squared();
                }
                acc[lo] += s;
                acc[hi] += s;
            }
            None => {
                for (i, w) in wts.iter().enumerate() {
                    s += w * vlo[i].cross(&face.normal).norm_squared();
                }
                acc[lo] += s;
            }
        }
    }
    acc
}

/// Squared face norms of [u] accumulated onto both adjacent elements,
/// skipping the Neumann part.
fn solution_jump_sq(
    pb: &Problem,
    sp: &FeSpace,
    u: &nalgebra::DVector<f64>,
    qdeg: usize,
) -> Vec<f64> {
    let mesh = pb.mesh;
    let rule = quadrature::tri_rule(qdeg);
    let mut acc = vec![0.0; mesh.tets.len()];
    for (f, face) in mesh.faces.iter().enumerate() {
        if face.label == Some(Bc::Neumann) {
            continue;
        }
        let (pts, wts) = mesh.face_quadrature(f, &rule);
        let jumps = scalar_jump(mesh, sp, u, f, &pts);
        let s: f64 = wts.iter().zip(&jumps).map(|(w, j)| w * j * j).sum();
        acc[face.tets.0] += s;
        if let Some(hi) = face.tets.1 {
            acc[hi] += s;
        }
    }
    acc
}

/// Per-element squared distance from f to its elementwise degree-`degree`
/// polynomial projection.
pub fn data_oscillation_sq(pb: &Problem, degree: usize) -> Result<Vec<f64>> {
    let mesh = pb.mesh;
    let space = FeSpace::new(mesh, Family::Broken, degree)?;
    let coeff = space.project_broken(mesh, DATA_DEGREE, &|_, x| (pb.load)(x))?;
    let rule = quadrature::tet_rule(DATA_DEGREE);
    let mut out = Vec::with_capacity(mesh.tets.len());
    for k in 0..mesh.tets.len() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let (vals, _) = space.scalar_field(k, &pts, &coeff);
        let mut s = 0.0;
        for (i, w) in wts.iter().enumerate() {
            let d = (pb.load)(&pts[i]) - vals[i];
            s += w * d * d;
        }
        out.push(s);
    }
    Ok(out)
}

/// Residual indicator for the lifted-gradient scheme: volume residual and
/// normal jumps against the coefficient floor, curl and tangential jumps
/// against the ceiling, each scaled by the usual h/p powers.
pub fn estimate_residual_ipdg(pb: &Problem, out: &SchemeOutput) -> Result<EstimatorReport> {
    let scheme = match &out.solution {
        Solution::InteriorPenalty { .. } => "ipdg",
        Solution::Conforming { .. } => "conforming",
        Solution::Mixed { .. } => {
            return Err(Error::InvalidArgument(
                "mixed outputs take the mixed residual indicator".into(),
            ))
        }
    };
    let mesh = pb.mesh;
    let g = &out.gradient;
    let p = out.p as f64;
    let w = neighborhood_weights(pb);
    let qdeg = form_degree(out.p);

    let dres = divergence_residual_sq(pb, g);
    let njmp = normal_jump_sq(pb, g, qdeg);
    let crl = curl_sq(pb, g);
    let tjmp = tangential_jump_sq(pb, g, qdeg);

    let n = mesh.tets.len();
    let mut t_res = vec![0.0; n];
    let mut t_nj = vec![0.0; n];
    let mut t_curl = vec![0.0; n];
    let mut t_tj = vec![0.0; n];
    for k in 0..n {
        let h = mesh.geom[k].h;
        t_res[k] = w.inv_min[k] * (h / p).powi(2) * dres[k];
        t_nj[k] = w.inv_min[k] * (h / p) * njmp[k];
        t_curl[k] = w.max[k] * (h / p).powi(2) * crl[k];
        t_tj[k] = w.max[k] * (h / p) * tjmp[k];
    }
    EstimatorReport::new(
        "residual",
        scheme,
        out.p,
        n,
        vec![
            ("volume_residual".into(), t_res),
            ("normal_jump".into(), t_nj),
            ("curl".into(), t_curl),
            ("tangential_jump".into(), t_tj),
        ],
        None,
        None,
    )
}

/// Residual indicator for the mixed scheme: curl and tangential jumps of the
/// flux-induced gradient, plus separate data oscillation.
pub fn estimate_residual_mixed(pb: &Problem, out: &SchemeOutput) -> Result<EstimatorReport> {
    if !matches!(out.solution, Solution::Mixed { .. }) {
        return Err(Error::InvalidArgument(
            "the mixed residual indicator needs a mixed output".into(),
        ));
    }
    let mesh = pb.mesh;
    let g = &out.gradient;
    let p = out.p as f64;
    let w = neighborhood_weights(pb);
    let qdeg = form_degree(out.p);

    let crl = curl_sq(pb, g);
    let tjmp = tangential_jump_sq(pb, g, qdeg);
    // The scheme equilibrates div sigma_h against degree p-1 only, so that
    // is the projection the data misfit is measured against.
    let osc_raw = data_oscillation_sq(pb, out.p - 1)?;

    let n = mesh.tets.len();
    let mut t_curl = vec![0.0; n];
    let mut t_tj = vec![0.0; n];
    let mut osc = vec![0.0; n];
    for k in 0..n {
        let h = mesh.geom[k].h;
        t_curl[k] = w.max[k] * (h / p).powi(2) * crl[k];
        t_tj[k] = w.max[k] * (h / p) * tjmp[k];
        osc[k] = (h / p).powi(2) * osc_raw[k];
    }
    EstimatorReport::new(
        "residual",
        "mixed",
        out.p,
        n,
        vec![("curl".into(), t_curl), ("tangential_jump".into(), t_tj)],
        Some(osc),
        None,
    )
}

/// Textbook indicator for the penalty scheme, built on the broken gradient:
/// volume residual, normal jumps, and penalty-scaled solution jumps.
pub fn estimate_standard_ipdg(pb: &Problem, out: &SchemeOutput) -> Result<EstimatorReport> {
    let (space, u) = match &out.solution {
        Solution::InteriorPenalty { space, u, .. } => (space, u),
        _ => {
            return Err(Error::InvalidArgument(
                "the textbook indicator needs a penalty-scheme output".into(),
            ))
        }
    };
    let mesh = pb.mesh;
    let g = broken_gradient(mesh, space, u)?;
    let p = out.p as f64;
    let w = neighborhood_weights(pb);
    let qdeg = form_degree(out.p);

    let dres = divergence_residual_sq(pb, &g);
    let njmp = normal_jump_sq(pb, &g, qdeg);
    let sjmp = solution_jump_sq(pb, space, u, qdeg);

    let n = mesh.tets.len();
    let mut t_res = vec![0.0; n];
    let mut t_nj = vec![0.0; n];
    let mut t_sj = vec![0.0; n];
    for k in 0..n {
        let h = mesh.geom[k].h;
        t_res[k] = w.inv_min[k] * (h / p).powi(2) * dres[k];
        t_nj[k] = w.inv_min[k] * (h / p) * njmp[k];
        t_sj[k] = w.max[k] * (p * p / h) * sjmp[k];
    }
    EstimatorReport::new(
        "standard",
        "ipdg",
        out.p,
        n,
        vec![
            ("volume_residual".into(), t_res),
            ("normal_jump".into(), t_nj),
            ("solution_jump".into(), t_sj),
        ],
        None,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{project_vector_field, Coefficient};
    use crate::mesh::{label_all_dirichlet, label_x_dirichlet, Mesh};
    use crate::schemes::{solve_conforming, solve_ipdg, solve_mixed, DEFAULT_BETA};
    use nalgebra::Point3;
    use nalgebra::{DVector, Vector3};
    use std::f64::consts::PI;

    fn zero(_: &Point3<f64>) -> f64 {
        0.0
    }

    fn quadratic_load(_: &Point3<f64>) -> f64 {
        2.0
    }

    /// u = x(1-x), Dirichlet on the x-faces, Neumann elsewhere.
    fn quadratic_mesh(n: usize) -> Mesh {
        let mut mesh = Mesh::structured_cube(n).unwrap();
        label_x_dirichlet(&mut mesh);
        mesh
    }

    #[test]
    fn zero_load_gives_zero_indicators() {
        let mut mesh = Mesh::structured_cube(2).unwrap();
        label_all_dirichlet(&mut mesh);
        let pb = Problem::new(&mesh, Coefficient::identity(), &zero).unwrap();
        let ip = solve_ipdg(&pb, 1, DEFAULT_BETA, None).unwrap();
        let mx = solve_mixed(&pb, 1).unwrap();
        assert!(estimate_residual_ipdg(&pb, &ip).unwrap().total_sq <= 1e-24);
        assert!(estimate_standard_ipdg(&pb, &ip).unwrap().total_sq <= 1e-24);
        let rep = estimate_residual_mixed(&pb, &mx).unwrap();
        assert!(rep.reliability_sq() <= 1e-24);
    }

    #[test]
    fn exactly_reproduced_quadratic_leaves_tiny_indicators() {
        let mesh = quadratic_mesh(2);
        let pb = Problem::new(&mesh, Coefficient::identity(), &quadratic_load).unwrap();

        let ip = solve_ipdg(&pb, 2, DEFAULT_BETA, None).unwrap();
        let rep = estimate_residual_ipdg(&pb, &ip).unwrap();
        assert!(rep.total() <= 1e-8, "ipdg residual total {:.3e}", rep.total());
        let std_rep = estimate_standard_ipdg(&pb, &ip).unwrap();
        assert!(std_rep.total() <= 1e-8, "textbook total {:.3e}", std_rep.total());

        let cf = solve_conforming(&pb, 2).unwrap();
        let rep = estimate_residual_ipdg(&pb, &cf).unwrap();
        assert!(rep.total() <= 1e-8, "conforming residual total {:.3e}", rep.total());

        let mx = solve_mixed(&pb, 2).unwrap();
        let rep = estimate_residual_mixed(&pb, &mx).unwrap();
        assert!(rep.reliability_sq().sqrt() <= 1e-8, "mixed total {:.3e}", rep.total());
    }

    #[test]
    fn indicators_scale_linearly_with_the_data() {
        let mut mesh = Mesh::structured_cube(2).unwrap();
        label_all_dirichlet(&mut mesh);
        let f1 = |x: &Point3<f64>| (PI * x.x).sin() * x.y;
        let c = 3.5;
        let fc = move |x: &Point3<f64>| c * (PI * x.x).sin() * x.y;
        let pb1 = Problem::new(&mesh, Coefficient::identity(), &f1).unwrap();
        let pbc = Problem::new(&mesh, Coefficient::identity(), &fc).unwrap();

        let r1 = estimate_residual_ipdg(&pb1, &solve_ipdg(&pb1, 1, DEFAULT_BETA, None).unwrap()).unwrap();
        let rc = estimate_residual_ipdg(&pbc, &solve_ipdg(&pbc, 1, DEFAULT_BETA, None).unwrap()).unwrap();
        for k in 0..mesh.tets.len() {
            let want = c * c * r1.element_sq[k];
            assert!(
                (rc.element_sq[k] - want).abs() <= 1e-10 * want.max(1e-30),
                "element {k}: {:.16e} vs {:.16e}",
                rc.element_sq[k],
                want
            );
        }

        let m1 = estimate_residual_mixed(&pb1, &solve_mixed(&pb1, 1).unwrap()).unwrap();
        let mc = estimate_residual_mixed(&pbc, &solve_mixed(&pbc, 1).unwrap()).unwrap();
        let want = c * c * m1.reliability_sq();
        assert!((mc.reliability_sq() - want).abs() <= 1e-10 * want);
    }

    /// A hand-built piecewise-constant gradient isolates the boundary-part
    /// bookkeeping: constants jump only across element interfaces and leave
    /// traces on the boundary, where each part must be counted or skipped
    /// according to its label.
    #[test]
    fn boundary_parts_enter_the_expected_jump_terms() {
        let mut mesh = Mesh::structured_cube(1).unwrap();
        label_x_dirichlet(&mut mesh);
        let pb = Problem::new(&mesh, Coefficient::identity(), &zero).unwrap();
        let gvec = Vector3::new(1.0, 2.0, 3.0);
        let g = project_vector_field(&mesh, 1, 4, &|_, _| gvec).unwrap();
        let space = FeSpace::new(&mesh, Family::Broken, 1).unwrap();
        let u = DVector::zeros(space.n_dofs);
        let out = SchemeOutput {
            solution: Solution::InteriorPenalty { space, u, beta: DEFAULT_BETA },
            gradient: g,
            residual: 0.0,
            p: 1,
        };
        let rep = estimate_residual_ipdg(&pb, &out).unwrap();

        // Constant field: no volume residual, no curl, no interior jumps.
        let h = mesh.geom[0].h;
        let mut want_normal = 0.0;
        let mut want_tangential = 0.0;
        for f in mesh.boundary_faces() {
            let face = &mesh.faces[f];
            match face.label.unwrap() {
                Bc::Neumann => want_normal += h * gvec.dot(&face.normal).powi(2) * face.area,
                Bc::Dirichlet => {
                    want_tangential += h * gvec.cross(&face.normal).norm_squared() * face.area
                }
            }
        }
        let got_normal: f64 = rep.term("normal_jump").unwrap().iter().sum();
        let got_tangential: f64 = rep.term("tangential_jump").unwrap().iter().sum();
        assert!((got_normal - want_normal).abs() <= 1e-12 * want_normal);
        assert!((got_tangential - want_tangential).abs() <= 1e-12 * want_tangential);
        let volume: f64 = rep.term("volume_residual").unwrap().iter().sum();
        let curl: f64 = rep.term("curl").unwrap().iter().sum();
        assert!(volume <= 1e-24 && curl <= 1e-24);
    }

    /// Discontinuous piecewise-constant data: every interior face norm must
    /// land on both adjacent elements in full.
    #[test]
    fn interior_face_norms_count_toward_both_elements() {
        let mut mesh = Mesh::structured_cube(1).unwrap();
        label_all_dirichlet(&mut mesh);
        let pb = Problem::new(&mesh, Coefficient::identity(), &zero).unwrap();
        let g = project_vector_field(&mesh, 1, 4, &|k, _| {
            Vector3::new(k as f64, 0.0, 0.0)
        })
        .unwrap();
        let space = FeSpace::new(&mesh, Family::Broken, 1).unwrap();
        let u = DVector::zeros(space.n_dofs);
        let out = SchemeOutput {
            solution: Solution::InteriorPenalty { space, u, beta: DEFAULT_BETA },
            gradient: g,
            residual: 0.0,
            p: 1,
        };
        let rep = estimate_residual_ipdg(&pb, &out).unwrap();

        let h = mesh.geom[0].h;
        let mut want_normal = 0.0;
        for (_, face) in mesh.faces.iter().enumerate() {
            if let Some(hi) = face.tets.1 {
                let jump = (face.tets.0 as f64 - hi as f64) * Vector3::x().dot(&face.normal);
                // Full face norm onto each of the two elements.
                want_normal += 2.0 * h * jump * jump * face.area;
            }
        }
        let got_normal: f64 = rep.term("normal_jump").unwrap().iter().sum();
        assert!(
            (got_normal - want_normal).abs() <= 1e-12 * want_normal,
            "{got_normal:.15e} vs {want_normal:.15e}"
        );
    }

    #[test]
    fn oscillation_reacts_to_unresolved_data_only() {
        let mut mesh = Mesh::structured_cube(2).unwrap();
        label_all_dirichlet(&mut mesh);
        let smooth = |x: &Point3<f64>| (2.0 * PI * x.x).sin() * (PI * x.y).cos();
        let pb = Problem::new(&mesh, Coefficient::identity(), &smooth).unwrap();
        let rep = estimate_residual_mixed(&pb, &solve_mixed(&pb, 1).unwrap()).unwrap();
        assert!(rep.oscillation_total_sq() > 1e-6);

        let mesh2 = quadratic_mesh(2);
        let pb2 = Problem::new(&mesh2, Coefficient::identity(), &quadratic_load).unwrap();
        let rep2 = estimate_residual_mixed(&pb2, &solve_mixed(&pb2, 1).unwrap()).unwrap();
        assert!(rep2.oscillation_total_sq() <= 1e-24);
    }
}
