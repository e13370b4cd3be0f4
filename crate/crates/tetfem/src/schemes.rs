//! The three discretizations of the diffusion problem: conforming
//! Lagrange elements, symmetric interior penalty on broken polynomials,
//! and mixed Raviart-Thomas elements.
//!
//! Each solver returns the discrete solution together with its discrete
//! gradient, the one field all error estimators consume. For the
//! conforming scheme that gradient is the elementwise gradient of u_h,
//! for interior penalty it is the lifted gradient, and for the mixed
//! scheme it is -A^{-1} sigma_h.

use crate::assembly::{
    broken_gradient, div_pairing, lifted_gradient, load_vector, restrict_matrix, sipg_matrix,
    stiffness, weighted_vector_mass, DofMap, GradientField, Problem,
};
use crate::fem::{Family, FeSpace};
use crate::linalg::{self, SparseMatrix};
use crate::mesh::Bc;
use crate::quadrature::{self, form_degree};
use crate::{Error, Result};
use nalgebra::DVector;

/// Interior-penalty parameter used when no explicit choice is made.
pub const DEFAULT_BETA: f64 = 10.0;

/// Algebraic accuracy every solver must reach, relative to the load.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// A discrete solution of one of the three schemes.
pub enum Solution {
    Conforming {
        space: FeSpace,
        u: DVector<f64>,
    },
    InteriorPenalty {
        space: FeSpace,
        u: DVector<f64>,
        beta: f64,
    },
    /// sigma_h approximates -A grad u and r_h approximates -u.
    Mixed {
        flux: FeSpace,
        sigma: DVector<f64>,
        pressure: FeSpace,
        r: DVector<f64>,
    },
}

impl Solution {
    /// Pointwise approximation of u on element k; the mixed scheme
    /// exposes -r_h.
    pub fn primal_value(&self, k: usize, pts: &[nalgebra::Point3<f64>]) -> Vec<f64> {
        match self {
            Solution::Conforming { space, u } | Solution::InteriorPenalty { space, u, .. } => {
                space.scalar_field(k, pts, u).0
            }
            Solution::Mixed { pressure, r, .. } => {
                let mut v = pressure.scalar_field(k, pts, r).0;
                for x in &mut v {
                    *x = -*x;
                }
                v
            }
        }
    }
}

/// A solved scheme: the solution, its discrete gradient, the relative
/// algebraic residual actually reached, and the polynomial order.
pub struct SchemeOutput {
    pub solution: Solution,
    pub gradient: GradientField,
    pub residual: f64,
    pub p: usize,
}

fn relative_residual(a: &SparseMatrix, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (b - a.matvec(x)).norm() / b.norm().max(1e-300)
}

fn check_residual(res: f64, what: &str) -> Result<f64> {
    if !(res <= RESIDUAL_TOL) {
        return Err(Error::Solve(format!("{what} solved only to relative residual {res:.3e}")));
    }
    Ok(res)
}

/// Conforming Lagrange discretization of order p <= 4. Dirichlet values
/// are imposed by removing the dofs on the closure of that boundary part;
/// the Neumann condition is natural.
pub fn solve_conforming(pb: &Problem, p: usize) -> Result<SchemeOutput> {
    if !(1..=4).contains(&p) {
        return Err(Error::InvalidArgument("conforming order must lie in 1..=4".into()));
    }
    let mesh = pb.mesh;
    let space = FeSpace::new(mesh, Family::Lagrange, p)?;
    let dm = DofMap::new(space.n_dofs, &space.dofs_on_label(mesh, Bc::Dirichlet));
    let a = restrict_matrix(&stiffness(pb, &space)?, &dm, &dm);
    let b = dm.restrict(&load_vector(pb, &space)?);
    let x = linalg::solve_spd(&a, &b)?;
    let residual = check_residual(relative_residual(&a, &x, &b), "conforming system")?;
    let u = dm.expand(&x);
    let gradient = broken_gradient(mesh, &space, &u)?;
    Ok(SchemeOutput { solution: Solution::Conforming { space, u }, gradient, residual, p })
}

/// Symmetric interior-penalty discretization of order p in {1, 2} with
/// face penalty beta alpha_max p^2 / h_F. Dirichlet conditions enter
/// weakly through the Dirichlet-face terms. The lifting degree of the
/// returned gradient defaults to p-1.
pub fn solve_ipdg(
    pb: &Problem,
    p: usize,
    beta: f64,
    lifting_degree: Option<usize>,
) -> Result<SchemeOutput> {
    if !(1..=2).contains(&p) {
        return Err(Error::InvalidArgument("interior-penalty order must be 1 or 2".into()));
    }
    let mesh = pb.mesh;
    let space = FeSpace::new(mesh, Family::Broken, p)?;
    let a = sipg_matrix(pb, &space, beta)?;
    let b = load_vector(pb, &space)?;
    let u = match linalg::solve_spd(&a, &b) {
        Ok(u) => u,
        Err(Error::Solve(msg)) if msg.contains("positive definite") => {
            return Err(Error::Solve(format!(
                "interior-penalty form is not coercive at beta = {beta}; retry with a larger penalty"
            )))
        }
        Err(e) => return Err(e),
    };
    let residual = check_residual(relative_residual(&a, &u, &b), "interior-penalty system")?;
    let gradient = lifted_gradient(mesh, &space, &u, lifting_degree)?;
    Ok(SchemeOutput {
        solution: Solution::InteriorPenalty { space, u, beta },
        gradient,
        residual,
        p,
    })
}

/// Mixed Raviart-Thomas discretization of order p in {1, 2}:
/// (A^{-1} sigma, v) + (r, div v) = 0 and (div sigma, q) = (f, q), with
/// the flux normal trace removed on the closure of the Neumann part. The
/// divergence equation then holds strongly against the broken pressure
/// space, so div sigma_h is the elementwise L2 projection of f.
pub fn solve_mixed(pb: &Problem, p: usize) -> Result<SchemeOutput> {
    if !(1..=2).contains(&p) {
        return Err(Error::InvalidArgument("mixed order must be 1 or 2".into()));
    }
    let mesh = pb.mesh;
    let flux = FeSpace::new(mesh, Family::RaviartThomas, p)?;
    let pressure = FeSpace::new(mesh, Family::Broken, p - 1)?;
    let dm = DofMap::new(flux.n_dofs, &flux.dofs_on_label(mesh, Bc::Neumann));
    let keep_all = DofMap::new(pressure.n_dofs, &[]);
    let m = restrict_matrix(&weighted_vector_mass(pb, &flux, true)?, &dm, &dm);
    let b = restrict_matrix(&div_pairing(mesh, &flux, &pressure)?, &keep_all, &dm);
    let g = load_vector(pb, &pressure)?;
    let zero = DVector::zeros(dm.n_active());
    let (xs, r) = linalg::solve_saddle(&m, &b, &zero, &g)?;
    let scale = g.norm().max(1e-300);
    let flux_res = (m.matvec(&xs) + b.matvec_transpose(&r)).norm();
    let div_res = (b.matvec(&xs) - &g).norm();
    let residual = check_residual(flux_res.hypot(div_res) / scale, "mixed system")?;
    let sigma = dm.expand(&xs);
    let gradient = mixed_gradient(pb, &flux, &sigma)?;
    Ok(SchemeOutput {
        solution: Solution::Mixed { flux, sigma, pressure, r },
        gradient,
        residual,
        p,
    })
}

/// -A^{-1} sigma_h carried in broken polynomials of the flux degree,
/// where it is represented exactly.
fn mixed_gradient(pb: &Problem, flux: &FeSpace, sigma: &DVector<f64>) -> Result<GradientField> {
    let mesh = pb.mesh;
    let mut field = GradientField::zeros(mesh, flux.degree)?;
    let rule = quadrature::tet_rule(form_degree(flux.degree));
    for k in 0..mesh.n_tets() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let (vals, _, _) = flux.vector_field(k, &pts, sigma);
        let ai = &pb.coef(k).a_inv;
        let tab = field.space.scalar_tab(k, &pts);
        let ids: Vec<usize> = field.space.element_dofs[k].clone();
        for q in 0..pts.len() {
            let gv = -(ai * vals[q]) * wts[q];
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
