//! Numerical check of the Prager-Synge decomposition: for any broken field
//! G, the squared energy distance to the exact gradient splits exactly into
//! a flux-equilibration minimum plus a distance-to-gradients minimum.  The
//! potential minimum is approximated from above by a conforming oracle
//! solve.  The flux oracle equilibrates only the projected load (its
//! divergence is Pi f, not f), so its term alone may undershoot the exact
//! flux minimum by a data-dependent amount; the guaranteed inequality that
//! is enforced here therefore carries the Poincare data term
//! (h_K/pi)^2 ||f - Pi f||_K^2 on the flux side.  The raw two-term defect
//! is reported so callers can see how close the uncorrected sum comes.

use nalgebra::{Point3, Vector3};
use tetfem::assembly::{
    broken_gradient, div_pairing, field_load, load_vector, restrict_matrix, stiffness,
    weighted_gradient_load, weighted_vector_mass, DofMap, GradientField, Problem,
};
use tetfem::estimators::residual::data_oscillation_sq;
use tetfem::fem::{Family, FeSpace};
use tetfem::linalg;
use tetfem::mesh::Bc;
use tetfem::quadrature::{self, form_degree, DATA_DEGREE};
use tetfem::schemes::RESIDUAL_TOL;
use tetfem::{Error, Result};

/// Raviart-Thomas degrees stop here, and with them the flux oracle.
pub const ORACLE_CEILING: usize = 3;

#[derive(Debug, Clone)]
pub struct PragerSyngeReport {
    pub oracle_degree: usize,
    /// || grad u - G ||_A^2.
    pub error_sq: f64,
    /// || G + A^-1 sigma* ||_A^2 from the mixed oracle solve.
    pub flux_term_sq: f64,
    /// || G - grad s* ||_A^2 from the conforming oracle solve.
    pub potential_term_sq: f64,
    /// Sum over elements of (h_K/pi)^2 ||f - Pi f||_K^2 at the oracle's
    /// pressure degree; the price of div sigma matching f only weakly.
    pub oscillation_sq: f64,
    /// error_sq - (flux + potential); at most the oscillation term up to
    /// roundoff, and nonpositive when the load is piecewise polynomial.
    pub defect: f64,
    /// Relative gap in || A (grad s* - G) ||_{A^-1} = || G - grad s* ||_A.
    pub sigma_identity_rel: f64,
    /// || G - phi_h ||_A^2 of a curl-free reconstruction when one is
    /// supplied; like the potential term it over-estimates the same minimum.
    pub curl_crosscheck_sq: Option<f64>,
}

/// Oracle degree used when none is requested: the fixed low degree where it
/// is valid, raised to the smallest admissible degree p+1 beyond that, and
/// capped at the flux-space ceiling.
pub fn default_oracle_degree(p: usize) -> usize {
    2.max(p + 1).min(ORACLE_CEILING)
}

/// Approximate both Prager-Synge minima at the oracle degree, attach the
/// data term, and validate the report invariants.  `curl_crosscheck_sq` is
/// reported verbatim.
pub fn prager_synge_check(
    pb: &Problem,
    exact_gradient: &dyn Fn(&Point3<f64>) -> Vector3<f64>,
    g: &GradientField,
    p: usize,
    oracle_degree: usize,
    curl_crosscheck_sq: Option<f64>,
) -> Result<PragerSyngeReport> {
    if oracle_degree < p + 1 || oracle_degree > ORACLE_CEILING {
        return Err(Error::InvalidArgument(format!(
            "oracle degree {oracle_degree} outside [{}, {ORACLE_CEILING}]",
            p + 1
        )));
    }
    let mesh = pb.mesh;

    // Flux oracle: minimize || G + A^-1 sigma ||_A over the oracle-degree
    // flux space with zero Neumann trace and div sigma = projected load.
    let rt = FeSpace::new(mesh, Family::RaviartThomas, oracle_degree)?;
    let pr = FeSpace::new(mesh, Family::Broken, oracle_degree - 1)?;
    let cols = DofMap::new(rt.n_dofs, &rt.dofs_on_label(mesh, Bc::Neumann));
    let rows = DofMap::new(pr.n_dofs, &[]);
    let m = restrict_matrix(&weighted_vector_mass(pb, &rt, true)?, &cols, &cols);
    let bmat = restrict_matrix(&div_pairing(mesh, &rt, &pr)?, &rows, &cols);
    let top = -cols.restrict(&field_load(mesh, &rt, g)?);
    let bottom = load_vector(pb, &pr)?;
    let (xs, mult) = linalg::solve_saddle(&m, &bmat, &top, &bottom)?;
    let scale = top.norm().hypot(bottom.norm()).max(1e-300);
    let res = (m.matvec(&xs) + bmat.matvec_transpose(&mult) - &top)
        .norm()
        .hypot((bmat.matvec(&xs) - &bottom).norm())
        / scale;
    if res > RESIDUAL_TOL {
        return Err(Error::Solve(format!(
            "flux oracle solved only to relative residual {res:.3e}"
        )));
    }
    let sigma = cols.expand(&xs);

    // Potential oracle: the conforming field whose gradient is A-closest
    // to G, vanishing on the Dirichlet part.
    let lag = FeSpace::new(mesh, Family::Lagrange, oracle_degree)?;
    let dm = DofMap::new(lag.n_dofs, &lag.dofs_on_label(mesh, Bc::Dirichlet));
    let k_mat = restrict_matrix(&stiffness(pb, &lag)?, &dm, &dm);
    let rhs = dm.restrict(&weighted_gradient_load(pb, &lag, g)?);
    let xs = linalg::solve_spd(&k_mat, &rhs)?;
    let res = (k_mat.matvec(&xs) - &rhs).norm() / rhs.norm().max(1e-300);
    if res > RESIDUAL_TOL {
        return Err(Error::Solve(format!(
            "potential oracle solved only to relative residual {res:.3e}"
        )));
    }
    let s_star = dm.expand(&xs);
    let grad_s = broken_gradient(mesh, &lag, &s_star)?;

    let deg = DATA_DEGREE
        .max(form_degree(g.degree().max(rt.degree)))
        .max(form_degree(grad_s.degree()));
    let rule = quadrature::tet_rule(deg);
    let mut error_sq = 0.0;
    let mut flux_term_sq = 0.0;
    let mut potential_term_sq = 0.0;
    // The complementary flux A (grad s* - G), measured in the inverse
    // weight; equal to the potential term by the algebraic identity.
    let mut comp_flux_sq = 0.0;
    for k in 0..mesh.tets.len() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let a = pb.coef(k).a;
        let ainv = pb.coef(k).a_inv;
        let gv = g.value(k, &pts);
        let sv = rt.vector_field(k, &pts, &sigma).0;
        let dsv = grad_s.value(k, &pts);
        for (i, w) in wts.iter().enumerate() {
            let de = exact_gradient(&pts[i]) - gv[i];
            error_sq += w * (a * de).dot(&de);
            let df = gv[i] + ainv * sv[i];
            flux_term_sq += w * (a * df).dot(&df);
            let dp = gv[i] - dsv[i];
            potential_term_sq += w * (a * dp).dot(&dp);
            let cf = a * (dsv[i] - gv[i]);
            comp_flux_sq += w * (ainv * cf).dot(&cf);
        }
    }

    let sigma_identity_rel =
        (comp_flux_sq - potential_term_sq).abs() / potential_term_sq.max(1e-300);
    if sigma_identity_rel > 1e-11 && potential_term_sq > 1e-28 {
        return Err(Error::Invariant(format!(
            "complementary-flux identity off by {sigma_identity_rel:.3e} relative"
        )));
    }
    let osc_raw = data_oscillation_sq(pb, oracle_degree - 1)?;
    let oscillation_sq: f64 = (0..mesh.tets.len())
        .map(|k| (mesh.geom[k].h / std::f64::consts::PI).powi(2) * osc_raw[k])
        .sum();

    let defect = error_sq - (flux_term_sq + potential_term_sq);
    if defect > oscillation_sq + 1e-8 * error_sq {
        return Err(Error::Invariant(format!(
            "one-sided Prager-Synge inequality violated: error^2 {error_sq:.6e} \
             exceeds term sum {:.6e} plus data term {oscillation_sq:.6e}",
            flux_term_sq + potential_term_sq
        )));
    }

    Ok(PragerSyngeReport {
        oracle_degree,
        error_sq,
        flux_term_sq,
        potential_term_sq,
        oscillation_sq,
        defect,
        sigma_identity_rel,
        curl_crosscheck_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manufactured::manufactured_case;
    use tetfem::schemes::solve_conforming;

    #[test]
    fn exactly_reproduced_gradients_have_vanishing_terms() {
        let case = manufactured_case("quadratic_x", 1.0).unwrap();
        let mesh = case.mesh(2).unwrap();
        let pb = case.problem(&mesh).unwrap();
        let out = solve_conforming(&pb, 2).unwrap();
        let rep =
            prager_synge_check(&pb, &case.exact_gradient, &out.gradient, 2, 3, None).unwrap();
        assert!(rep.error_sq <= 1e-16);
        assert!(rep.flux_term_sq <= 1e-8, "flux term {:.3e}", rep.flux_term_sq);
        assert!(rep.potential_term_sq <= 1e-8, "potential term {:.3e}", rep.potential_term_sq);
    }

    #[test]
    fn oracle_degrees_outside_the_window_are_rejected() {
        let case = manufactured_case("zero", 1.0).unwrap();
        let mesh = case.mesh(1).unwrap();
        let pb = case.problem(&mesh).unwrap();
        let g = GradientField::zeros(&mesh, 0).unwrap();
        assert!(prager_synge_check(&pb, &case.exact_gradient, &g, 1, 1, None).is_err());
        assert!(prager_synge_check(&pb, &case.exact_gradient, &g, 1, 4, None).is_err());
        assert!(prager_synge_check(&pb, &case.exact_gradient, &g, 1, 2, None).is_ok());
    }

    #[test]
    fn default_degree_is_admissible_for_every_order() {
        for p in 1..=2 {
            let d = default_oracle_degree(p);
            assert!(d >= p + 1 && d <= ORACLE_CEILING);
        }
        assert_eq!(default_oracle_degree(1), 2);
        assert_eq!(default_oracle_degree(2), 3);
    }
}
