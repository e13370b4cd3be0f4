//! Exact error measures against a manufactured gradient.

use nalgebra::{Point3, Vector3};
use tetfem::assembly::{broken_gradient, Problem};
use tetfem::quadrature::{self, form_degree, DATA_DEGREE};
use tetfem::schemes::{SchemeOutput, Solution};
use tetfem::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMeasure {
    /// || grad u - G ||_A with G the scheme's discrete gradient; the exact
    /// solution is conforming, so its own lifting vanishes.
    IpdgEnergy,
    /// || A grad u + sigma_h ||_{A^-1}, mixed outputs only.
    MixedFlux,
    /// || grad u - grad_h u_h ||_A on the primal field, without lifting.
    BrokenGradient,
}

pub struct ErrorMap {
    pub element_sq: Vec<f64>,
    pub total_sq: f64,
}

impl ErrorMap {
    pub fn total(&self) -> f64 {
        self.total_sq.sqrt()
    }
}

/// The scheme's natural measure: flux distance for mixed outputs, lifted
/// energy distance otherwise.
pub fn canonical_measure(out: &SchemeOutput) -> ErrorMeasure {
    match out.solution {
        Solution::Mixed { .. } => ErrorMeasure::MixedFlux,
        _ => ErrorMeasure::IpdgEnergy,
    }
}

/// Per-element squared errors and their sum.  The quadrature override may
/// only strengthen the default exactness.
pub fn exact_error(
    pb: &Problem,
    exact_gradient: &dyn Fn(&Point3<f64>) -> Vector3<f64>,
    out: &SchemeOutput,
    measure: ErrorMeasure,
    quadrature_degree: Option<usize>,
) -> Result<ErrorMap> {
    if let Some(d) = quadrature_degree {
        if d < 10 {
            return Err(Error::InvalidArgument(format!(
                "error quadrature degree {d} is below the guaranteed exactness 10"
            )));
        }
    }
    let mesh = pb.mesh;
    let n = mesh.tets.len();

    // The broken primal gradient when asked for it; the mixed primal is -r_h.
    let (primal, sign) = match (measure, &out.solution) {
        (ErrorMeasure::BrokenGradient, Solution::Conforming { space, u })
        | (ErrorMeasure::BrokenGradient, Solution::InteriorPenalty { space, u, .. }) => {
            (Some(broken_gradient(mesh, space, u)?), 1.0)
        }
        (ErrorMeasure::BrokenGradient, Solution::Mixed { pressure, r, .. }) => {
            (Some(broken_gradient(mesh, pressure, r)?), -1.0)
        }
        (ErrorMeasure::MixedFlux, Solution::Mixed { .. }) => (None, 1.0),
        (ErrorMeasure::MixedFlux, _) => {
            return Err(Error::InvalidArgument(
                "the flux error measure needs a mixed output".into(),
            ))
        }
        (ErrorMeasure::IpdgEnergy, _) => (None, 1.0),
    };

    let deg = quadrature_degree
        .unwrap_or(DATA_DEGREE)
        .max(10)
        .max(form_degree(out.gradient.degree()));
    let rule = quadrature::tet_rule(deg);

    let mut element_sq = vec![0.0; n];
    for (k, acc) in element_sq.iter_mut().enumerate() {
        let (pts, wts) = mesh.tet_quadrature(k, &rule);
        let mut s = 0.0;
        match measure {
            ErrorMeasure::MixedFlux => {
                let Solution::Mixed { flux, sigma, .. } = &out.solution else { unreachable!() };
                let a = pb.coef(k).a;
                let ainv = pb.coef(k).a_inv;
                let svals = flux.vector_field(k, &pts, sigma).0;
                for (i, w) in wts.iter().enumerate() {
                    let d = a * exact_gradient(&pts[i]) + svals[i];
                    s += w * (ainv * d).dot(&d);
                }
            }
            _ => {
                let a = pb.coef(k).a;
                let gv = match &primal {
                    Some(gb) => gb.value(k, &pts),
                    None => out.gradient.value(k, &pts),
                };
                for (i, w) in wts.iter().enumerate() {
                    let d = exact_gradient(&pts[i]) - sign * gv[i];
                    s += w * (a * d).dot(&d);
                }
            }
        }
        *acc = s;
    }
    let total_sq = element_sq.iter().sum();
    Ok(ErrorMap { element_sq, total_sq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manufactured::manufactured_case;
    use tetfem::schemes::{solve_conforming, solve_mixed};

    #[test]
    fn exactly_reproduced_solutions_have_zero_error() {
        let case = manufactured_case("quadratic_x", 1.0).unwrap();
        let mesh = case.mesh(2).unwrap();
        let pb = case.problem(&mesh).unwrap();
        let out = solve_conforming(&pb, 2).unwrap();
        for m in [ErrorMeasure::IpdgEnergy, ErrorMeasure::BrokenGradient] {
            let e = exact_error(&pb, &case.exact_gradient, &out, m, None).unwrap();
            assert!(e.total() <= 1e-9, "{m:?}: {:.3e}", e.total());
        }
        let mx = solve_mixed(&pb, 2).unwrap();
        for m in [ErrorMeasure::IpdgEnergy, ErrorMeasure::MixedFlux] {
            let e = exact_error(&pb, &case.exact_gradient, &mx, m, None).unwrap();
            assert!(e.total() <= 1e-9, "mixed {m:?}: {:.3e}", e.total());
        }
    }

    #[test]
    fn zero_case_has_zero_error() {
        let case = manufactured_case("zero", 1.0).unwrap();
        let mesh = case.mesh(1).unwrap();
        let pb = case.problem(&mesh).unwrap();
        let out = solve_conforming(&pb, 1).unwrap();
        let e =
            exact_error(&pb, &case.exact_gradient, &out, ErrorMeasure::IpdgEnergy, None).unwrap();
        assert_eq!(e.total_sq, 0.0);
    }

    #[test]
    fn conforming_p1_halves_the_error_per_refinement() {
        let case = manufactured_case("sine3", 1.0).unwrap();
        let mut totals = Vec::new();
        for n in [2, 4] {
            let mesh = case.mesh(n).unwrap();
            let pb = case.problem(&mesh).unwrap();
            let out = solve_conforming(&pb, 1).unwrap();
            let e = exact_error(&pb, &case.exact_gradient, &out, ErrorMeasure::IpdgEnergy, None)
                .unwrap();
            totals.push(e.total());
        }
        let ratio = totals[0] / totals[1];
        assert!((1.5..=2.4).contains(&ratio), "rate ratio {ratio:.3}");
    }

    #[test]
    fn weak_quadrature_overrides_are_rejected() {
        let case = manufactured_case("zero", 1.0).unwrap();
        let mesh = case.mesh(1).unwrap();
        let pb = case.problem(&mesh).unwrap();
        let out = solve_conforming(&pb, 1).unwrap();
        let err = exact_error(&pb, &case.exact_gradient, &out, ErrorMeasure::IpdgEnergy, Some(4));
        assert!(err.is_err());
    }
}
