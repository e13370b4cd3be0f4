//! Manufactured problems on the unit cube.  Each case fixes a boundary
//! partition, an exact solution honoring it, and the matching load; the
//! coefficient is an isotropic scaling of the identity, under which the
//! exact solution is unchanged and the load scales linearly.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Point3, Vector3};
use tetfem::assembly::{Coefficient, Problem};
use tetfem::mesh::{label_all_dirichlet, label_x_dirichlet, label_x_neumann, Mesh};
use tetfem::{Error, Result};

pub const CASE_NAMES: [&str; 4] = ["zero", "quadratic_x", "sine3", "sine_mixed_bc"];

pub struct ManufacturedCase {
    pub name: &'static str,
    /// A = scale * identity.
    pub scale: f64,
    pub load: Box<dyn Fn(&Point3<f64>) -> f64 + Send + Sync>,
    pub exact: fn(&Point3<f64>) -> f64,
    pub exact_gradient: fn(&Point3<f64>) -> Vector3<f64>,
    labeler: fn(&mut Mesh),
}

impl ManufacturedCase {
    pub fn label(&self, mesh: &mut Mesh) {
        (self.labeler)(mesh);
    }

    pub fn coefficient(&self) -> Coefficient {
        Coefficient::Constant(Matrix3::identity() * self.scale)
    }

    /// Attach the case data to an already labeled mesh.
    pub fn problem<'a>(&'a self, mesh: &'a Mesh) -> Result<Problem<'a>> {
        Problem::new(mesh, self.coefficient(), &*self.load)
    }

    /// Build, label, and return the mesh this case runs on.
    pub fn mesh(&self, n: usize) -> Result<Mesh> {
        let mut mesh = Mesh::structured_cube(n)?;
        self.label(&mut mesh);
        Ok(mesh)
    }
}

fn u_zero(_: &Point3<f64>) -> f64 {
    0.0
}
fn g_zero(_: &Point3<f64>) -> Vector3<f64> {
    Vector3::zeros()
}

fn u_quadratic(x: &Point3<f64>) -> f64 {
    x.x * (1.0 - x.x)
}
fn g_quadratic(x: &Point3<f64>) -> Vector3<f64> {
    Vector3::new(1.0 - 2.0 * x.x, 0.0, 0.0)
}

fn u_sine3(x: &Point3<f64>) -> f64 {
    (PI * x.x).sin() * (PI * x.y).sin() * (PI * x.z).sin()
}
fn g_sine3(x: &Point3<f64>) -> Vector3<f64> {
    let (sx, cx) = (PI * x.x).sin_cos();
    let (sy, cy) = (PI * x.y).sin_cos();
    let (sz, cz) = (PI * x.z).sin_cos();
    PI * Vector3::new(cx * sy * sz, sx * cy * sz, sx * sy * cz)
}

fn u_sine_mixed(x: &Point3<f64>) -> f64 {
    (PI * x.x).cos() * (PI * x.y).sin() * (PI * x.z).sin()
}
fn g_sine_mixed(x: &Point3<f64>) -> Vector3<f64> {
    let (sx, cx) = (PI * x.x).sin_cos();
    let (sy, cy) = (PI * x.y).sin_cos();
    let (sz, cz) = (PI * x.z).sin_cos();
    PI * Vector3::new(-sx * sy * sz, cx * cy * sz, cx * sy * cz)
}

/// Look up a case by name; `scale` sets A = scale * identity.
pub fn manufactured_case(name: &str, scale: f64) -> Result<ManufacturedCase> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "coefficient scale must be positive and finite, got {scale}"
        )));
    }
    let case = match name {
        "zero" => ManufacturedCase {
            name: "zero",
            scale,
            load: Box::new(|_| 0.0),
            exact: u_zero,
            exact_gradient: g_zero,
            labeler: label_all_dirichlet,
        },
        "quadratic_x" => ManufacturedCase {
            name: "quadratic_x",
            scale,
            load: Box::new(move |_| 2.0 * scale),
            exact: u_quadratic,
            exact_gradient: g_quadratic,
            labeler: label_x_dirichlet,
        },
        "sine3" => ManufacturedCase {
            name: "sine3",
            scale,
            load: Box::new(move |x| 3.0 * PI * PI * scale * u_sine3(x)),
            exact: u_sine3,
            exact_gradient: g_sine3,
            labeler: label_all_dirichlet,
        },
        "sine_mixed_bc" => ManufacturedCase {
            name: "sine_mixed_bc",
            scale,
            load: Box::new(move |x| 3.0 * PI * PI * scale * u_sine_mixed(x)),
            exact: u_sine_mixed,
            exact_gradient: g_sine_mixed,
            labeler: label_x_neumann,
        },
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown manufactured case {other:?}; known cases: {CASE_NAMES:?}"
            )))
        }
    };
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tetfem::schemes::{solve_conforming, solve_ipdg, solve_mixed, DEFAULT_BETA};

    #[test]
    fn zero_case_is_solved_by_zero() {
        let case = manufactured_case("zero", 1.0).unwrap();
        let mesh = case.mesh(1).unwrap();
        let pb = case.problem(&mesh).unwrap();
        for out in [
            solve_conforming(&pb, 1).unwrap(),
            solve_ipdg(&pb, 1, DEFAULT_BETA, None).unwrap(),
            solve_mixed(&pb, 1).unwrap(),
        ] {
            let rule = tetfem::quadrature::tet_rule(4);
            for k in 0..mesh.tets.len() {
                let (pts, _) = mesh.tet_quadrature(k, &rule);
                for v in out.solution.primal_value(k, &pts) {
                    assert!(v.abs() <= 1e-12);
                }
                for g in out.gradient.value(k, &pts) {
                    assert!(g.norm() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn boundary_partitions_match_the_exact_solutions() {
        // quadratic_x: the flux has no component through the y/z faces.
        let q = manufactured_case("quadratic_x", 3.0).unwrap();
        // sine_mixed_bc: the normal derivative vanishes on the x faces.
        let m = manufactured_case("sine_mixed_bc", 1.0).unwrap();
        for t in [0.0, 0.3, 0.77, 1.0] {
            for s in [0.1, 0.5, 0.9] {
                let gq = (q.exact_gradient)(&Point3::new(t, s, 1.0 - s));
                assert_eq!(gq.y, 0.0);
                assert_eq!(gq.z, 0.0);
                for x in [0.0, 1.0] {
                    let gm = (m.exact_gradient)(&Point3::new(x, t, s));
                    assert!(gm.x.abs() <= 1e-15);
                    assert!((m.exact)(&Point3::new(s, x, t)).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn unknown_names_and_bad_scales_are_rejected()  {
        assert!(manufactured_case("sine", 1.0).is_err());
        assert!(manufactured_case("sine3", 0.0).is_err());
        assert!(manufactured_case("sine3", f64::NAN).is_err());
    }
}
