//! Polynomial generators for the element bases.
//!
//! Every basis function is a linear combination of these generators in the
//! element-local coordinate y = (x - x0)/h, where x0 is the element centroid
//! and h its diameter. Derivatives are reported with respect to the physical
//! coordinate x, which introduces the 1/h factors below.

use crate::poly;
use nalgebra::Vector3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gen {
    /// y^m.
    Monomial { m: [usize; 3] },
    /// y^m e_k.
    Axis { m: [usize; 3], k: usize },
    /// y^m y with homogeneous m: the Raviart-Thomas tail.
    Radial { m: [usize; 3] },
    /// y^m (y x e_k) with homogeneous m: the Nedelec tail.
    CrossAxis { m: [usize; 3], k: usize },
}

pub fn axis(k: usize) -> Vector3<f64> {
    let mut e = Vector3::zeros();
    e[k] = 1.0;
    e
}

impl Gen {
    /// Value and physical gradient of a scalar generator.
    pub fn scalar(&self, y: &Vector3<f64>, h: f64) -> (f64, Vector3<f64>) {
        match *self {
            Gen::Monomial { m } => (poly::eval3(m, y), poly::grad3(m, y) / h),
            _ => unreachable!("vector generator in a scalar basis"),
        }
    }

    /// Value, physical divergence, and physical curl of a vector generator.
    pub fn vector(&self, y: &Vector3<f64>, h: f64) -> (Vector3<f64>, f64, Vector3<f64>) {
        match *self {
            Gen::Monomial { .. } => unreachable!("scalar generator in a vector basis"),
            Gen::Axis { m, k } => {
                let v = poly::eval3(m, y);
                let g = poly::grad3(m, y) / h;
                (v * axis(k), g[k], g.cross(&axis(k)))
            }
            Gen::Radial { m } => {
                let v = poly::eval3(m, y);
                let g = poly::grad3(m, y);
                (v * y, (3.0 * v + y.dot(&g)) / h, g.cross(y) / h)
            }
            Gen::CrossAxis { m, k } => {
                let c = y.cross(&axis(k));
                let v = poly::eval3(m, y);
                let g = poly::grad3(m, y) / h;
                (v * c, g.dot(&c), g.cross(&c) - 2.0 * v / h * axis(k))
            }
        }
    }
}

/// Monomials spanning P_degree.
pub fn scalar_generators(degree: usize) -> Vec<Gen> {
    poly::multi_indices_3d(degree).into_iter().map(|m| Gen::Monomial { m }).collect()
}

/// P_{q-1}^3 plus the radial tail y H_{q-1}: exactly dim RT_q generators,
/// linearly independent.
pub fn rt_generators(q: usize) -> Vec<Gen> {
    let mut out = Vec::new();
    for k in 0..3 {
        for m in poly::multi_indices_3d(q - 1) {
            out.push(Gen::Axis { m, k });
        }
    }
    for m in poly::homogeneous_3d(q - 1) {
        out.push(Gen::Radial { m });
    }
    out
}

/// P_{q-1}^3 plus the rotational tail y x (H_{q-1})^3. The tail generators
/// satisfy sum_k y_k (y x e_k) m = 0, so this list is redundant for q >= 2
/// and the basis coefficients are taken from a pseudo-inverse.
pub fn nedelec_generators(q: usize) -> Vec<Gen> {
    let mut out = Vec::new();
    for k in 0..3 {
        for m in poly::multi_indices_3d(q - 1) {
            out.push(Gen::Axis { m, k });
        }
    }
    for k in 0..3 {
        for m in poly::homogeneous_3d(q - 1) {
            out.push(Gen::CrossAxis { m, k });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn numeric_div_curl(g: &Gen, y: &Vector3<f64>, h: f64) -> (Vector3<f64>, f64, Vector3<f64>) {
        // Differentiate in x: y = (x - x0)/h means dx = h dy.
        let eps = 1e-6;
        let val = g.vector(y, h).0;
        let mut jac = [[0.0f64; 3]; 3]; // jac[i][j] = d v_i / d x_j
        for j in 0..3 {
            let mut yp = *y;
            let mut ym = *y;
            yp[j] += eps / h;
            ym[j] -= eps / h;
            let vp = g.vector(&yp, h).0;
            let vm = g.vector(&ym, h).0;
            for i in 0..3 {
                jac[i][j] = (vp[i] - vm[i]) / (2.0 * eps);
            }
        }
        let div = jac[0][0] + jac[1][1] + jac[2][2];
        let curl = Vector3::new(jac[2][1] - jac[1][2], jac[0][2] - jac[2][0], jac[1][0] - jac[0][1]);
        (val, div, curl)
    }

    #[test]
    fn vector_calculus_matches_difference_quotients() {
        let mut rng = StdRng::seed_from_u64(40);
        let h = 0.7;
        let mut gens = Vec::new();
        for q in 1..=3usize {
            gens.extend(rt_generators(q));
            gens.extend(nedelec_generators(q));
        }
        for g in gens {
            let y = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let (_, div, curl) = g.vector(&y, h);
            let (_, ndiv, ncurl) = numeric_div_curl(&g, &y, h);
            assert!((div - ndiv).abs() < 1e-7, "{g:?}: div {div} vs {ndiv}");
            assert!((curl - ncurl).norm() < 1e-7, "{g:?}: curl {curl:?} vs {ncurl:?}");
        }
    }
}
