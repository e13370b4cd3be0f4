//! Monomial bookkeeping shared by the element constructions: multi-index
//! enumeration and centered evaluation in scaled local coordinates.
//!
//! All volume monomials are evaluated at y = (x - x0)/h where x0 is the
//! element centroid and h the element diameter, which keeps the generator
//! and Gram matrices well conditioned independently of the mesh size.

use nalgebra::Vector3;

/// dim P_d in 3D: (d+1)(d+2)(d+3)/6.
pub fn dim_p3(d: usize) -> usize {
    (d + 1) * (d + 2) * (d + 3) / 6
}

/// dim P_d in 2D: (d+1)(d+2)/2.
pub fn dim_p2(d: usize) -> usize {
    (d + 1) * (d + 2) / 2
}

/// Number of 3D monomials of exact total degree d.
pub fn dim_h3(d: usize) -> usize {
    (d + 1) * (d + 2) / 2
}

/// All |a| <= deg, ordered by total degree, then lexicographically.
/// The ordering is part of the dof-numbering contract: two elements sharing
/// an entity enumerate the entity's moment functionals identically.
pub fn multi_indices_3d(deg: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(dim_p3(deg));
    for d in 0..=deg {
        for i in (0..=d).rev() {
            for j in (0..=d - i).rev() {
                out.push([i, j, d - i - j]);
            }
        }
    }
    out
}

/// Multi-indices of exact total degree deg, lexicographic.
pub fn homogeneous_3d(deg: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(dim_h3(deg));
    for i in (0..=deg).rev() {
        for j in (0..=deg - i).rev() {
            out.push([i, j, deg - i - j]);
        }
    }
    out
}

/// All |a| <= deg in 2D, ordered by total degree, then lexicographically.
pub fn multi_indices_2d(deg: usize) -> Vec<[usize; 2]> {
    let mut out = Vec::with_capacity(dim_p2(deg));
    for d in 0..=deg {
        for i in (0..=d).rev() {
            out.push([i, d - i]);
        }
    }
    out
}

pub fn eval3(a: [usize; 3], y: &Vector3<f64>) -> f64 {
    y.x.powi(a[0] as i32) * y.y.powi(a[1] as i32) * y.z.powi(a[2] as i32)
}

/// Gradient with respect to the scaled coordinate y (not physical x).
pub fn grad3(a: [usize; 3], y: &Vector3<f64>) -> Vector3<f64> {
    let d = |k: usize| -> f64 {
        if a[k] == 0 {
            return 0.0;
        }
        let mut b = a;
        b[k] -= 1;
        a[k] as f64 * eval3(b, y)
    };
    Vector3::new(d(0), d(1), d(2))
}

pub fn eval2(a: [usize; 2], u: f64, v: f64) -> f64 {
    u.powi(a[0] as i32) * v.powi(a[1] as i32)
}
