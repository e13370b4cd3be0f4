//! Gauss rules on the reference simplices via conical products.
//!
//! The tetrahedron rule collapses the cube [0,1]^3 through
//! x = a, y = b(1-a), z = c(1-a)(1-b), whose Jacobian (1-a)^2 (1-b) is
//! absorbed into Gauss-Jacobi weights, so m points per direction integrate
//! total degree 2m-1 exactly. The triangle rule is the 2D analogue.

use nalgebra::{DMatrix, Vector2, Vector3};

/// Quadrature on the reference tetrahedron {x,y,z >= 0, x+y+z <= 1}.
#[derive(Debug, Clone)]
pub struct TetRule {
    pub points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

/// Quadrature on the reference triangle {u,v >= 0, u+v <= 1}.
#[derive(Debug, Clone)]
pub struct TriRule {
    pub points: Vec<Vector2<f64>>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

/// Quadrature on [0,1] with unit weight.
#[derive(Debug, Clone)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

/// Gauss-Jacobi nodes/weights on [0,1] against the weight (1-t)^alpha,
/// computed by Golub-Welsch from the monic three-term recurrence.
/// Nodes are returned in increasing order.
fn gauss_jacobi_01(n: usize, alpha: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let a = alpha as f64;
    // Monic Jacobi recurrence on [-1,1] with weight (1-x)^alpha (beta = 0).
    let rec_a = |k: usize| -> f64 {
        let k = k as f64;
        if k == 0.0 {
            -a / (a + 2.0)
        } else {
            (-a * a) / ((2.0 * k + a) * (2.0 * k + a + 2.0))
        }
    };
    let rec_b = |k: usize| -> f64 {
        let k = k as f64;
        4.0 * k * k * (k + a) * (k + a)
            / ((2.0 * k + a).powi(2) * (2.0 * k + a + 1.0) * (2.0 * k + a - 1.0))
    };
    // Zeroth moment of (1-x)^alpha on [-1,1]: 2^(alpha+1)/(alpha+1).
    let mu0 = 2f64.powi(alpha as i32 + 1) / (a + 1.0);

    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jac[(k, k)] = rec_a(k);
        if k + 1 < n {
            let off = rec_b(k + 1).sqrt();
            jac[(k, k + 1)] = off;
            jac[(k + 1, k)] = off;
        }
    }
    let eig = jac.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let mut pts = Vec::with_capacity(n);
    let mut wts = Vec::with_capacity(n);
    for &i in &order {
        let x = eig.eigenvalues[i];
        let v0 = eig.eigenvectors[(0, i)];
        // Map [-1,1] to [0,1]; the weight picks up 2^(alpha+1).
        pts.push((x + 1.0) / 2.0);
        wts.push(mu0 * v0 * v0 / 2f64.powi(alpha as i32 + 1));
    }
    (pts, wts)
}

/// Smallest point count per direction for exact total degree `deg`.
fn points_for(deg: usize) -> usize {
    deg / 2 + 1
}

pub fn line_rule(deg: usize) -> LineRule {
    let (points, weights) = gauss_jacobi_01(points_for(deg), 0);
    LineRule { points, weights, exact_degree: deg }
}

pub fn tri_rule(deg: usize) -> TriRule {
    let m = points_for(deg);
    let (pa, wa) = gauss_jacobi_01(m, 1);
    let (pb, wb) = gauss_jacobi_01(m, 0);
    let mut points = Vec::with_capacity(m * m);
    let mut weights = Vec::with_capacity(m * m);
    for (i, &a) in pa.iter().enumerate() {
        for (j, &b) in pb.iter().enumerate() {
            points.push(Vector2::new(a, b * (1.0 - a)));
            weights.push(wa[i] * wb[j]);
        }
    }
    TriRule { points, weights, exact_degree: deg }
}

pub fn tet_rule(deg: usize) -> TetRule {
    let m = points_for(deg);
    let (pa, wa) = gauss_jacobi_01(m, 2);
    let (pb, wb) = gauss_jacobi_01(m, 1);
    let (pc, wc) = gauss_jacobi_01(m, 0);
    let mut points = Vec::with_capacity(m * m * m);
    let mut weights = Vec::with_capacity(m * m * m);
    for (i, &a) in pa.iter().enumerate() {
        for (j, &b) in pb.iter().enumerate() {
            for (k, &c) in pc.iter().enumerate() {
                points.push(Vector3::new(a, b * (1.0 - a), c * (1.0 - a) * (1.0 - b)));
                weights.push(wa[i] * wb[j] * wc[k]);
            }
        }
    }
    TetRule { points, weights, exact_degree: deg }
}

/// Default exactness for assembling polynomial forms of degree `deg` trial
/// and test functions: 2*deg + 2.
pub fn form_degree(deg: usize) -> usize {
    2 * deg + 2
}

/// Exactness used whenever analytic data (loads, exact solutions) enters an
/// integral.
pub const DATA_DEGREE: usize = 10;

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn legendre_two_point_nodes() {
        let (p, w) = gauss_jacobi_01(2, 0);
        let s = 1.0 / 3f64.sqrt();
        assert!((p[0] - (1.0 - s) / 2.0).abs() < 1e-14);
        assert!((p[1] - (1.0 + s) / 2.0).abs() < 1e-14);
        assert!((w[0] - 0.5).abs() < 1e-14 && (w[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn jacobi_weighted_moments() {
        // Against (1-t)^alpha on [0,1]: integral of t^k is k! alpha! / (k+alpha+1)!.
        for alpha in 0..=2usize {
            for deg in 0..=9usize {
                let (p, w) = gauss_jacobi_01(points_for(deg), alpha);
                for k in 0..=deg {
                    let num: f64 = p.iter().zip(&w).map(|(t, w)| w * t.powi(k as i32)).sum();
                    let exact = factorial(k) * factorial(alpha) / factorial(k + alpha + 1);
                    assert!((num - exact).abs() < 1e-13, "alpha={alpha} k={k}");
                }
            }
        }
    }

    #[test]
    fn tet_monomials_exact() {
        for deg in 0..=8usize {
            let rule = tet_rule(deg);
            for i in 0..=deg {
                for j in 0..=deg - i {
                    for k in 0..=deg - i - j {
                        let num: f64 = rule
                            .points
                            .iter()
                            .zip(&rule.weights)
                            .map(|(p, w)| w * p.x.powi(i as i32) * p.y.powi(j as i32) * p.z.powi(k as i32))
                            .sum();
                        let exact = factorial(i) * factorial(j) * factorial(k)
                            / factorial(i + j + k + 3);
                        assert!((num - exact).abs() < 1e-13, "({i},{j},{k})");
                    }
                }
            }
        }
    }

    #[test]
    fn tri_monomials_exact() {
        for deg in 0..=8usize {
            let rule = tri_rule(deg);
            for i in 0..=deg {
                for j in 0..=deg - i {
                    let num: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p.x.powi(i as i32) * p.y.powi(j as i32))
                        .sum();
                    let exact = factorial(i) * factorial(j) / factorial(i + j + 2);
                    assert!((num - exact).abs() < 1e-14, "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn reference_measures() {
        let t = tet_rule(2);
        let s: f64 = t.weights.iter().sum();
        assert!((s - 1.0 / 6.0).abs() < 1e-15);
        let t = tri_rule(3);
        let s: f64 = t.weights.iter().sum();
        assert!((s - 0.5).abs() < 1e-15);
    }
}
