//! A posteriori error indicators.
//!
//! Three families share one report format: residual indicators read off the
//! strong residual of a discrete gradient, equilibrated indicators measure
//! the distance to hand-built conforming flux/potential reconstructions, and
//! the edge-patch family assembles three divergence-free fluxes from local
//! edge problems.  Oscillation is kept apart from the indicator terms
//! because reliability bounds add it on top of the estimator total.

pub mod alternative;
pub mod equilibrated;
pub mod residual;

use crate::mesh::Mesh;
use crate::{Error, Result};

/// Per-element squared indicators of one estimator family.
#[derive(Debug, Clone)]
pub struct EstimatorReport {
    pub family: String,
    pub scheme: String,
    pub degree: usize,
    /// Named squared contributions, each a per-element vector.
    pub terms: Vec<(String, Vec<f64>)>,
    /// Squared data-oscillation per element; not part of `element_sq`.
    pub oscillation: Option<Vec<f64>>,
    /// Sum of all terms per element.
    pub element_sq: Vec<f64>,
    pub total_sq: f64,
    /// Constants the underlying bound carries symbolically, if any.
    pub note: Option<String>,
}

impl EstimatorReport {
    pub fn new(
        family: &str,
        scheme: &str,
        degree: usize,
        n_elements: usize,
        terms: Vec<(String, Vec<f64>)>,
        oscillation: Option<Vec<f64>>,
        note: Option<String>,
    ) -> Result<EstimatorReport> {
        for (name, t) in &terms {
            if t.len() != n_elements {
                return Err(Error::InvalidArgument(format!(
                    "term {name} has {} entries for {n_elements} elements",
                    t.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Invariant(format!(
                    "term {name} holds a negative or non-finite square"
                )));
            }
        }
        if let Some(o) = &oscillation {
            if o.len() != n_elements || o.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Invariant("invalid oscillation entries".into()));
            }
        }
        let mut element_sq = vec![0.0; n_elements];
        for (_, t) in &terms {
            for (k, v) in t.iter().enumerate() {
                element_sq[k] += v;
            }
        }
        let total_sq = element_sq.iter().sum();
        Ok(EstimatorReport {
            family: family.into(),
            scheme: scheme.into(),
            degree,
            terms,
            oscillation,
            element_sq,
            total_sq,
            note,
        })
    }

    pub fn total(&self) -> f64 {
        self.total_sq.sqrt()
    }

    pub fn term(&self, name: &str) -> Option<&[f64]> {
        self.terms
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_slice())
    }

    pub fn oscillation_total_sq(&self) -> f64 {
        self.oscillation
            .as_ref()
            .map(|o| o.iter().sum())
            .unwrap_or(0.0)
    }

    /// Right-hand side of the guaranteed bound: estimator plus oscillation.
    pub fn reliability_sq(&self) -> f64 {
        self.total_sq + self.oscillation_total_sq()
    }
}

/// Elements sharing a vertex with element k.
pub fn single_extension(mesh: &Mesh, k: usize) -> Vec<usize> {
    mesh.extend_by_vertex(&[k])
}

/// Elements within two vertex hops of element k.  Residual weights take the
/// coefficient extremes over this neighborhood.
pub fn double_extension(mesh: &Mesh, k: usize) -> Vec<usize> {
    mesh.extend_by_vertex(&mesh.extend_by_vertex(&[k]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_totals_are_consistent() {
        let terms = vec![
            ("a".to_string(), vec![1.0, 2.0]),
            ("b".to_string(), vec![0.5, 0.0]),
        ];
        let r = EstimatorReport::new("x", "y", 1, 2, terms, Some(vec![0.25, 0.25]), None).unwrap();
        assert_eq!(r.element_sq, vec![1.5, 2.0]);
        assert_eq!(r.total_sq, 3.5);
        assert_eq!(r.reliability_sq(), 4.0);
        assert_eq!(r.term("b").unwrap(), &[0.5, 0.0]);
    }

    #[test]
    fn report_rejects_negative_and_misshaped_terms() {
        let bad = EstimatorReport::new(
            "x",
            "y",
            1,
            2,
            vec![("a".to_string(), vec![1.0, -1e-3])],
            None,
            None,
        );
        assert!(bad.is_err());
        let short = EstimatorReport::new("x", "y", 1, 3, vec![("a".to_string(), vec![1.0])], None, None);
        assert!(short.is_err());
    }

    #[test]
    fn extensions_grow_monotonically() {
        let mesh = Mesh::structured_cube(2).unwrap();
        for k in [0usize, 17, 40] {
            let one = single_extension(&mesh, k);
            let two = double_extension(&mesh, k);
            assert!(one.contains(&k));
            assert!(one.iter().all(|t| two.contains(t)));
            assert!(two.len() >= one.len());
        }
    }
}
