//! Convergence studies: a JSON-configured sweep over mesh levels producing
//! a deterministic CSV table plus a wall-clock sidecar.  The primary table
//! never contains timing data, so repeated runs of one configuration are
//! byte-identical; timings.csv is documented as outside that contract.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tetfem::assembly::Problem;
use tetfem::estimators::alternative::estimate_alternative;
use tetfem::estimators::equilibrated::estimate_equilibrated;
use tetfem::estimators::residual::{
    estimate_residual_ipdg, estimate_residual_mixed, estimate_standard_ipdg,
};
use tetfem::estimators::EstimatorReport;
use tetfem::schemes::{
    solve_conforming, solve_ipdg, solve_mixed, SchemeOutput, Solution, DEFAULT_BETA,
};
use tetfem::{Error, Result};

use crate::errors::{canonical_measure, exact_error};
use crate::manufactured::{manufactured_case, ManufacturedCase};

pub const SCHEME_NAMES: [&str; 3] = ["conforming", "ipdg", "mixed"];
pub const ESTIMATOR_NAMES: [&str; 4] = ["residual", "standard", "equilibrated", "alternative"];

fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_scale() -> f64 {
    1.0
}
fn default_margin() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub case: String,
    pub scheme: String,
    pub p: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Mesh subdivisions, strictly increasing.
    pub levels: Vec<usize>,
    /// Subset of the known estimator families; None means every family
    /// applicable to the scheme.
    #[serde(default)]
    pub estimators: Option<Vec<String>>,
    /// A = coefficient_scale * identity.
    #[serde(default = "default_scale")]
    pub coefficient_scale: f64,
    /// Quadrature degree for the exact-error columns; may only strengthen
    /// the built-in exactness.
    #[serde(default)]
    pub error_quadrature: Option<usize>,
    /// Relative slack allowed when checking the guaranteed equilibrated
    /// bound against the exact error.
    #[serde(default = "default_margin")]
    pub reliability_margin: f64,
    /// Where `study` writes its tables unless overridden on the command
    /// line.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Families the estimator modules implement for a scheme.
pub fn applicable_estimators(scheme: &str) -> &'static [&'static str] {
    match scheme {
        "ipdg" => &["residual", "standard", "equilibrated", "alternative"],
        _ => &["residual", "equilibrated", "alternative"],
    }
}

impl StudyConfig {
    /// Estimator list actually run: the configured subset, or everything
    /// applicable.
    pub fn estimator_list(&self) -> Vec<String> {
        match &self.estimators {
            Some(list) => list.clone(),
            None => applicable_estimators(&self.scheme).iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        manufactured_case(&self.case, self.coefficient_scale)?;
        if !SCHEME_NAMES.contains(&self.scheme.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "unknown scheme {:?}; known: {SCHEME_NAMES:?}",
                self.scheme
            )));
        }
        let p_max = if self.scheme == "conforming" { 4 } else { 2 };
        if !(1..=p_max).contains(&self.p) {
            return Err(Error::InvalidArgument(format!(
                "degree {} outside 1..={p_max} for scheme {}",
                self.p, self.scheme
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidArgument("beta must be positive and finite".into()));
        }
        if self.levels.is_empty() || self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "levels must be nonempty and strictly increasing".into(),
            ));
        }
        if self.levels[0] == 0 {
            return Err(Error::InvalidArgument("levels must be at least 1".into()));
        }
        let allowed = applicable_estimators(&self.scheme);
        for e in self.estimator_list() {
            if !allowed.contains(&e.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "estimator {e:?} is not applicable to scheme {:?}; allowed: {allowed:?}",
                    self.scheme
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<StudyConfig> {
        let cfg: StudyConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run_scheme(pb: &Problem, scheme: &str, p: usize, beta: f64) -> Result<SchemeOutput> {
    match scheme {
        "conforming" => solve_conforming(pb, p),
        "ipdg" => solve_ipdg(pb, p, beta, None),
        "mixed" => solve_mixed(pb, p),
        other => Err(Error::InvalidArgument(format!("unknown scheme {other:?}"))),
    }
}

pub fn run_estimator(name: &str, pb: &Problem, out: &SchemeOutput) -> Result<EstimatorReport> {
    match name {
        "residual" => match out.solution {
            Solution::Mixed { .. } => estimate_residual_mixed(pb, out),
            _ => estimate_residual_ipdg(pb, out),
        },
        "standard" => estimate_standard_ipdg(pb, out),
        "equilibrated" => estimate_equilibrated(pb, out).map(|(r, _)| r),
        "alternative" => estimate_alternative(pb, out).map(|(r, _)| r),
        other => Err(Error::InvalidArgument(format!(
            "unknown estimator {other:?}; known: {ESTIMATOR_NAMES:?}"
        ))),
    }
}

pub fn stored_dofs(out: &SchemeOutput) -> usize {
    match &out.solution {
        Solution::Conforming { space, .. } | Solution::InteriorPenalty { space, .. } => {
            space.n_dofs
        }
        Solution::Mixed { flux, pressure, .. } => flux.n_dofs + pressure.n_dofs,
    }
}

/// Both tables of one study run, as in-memory text.
pub struct StudyTables {
    pub study_csv: String,
    pub timings_csv: String,
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Run the configured sweep.  Row order, column order, and float formatting
/// are fixed, and no randomness enters, which is what makes the primary
/// table reproducible byte for byte.
pub fn convergence_study(cfg: &StudyConfig) -> Result<StudyTables> {
    cfg.validate()?;
    let case: ManufacturedCase = manufactured_case(&cfg.case, cfg.coefficient_scale)?;
    let families = cfg.estimator_list();

    let mut header = vec![
        "level".to_string(),
        "n".to_string(),
        "h".to_string(),
        "dofs".to_string(),
        "error".to_string(),
    ];
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut timing_rows: Vec<String> = Vec::new();

    for (level, &n) in cfg.levels.iter().enumerate() {
        let t_level = Instant::now();
        let mesh = case.mesh(n)?;
        let pb = case.problem(&mesh)?;
        let t_solve = Instant::now();
        let out = run_scheme(&pb, &cfg.scheme, cfg.p, cfg.beta)?;
        let solve_seconds = t_solve.elapsed().as_secs_f64();

        let err = exact_error(
            &pb,
            &case.exact_gradient,
            &out,
            canonical_measure(&out),
            cfg.error_quadrature,
        )?;
        let error = err.total();

        let mut row = vec![
            level.to_string(),
            n.to_string(),
            fmt_float(mesh.geom[0].h),
            stored_dofs(&out).to_string(),
            fmt_float(error),
        ];

        let t_est = Instant::now();
        for fam in &families {
            let report = run_estimator(fam, &pb, &out)?;
            if level == 0 {
                header.push(format!("{fam}_eta"));
                for (name, _) in &report.terms {
                    header.push(format!("{fam}_{name}"));
                }
                if report.oscillation.is_some() {
                    header.push(format!("{fam}_oscillation"));
                }
                header.push(format!("{fam}_effectivity"));
            }
            row.push(fmt_float(report.total()));
            for (_, t) in &report.terms {
                row.push(fmt_float(t.iter().sum::<f64>().sqrt()));
            }
            if report.oscillation.is_some() {
                row.push(fmt_float(report.oscillation_total_sq().sqrt()));
            }
            let bound = report.reliability_sq().sqrt();
            let effectivity = if error > 0.0 {
                bound / error
            } else if bound == 0.0 {
                1.0
            } else {
                f64::INFINITY
            };
            row.push(fmt_float(effectivity));

            if fam == "equilibrated"
                && err.total_sq > report.reliability_sq() * (1.0 + cfg.reliability_margin)
            {
                return Err(Error::Invariant(format!(
                    "level {level} (n = {n}): exact error^2 {:.6e} exceeds the guaranteed \
                     bound {:.6e}",
                    err.total_sq,
                    report.reliability_sq()
                )));
            }
        }
        let estimate_seconds = t_est.elapsed().as_secs_f64();
        rows.push(row);
        timing_rows.push(format!(
            "{level},{n},{solve_seconds:.6},{estimate_seconds:.6},{:.6}",
            t_level.elapsed().as_secs_f64()
        ));
    }

    let mut study_csv = String::new();
    let _ = writeln!(study_csv, "{}", header.join(","));
    for row in rows {
        let _ = writeln!(study_csv, "{}", row.join(","));
    }
    let mut timings_csv = String::from("level,n,solve_seconds,estimate_seconds,total_seconds\n");
    for r in timing_rows {
        let _ = writeln!(timings_csv, "{r}");
    }
    Ok(StudyTables { study_csv, timings_csv })
}

/// Run the study and write `study.csv` plus `timings.csv` under `out_dir`.
pub fn write_study(cfg: &StudyConfig, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let tables = convergence_study(cfg)?;
    fs::create_dir_all(out_dir)?;
    let study_path = out_dir.join("study.csv");
    let timings_path = out_dir.join("timings.csv");
    fs::write(&study_path, tables.study_csv)?;
    fs::write(&timings_path, tables.timings_csv)?;
    Ok((study_path, timings_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> StudyConfig {
        StudyConfig {
            case: "zero".into(),
            scheme: "ipdg".into(),
            p: 1,
            beta: DEFAULT_BETA,
            levels: vec![1, 2],
            estimators: Some(vec!["residual".into()]),
            coefficient_scale: 1.0,
            error_quadrature: None,
            reliability_margin: 1e-6,
            out_dir: None,
        }
    }

    fn cells(csv: &str) -> Vec<Vec<String>> {
        csv.lines().map(|l| l.split(',').map(|c| c.to_string()).collect()).collect()
    }

    #[test]
    fn zero_case_produces_all_zero_columns() {
        let tables = convergence_study(&base_config()).unwrap();
        let table = cells(&tables.study_csv);
        let header = &table[0];
        for row in &table[1..] {
            for (name, cell) in header.iter().zip(row) {
                if name == "error" || name.ends_with("_eta") {
                    assert_eq!(cell.parse::<f64>().unwrap(), 0.0, "{name} = {cell}");
                }
            }
        }
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let mut cfg = base_config();
        cfg.case = "sine3".into();
        let a = convergence_study(&cfg).unwrap();
        let b = convergence_study(&cfg).unwrap();
        assert_eq!(a.study_csv, b.study_csv);
    }

    #[test]
    fn ipdg_error_column_halves_per_refinement() {
        let mut cfg = base_config();
        cfg.case = "sine3".into();
        cfg.levels = vec![2, 4];
        let tables = convergence_study(&cfg).unwrap();
        let table = cells(&tables.study_csv);
        let col = table[0].iter().position(|c| c == "error").unwrap();
        let e2: f64 = table[1][col].parse().unwrap();
        let e4: f64 = table[2][col].parse().unwrap();
        let ratio = e2 / e4;
        assert!((1.6..=2.4).contains(&ratio), "error ratio {ratio:.3}");
    }

    #[test]
    fn equilibrated_effectivity_is_at_least_one() {
        let mut cfg = base_config();
        cfg.case = "sine3".into();
        cfg.estimators = Some(vec!["equilibrated".into()]);
        let tables = convergence_study(&cfg).unwrap();
        let table = cells(&tables.study_csv);
        let col = table[0].iter().position(|c| c == "equilibrated_effectivity").unwrap();
        for row in &table[1..] {
            let eff: f64 = row[col].parse().unwrap();
            assert!(eff >= 1.0 - 1e-6, "effectivity {eff}");
        }
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let mut cfg = base_config();
        cfg.levels = vec![2, 2];
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.scheme = "mixed".into();
        cfg.estimators = Some(vec!["standard".into()]);
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.p = 3;
        assert!(cfg.validate().is_err());
        assert!(StudyConfig::from_json("{\"case\": \"sine3\"}").is_err());
        assert!(StudyConfig::from_json("not json").is_err());
    }
}
