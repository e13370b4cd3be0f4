//! Command-line front end.  Exit codes: 0 success, 1 usage or input errors,
//! 2 numerical failures (solver breakdown, violated invariants).

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tetfem::estimators::equilibrated::estimate_equilibrated;
use tetfem::mesh::Bc;
use tetfem::schemes::DEFAULT_BETA;
use tetfem::{Error, Result};

use crate::errors::{canonical_measure, exact_error};
use crate::manufactured::manufactured_case;
use crate::ps::{default_oracle_degree, prager_synge_check};
use crate::study::{run_estimator, run_scheme, stored_dofs, write_study, StudyConfig};
use crate::vtk::export_vtk;

#[derive(Parser)]
#[command(
    name = "workbench",
    version,
    about = "Tetrahedral diffusion workbench: manufactured solutions, three \
             discretizations, and a posteriori error estimators"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ProblemArgs {
    /// Manufactured case.
    #[arg(long, default_value = "sine3")]
    case: String,
    /// Subdivisions per axis of the unit cube.
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Scales the identity diffusion coefficient.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

#[derive(Args)]
struct SchemeArgs {
    /// Discretization: conforming, ipdg, or mixed.
    #[arg(long, default_value = "ipdg")]
    scheme: String,
    /// Polynomial degree.
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Interior penalty strength (ipdg only).
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print entity counts and boundary composition of the structured mesh.
    MeshInfo {
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Case whose boundary labeling to apply.
        #[arg(long, default_value = "sine3")]
        case: String,
    },
    /// Solve one manufactured case and report the exact error.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
    /// Solve, then run error estimators; optionally export per-element maps.
    Estimate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Comma-separated families; defaults to all applicable.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        /// Directory for one VTK file per family.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the guaranteed two-term bound against oracle minimizers.
    CheckPs {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Oracle degree; defaults to the smallest admissible choice.
        #[arg(long)]
        oracle: Option<usize>,
    },
    /// Run a JSON-configured convergence study and write CSV tables.
    Study {
        /// Path to the JSON configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured case.
        #[arg(long)]
        case: Option<String>,
        /// Override the configured scheme.
        #[arg(long)]
        scheme: Option<String>,
        /// Override the configured degree.
        #[arg(long)]
        p: Option<usize>,
        /// Override the configured penalty.
        #[arg(long)]
        beta: Option<f64>,
        /// Override the configured levels, comma separated.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        /// Override the configured estimator families, comma separated.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
    },
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code =
                if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                    0
                } else {
                    1
                };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.cmd) {
        Ok(()) => 0,
        Err(e @ (Error::InvalidArgument(_) | Error::MeshFormat(_) | Error::Io(_))) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::MeshInfo { n, case } => mesh_info(n, &case),
        Cmd::Solve { problem, scheme } => solve_cmd(&problem, &scheme),
        Cmd::Estimate { problem, scheme, estimators, out } => {
            estimate_cmd(&problem, &scheme, estimators, out)
        }
        Cmd::CheckPs { problem, scheme, oracle } => check_ps_cmd(&problem, &scheme, oracle),
        Cmd::Study { config, out, case, scheme, p, beta, n, estimators } => {
            study_cmd(&config, out, case, scheme, p, beta, n, estimators)
        }
    }
}

fn mesh_info(n: usize, case: &str) -> Result<()> {
    let case = manufactured_case(case, 1.0)?;
    let mesh = case.mesh(n)?;
    let boundary = mesh.faces.iter().filter(|f| f.tets.1.is_none()).count();
    let dirichlet = mesh.faces.iter().filter(|f| f.label == Some(Bc::Dirichlet)).count();
    let neumann = mesh.faces.iter().filter(|f| f.label == Some(Bc::Neumann)).count();
    println!("case       {}", case.name);
    println!("vertices   {}", mesh.vertices.len());
    println!("elements   {}", mesh.tets.len());
    println!("faces      {}  (boundary {boundary})", mesh.faces.len());
    println!("edges      {}", mesh.edges.len());
    println!("dirichlet  {dirichlet}");
    println!("neumann    {neumann}");
    println!("h          {:.6e}", mesh.geom[0].h);
    Ok(())
}

fn solve_cmd(problem: &ProblemArgs, scheme: &SchemeArgs) -> Result<()> {
    let case = manufactured_case(&problem.case, problem.scale)?;
    let mesh = case.mesh(problem.n)?;
    let pb = case.problem(&mesh)?;
    let out = run_scheme(&pb, &scheme.scheme, scheme.p, scheme.beta)?;
    let err = exact_error(&pb, &case.exact_gradient, &out, canonical_measure(&out), None)?;
    println!("case     {}", case.name);
    println!("scheme   {}  p {}  n {}", scheme.scheme, scheme.p, problem.n);
    println!("dofs     {}", stored_dofs(&out));
    println!("residual {:.3e}", out.residual);
    println!("error    {:.16e}", err.total());
    Ok(())
}

fn estimate_cmd(
    problem: &ProblemArgs,
    scheme: &SchemeArgs,
    estimators: Option<Vec<String>>,
    out_dir: Option<PathBuf>,
) -> Result<()> {
    let cfg = StudyConfig {
        case: problem.case.clone(),
        scheme: scheme.scheme.clone(),
        p: scheme.p,
        beta: scheme.beta,
        levels: vec![problem.n],
        estimators,
        coefficient_scale: problem.scale,
        error_quadrature: None,
        reliability_margin: 1e-6,
        out_dir: None,
    };
    cfg.validate()?;
    let case = manufactured_case(&cfg.case, cfg.coefficient_scale)?;
    let mesh = case.mesh(problem.n)?;
    let pb = case.problem(&mesh)?;
    let out = run_scheme(&pb, &cfg.scheme, cfg.p, cfg.beta)?;
    let err = exact_error(&pb, &case.exact_gradient, &out, canonical_measure(&out), None)?;
    let error = err.total();
    println!("error {error:.16e}");
    for fam in cfg.estimator_list() {
        let report = run_estimator(&fam, &pb, &out)?;
        let bound = report.reliability_sq().sqrt();
        let eff = if error > 0.0 {
            bound / error
        } else if bound == 0.0 {
            1.0
        } else {
            f64::INFINITY
        };
        println!("{fam:<13} eta {:.16e}  effectivity {eff:.4}", report.total());
        if let Some(dir) = &out_dir {
            let mut arrays = vec![("eta_sq".to_string(), report.element_sq.clone())];
            for (name, values) in &report.terms {
                arrays.push((format!("term_{name}"), values.clone()));
            }
            if let Some(osc) = &report.oscillation {
                arrays.push(("oscillation_sq".to_string(), osc.clone()));
            }
            arrays.push(("error_sq".to_string(), err.element_sq.clone()));
            let path = dir.join(format!("{fam}.vtk"));
            export_vtk(&mesh, &format!("{} {} estimator", case.name, fam), &arrays, &path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn check_ps_cmd(
    problem: &ProblemArgs,
    scheme: &SchemeArgs,
    oracle: Option<usize>,
) -> Result<()> {
    let case = manufactured_case(&problem.case, problem.scale)?;
    let mesh = case.mesh(problem.n)?;
    let pb = case.problem(&mesh)?;
    let out = run_scheme(&pb, &scheme.scheme, scheme.p, scheme.beta)?;
    let oracle = oracle.unwrap_or_else(|| default_oracle_degree(out.p));
    let crosscheck = estimate_equilibrated(&pb, &out)?
        .0
        .term("potential")
        .map(|t| t.iter().sum::<f64>());
    let report = prager_synge_check(
        &pb,
        &case.exact_gradient,
        &out.gradient,
        out.p,
        oracle,
        crosscheck,
    )?;
    println!("oracle degree        {}", report.oracle_degree);
    println!("error^2              {:.16e}", report.error_sq);
    println!("flux term^2          {:.16e}", report.flux_term_sq);
    println!("potential term^2     {:.16e}", report.potential_term_sq);
    println!("data term^2          {:.16e}", report.oscillation_sq);
    println!("defect               {:.16e}", report.defect);
    println!("sigma identity rel   {:.3e}", report.sigma_identity_rel);
    if let Some(cc) = report.curl_crosscheck_sq {
        println!("curl-free cross^2    {:.16e}  (same minimum, reconstruction route)", cc);
    }
    let guaranteed = report.flux_term_sq + report.potential_term_sq + report.oscillation_sq;
    println!(
        "bound check          error^2 <= {:.16e}  ({})",
        guaranteed,
        if report.error_sq <= guaranteed * (1.0 + 1e-9) + 1e-30 { "holds" } else { "VIOLATED" }
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn study_cmd(
    config: &PathBuf,
    out: Option<PathBuf>,
    case: Option<String>,
    scheme: Option<String>,
    p: Option<usize>,
    beta: Option<f64>,
    n: Option<Vec<usize>>,
    estimators: Option<Vec<String>>,
) -> Result<()> {
    let text = fs::read_to_string(config)?;
    let mut cfg = StudyConfig::from_json(&text)?;
    if let Some(v) = case {
        cfg.case = v;
    }
    if let Some(v) = scheme {
        cfg.scheme = v;
    }
    if let Some(v) = p {
        cfg.p = v;
    }
    if let Some(v) = beta {
        cfg.beta = v;
    }
    if let Some(v) = n {
        cfg.levels = v;
    }
    if let Some(v) = estimators {
        cfg.estimators = Some(v);
    }
    cfg.validate()?;
    let out_dir = out
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::InvalidArgument("no output directory: pass --out or set out_dir".into()))?;
    let (study_path, timings_path) = write_study(&cfg, &out_dir)?;
    println!("wrote {}", study_path.display());
    println!("wrote {}", timings_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_bad_flags_parse_as_expected() {
        assert!(Cli::try_parse_from(["workbench", "--help"]).is_err());
        assert!(Cli::try_parse_from(["workbench", "solve", "--case", "sine3"]).is_ok());
        assert!(Cli::try_parse_from(["workbench", "solve", "--bogus"]).is_err());
        let cli = Cli::try_parse_from([
            "workbench", "estimate", "--estimators", "residual,standard",
        ])
        .unwrap();
        let Cmd::Estimate { estimators, .. } = cli.cmd else {
            panic!("parsed into the wrong subcommand");
        };
        assert_eq!(estimators.unwrap(), ["residual", "standard"]);
    }
}
