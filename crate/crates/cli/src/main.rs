//! `biharm`: convergence studies, condition numbers, reconstruction
//! diagnostics and matrix export for the reconstructed-space biharmonic
//! solver.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use biharm_core::experiments::{
    lambda_study, run_convergence_study, run_dmt_check, run_refinement_study, unit_mesh, ConvergenceTable,
    ManufacturedCase, Problem, SolverKind, StudyOptions,
};
use biharm_core::patch::{build_all_patches, default_threshold};
use biharm_core::polyspace::poly_dim;
use biharm_core::{io, Error, Mesh, Penalties, ReconOperator};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "biharm",
    version,
    about = "Reconstructed-space IPDG solver for the biharmonic equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convergence table for a manufactured solution.
    #[command(args_override_self = true)]
    Solve(RunConfig),
    /// Convergence table plus κ(A_m), κ(A_L⁻¹A_m) and CG/PCG iteration counts.
    #[command(args_override_self = true)]
    Condition(RunConfig),
    /// Reconstruction constant Λ_m over a range of patch thresholds.
    #[command(name = "lambda-study", args_override_self = true)]
    LambdaStudy(RunConfig),
    /// Discrete Miranda–Talenti ratio for random broken polynomials.
    #[command(name = "dmt-check", args_override_self = true)]
    DmtCheck(RunConfig),
    /// Writes A_m, A_L, M_m and b in Matrix Market format.
    #[command(args_override_self = true)]
    Export(RunConfig),
    /// Mesh geometry and patch statistics.
    #[command(name = "mesh-info", args_override_self = true)]
    MeshInfo(RunConfig),
}

/// Every subcommand takes the same flags so one config file serves all of
/// them; each uses the subset it needs.
#[derive(Args, Debug, Clone, Serialize)]
struct RunConfig {
    /// Spatial dimension (2 or 3).
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Manufactured solution: ex1 (2D), ex2 (3D) or custom (needs --mesh).
    #[arg(long, value_parser = ["ex1", "ex2", "custom"])]
    example: Option<String>,
    /// Coarse mesh file covering the unit square or cube.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Polynomial degree of the reconstruction.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Comma-separated mesh sizes (cells per unit edge).
    #[arg(long)]
    n: Option<String>,
    /// Uniform refinements of --mesh.
    #[arg(long)]
    refines: Option<usize>,
    /// Patch threshold N_m (default ⌈1.5 dim P_m⌉).
    #[arg(long)]
    nm: Option<usize>,
    /// Threshold range for lambda-study, as `lo,hi`.
    #[arg(long)]
    nm_range: Option<String>,
    /// Penalty on h⁻³ value jumps.
    #[arg(long)]
    mu1: Option<f64>,
    /// Penalty on h⁻¹ normal-derivative jumps.
    #[arg(long)]
    mu2: Option<f64>,
    /// direct, cg, pcg-al, pcg-mg1 or pcg-mg2.
    #[arg(long, default_value = "pcg-mg1")]
    solver: String,
    /// Relative residual tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 3000)]
    max_iters: usize,
    /// Seed for random test functions.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Random trials per mesh in dmt-check.
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Run manifest: config, seed, version, wall time and results.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Directory for Matrix Market files of the finest mesh.
    #[arg(long, visible_alias = "out")]
    export: Option<PathBuf>,
    /// Allow meshes finer than 1/64 (2D) or 1/16 (3D).
    #[arg(long)]
    allow_large: bool,
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Exit status categories.
#[derive(Debug)]
enum Failure {
    Usage(String),
    NotConverged(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::NotConverged(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(s) | Failure::NotConverged(s) | Failure::Internal(s) => s,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::InconsistentMesh(_)
            | Error::PatchExhausted { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

const MAX_N_2D: usize = 64;
const MAX_N_3D: usize = 16;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_list(text: &str, what: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("{what}: '{s}' is not a non-negative integer")))
        })
        .collect()
}

impl RunConfig {
    fn validate(&self) -> Outcome {
        if !(2..=3).contains(&self.dim) {
            return Err(usage(format!("--dim must be 2 or 3, got {}", self.dim)));
        }
        if !(2..=6).contains(&self.m) {
            return Err(usage(format!("--m must be between 2 and 6, got {}", self.m)));
        }
        if self.m > 4 {
            eprintln!("warning: m = {} is outside the tested range 2..=4", self.m);
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(usage("--tol must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(usage("--max-iters must be positive"));
        }
        for (name, mu) in [("--mu1", self.mu1), ("--mu2", self.mu2)] {
            if mu.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
                return Err(usage(format!("{name} must be positive")));
            }
        }
        if self.example.as_deref() == Some("custom") && self.mesh.is_none() {
            return Err(usage("--example custom needs --mesh"));
        }
        Ok(())
    }

    fn solver(&self) -> Result<SolverKind, Failure> {
        Ok(SolverKind::parse(&self.solver)?)
    }

    fn penalties(&self) -> Option<Penalties> {
        if self.mu1.is_none() && self.mu2.is_none() {
            return None;
        }
        let d = Penalties::default();
        Some(Penalties {
            mu1: self.mu1.unwrap_or(d.mu1),
            mu2: self.mu2.unwrap_or(d.mu2),
        })
    }

    fn study_options(&self) -> Result<StudyOptions, Failure> {
        let mut opts = StudyOptions::new(self.m);
        opts.nm = self.nm;
        opts.penalties = self.penalties();
        opts.solver = self.solver()?;
        opts.tol = self.tol;
        opts.max_iters = self.max_iters;
        if self.nm.is_some_and(|nm| nm < self.dim + 1) {
            return Err(usage(format!("--nm must be at least {}", self.dim + 1)));
        }
        Ok(opts)
    }

    /// Mesh sizes, defaulting to `default`; enforces the desk-scale caps.
    fn sizes(&self, default: &[usize]) -> Result<Vec<usize>, Failure> {
        let ns = match &self.n {
            Some(s) => parse_list(s, "--n")?,
            None => default.to_vec(),
        };
        let cap = if self.dim == 2 { MAX_N_2D } else { MAX_N_3D };
        for &n in &ns {
            if n < 2 {
                return Err(usage("--n entries must be at least 2 (no interior nodes otherwise)"));
            }
            if n > cap && !self.allow_large {
                return Err(usage(format!(
                    "n = {n} exceeds the {}D limit {cap}; pass --allow-large",
                    self.dim
                )));
            }
        }
        Ok(ns)
    }

    fn single_size(&self, default: usize) -> Result<usize, Failure> {
        match self.sizes(&[default])?.as_slice() {
            [n] => Ok(*n),
            _ => Err(usage("this command takes a single --n")),
        }
    }

    /// The case to run: the named example or the one matching the mesh
    /// dimension.
    fn case(&self, dim: usize) -> Result<ManufacturedCase, Failure> {
        let name = match self.example.as_deref() {
            None | Some("custom") => {
                if dim == 2 {
                    "ex1"
                } else {
                    "ex2"
                }
            }
            Some(n) => n,
        };
        let case = ManufacturedCase::by_name(name)?;
        if case.dim != dim {
            return Err(usage(format!(
                "{name} is a {}D example but the run is {dim}D",
                case.dim
            )));
        }
        Ok(case)
    }

    fn custom_mesh(&self) -> Result<Option<Mesh>, Failure> {
        let Some(path) = &self.mesh else { return Ok(None) };
        let mesh = io::read_mesh(path)?;
        if mesh.dim() != self.dim {
            return Err(usage(format!(
                "{} is {}D but --dim is {}",
                path.display(),
                mesh.dim(),
                self.dim
            )));
        }
        if mesh.n_interior_nodes() == 0 {
            return Err(usage(format!("{} has no interior nodes", path.display())));
        }
        Ok(Some(mesh))
    }

    /// Mesh for single-mesh commands: the custom mesh refined `--refines`
    /// times, or the structured mesh with `--n` cells per edge.
    fn single_mesh(&self, default_n: usize) -> Result<(Mesh, String), Failure> {
        match self.custom_mesh()? {
            Some(mut mesh) => {
                let r = self.refines.unwrap_or(0);
                for _ in 0..r {
                    mesh = mesh.refine()?.0;
                }
                Ok((mesh, format!("refines={r}")))
            }
            None => {
                let n = self.single_size(default_n)?;
                Ok((unit_mesh(self.dim, n)?, format!("n={n}")))
            }
        }
    }
}

fn check_unit_box(mesh: &Mesh) -> Outcome {
    let d = mesh.dim();
    for i in 0..d {
        let lo = mesh.coords().iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
        let hi = mesh.coords().iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
        if lo.abs() > 1e-12 || (hi - 1.0).abs() > 1e-12 {
            return Err(usage(
                "the manufactured examples need a mesh of the unit square or cube",
            ));
        }
    }
    Ok(())
}

fn export_problem(case: &ManufacturedCase, mesh: Mesh, opts: &StudyOptions, dir: &Path) -> Outcome {
    let prob = Problem::setup(case, mesh, opts)?;
    let sys = &prob.system;
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    io::write_matrix_market(&dir.join("A_m.mtx"), sys.matrix())?;
    io::write_matrix_market(&dir.join("A_L.mtx"), sys.low_order())?;
    io::write_matrix_market(&dir.join("M_m.mtx"), sys.mass())?;
    io::write_matrix_market_vector(&dir.join("b.mtx"), &prob.rhs)?;
    io::write_mesh(&dir.join("mesh.txt"), &prob.mesh)?;
    println!(
        "wrote A_m.mtx, A_L.mtx, M_m.mtx, b.mtx, mesh.txt to {} ({} unknowns, N_m = {})",
        dir.display(),
        sys.n_dofs(),
        sys.recon().threshold()
    );
    Ok(())
}

struct Run {
    cfg: RunConfig,
    command: &'static str,
    start: Instant,
}

impl Run {
    fn manifest(&self, result: serde_json::Value) -> Outcome {
        let Some(path) = &self.cfg.json else { return Ok(()) };
        let value = json!({
            "tool": "biharm",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.cfg,
            "seed": self.cfg.seed,
            "threads": rayon::current_num_threads(),
            "wall_seconds": self.start.elapsed().as_secs_f64(),
            "result": result,
        });
        io::write_json(path, &value)?;
        Ok(())
    }

    fn csv(&self, text: &str) -> Outcome {
        if let Some(path) = &self.cfg.csv {
            io::write_text(path, text)?;
        }
        Ok(())
    }

    fn study(&self, conditions: bool) -> Outcome {
        let cfg = &self.cfg;
        let mut opts = cfg.study_options()?;
        if conditions {
            opts.conditions = true;
            opts.count_solvers = vec![SolverKind::Cg, SolverKind::PcgMg1, SolverKind::PcgMg2];
        }
        let case = cfg.case(cfg.dim)?;
        let (table, label, finest): (ConvergenceTable, &str, Mesh) = match cfg.custom_mesh()? {
            Some(coarse) => {
                check_unit_box(&coarse)?;
                let r = cfg.refines.unwrap_or(2);
                let table = run_refinement_study(&case, &coarse, r, &opts)?;
                let mut fine = coarse;
                if cfg.export.is_some() {
                    for _ in 0..r {
                        fine = fine.refine()?.0;
                    }
                }
                (table, "refines", fine)
            }
            None => {
                let ns = cfg.sizes(&[8, 16, 32])?;
                let table = run_convergence_study(&case, &ns, &opts)?;
                let n_max = *ns.iter().max().expect("at least 3 sizes");
                let fine = if cfg.export.is_some() {
                    biharm_core::MeshHierarchy::structured(cfg.dim, n_max, opts.max_coarse_dofs)?
                        .finest()
                        .clone()
                } else {
                    unit_mesh(cfg.dim, 1)?
                };
                (table, "n", fine)
            }
        };
        print!("{}", report::convergence(&table, label));
        self.csv(&io::convergence_csv(&table))?;
        if let Some(dir) = &cfg.export {
            export_problem(&case, finest, &opts, dir)?;
        }
        self.manifest(json!({
            "table": table,
            "fitted_l2_rate": finite_or_null(table.fitted_l2_rate()),
            "fitted_energy_rate": finite_or_null(table.fitted_energy_rate()),
        }))?;
        if let Some(r) = table.rows.iter().find(|r| r.is_error()) {
            return Err(Failure::Internal(format!(
                "row {}: {}",
                r.n,
                r.failure.as_deref().unwrap_or("failed")
            )));
        }
        if let Some(r) = table.rows.iter().find(|r| !r.converged) {
            return Err(Failure::NotConverged(format!(
                "row {}: {}",
                r.n,
                r.failure.as_deref().unwrap_or("no convergence")
            )));
        }
        Ok(())
    }

    fn lambda_study(&self) -> Outcome {
        let cfg = &self.cfg;
        let (mesh, label) = cfg.single_mesh(16)?;
        let p = poly_dim(cfg.dim, cfg.m);
        let (lo, hi) = match &cfg.nm_range {
            Some(s) => match parse_list(s, "--nm-range")?.as_slice() {
                [a, b] => (*a, *b),
                _ => return Err(usage("--nm-range takes two values: lo,hi")),
            },
            None => ((6 * p).div_ceil(5), 5 * p / 2),
        };
        if lo < p || lo > hi {
            return Err(usage(format!(
                "--nm-range needs dim P_m = {p} <= lo <= hi, got {lo},{hi}"
            )));
        }
        if hi > mesh.n_nodes() {
            return Err(usage(format!(
                "--nm-range upper end {hi} exceeds the {} mesh nodes",
                mesh.n_nodes()
            )));
        }
        let rows = lambda_study(&mesh, cfg.m, lo..=hi)?;
        println!("lambda study {label} m={} dim P_m={p}", cfg.m);
        print!("{}", report::lambda(&rows));
        self.csv(&io::lambda_csv(&rows))?;
        self.manifest(json!({ "rows": rows }))
    }

    fn dmt_check(&self) -> Outcome {
        let cfg = &self.cfg;
        let meshes: Vec<Mesh> = match cfg.custom_mesh()? {
            Some(coarse) => {
                let mut out = vec![coarse];
                for _ in 0..cfg.refines.unwrap_or(2) {
                    let next = out.last().expect("nonempty").refine()?.0;
                    out.push(next);
                }
                out
            }
            None => cfg
                .sizes(&[4, 8, 16])?
                .into_iter()
                .map(|n| unit_mesh(cfg.dim, n))
                .collect::<Result<_, _>>()?,
        };
        let mut rows = Vec::new();
        for (i, mesh) in meshes.iter().enumerate() {
            let mut r = run_dmt_check(mesh, cfg.m, cfg.trials, cfg.seed)?;
            if cfg.mesh.is_some() {
                r.n = i;
            }
            rows.push(r);
        }
        let label = if cfg.mesh.is_some() { "refines" } else { "n" };
        print!("{}", report::dmt(&rows, label));
        self.csv(&io::dmt_csv(&rows))?;
        self.manifest(json!({ "rows": rows }))
    }

    fn export(&self) -> Outcome {
        let cfg = &self.cfg;
        let Some(dir) = &cfg.export else {
            return Err(usage("export needs --out <dir>"));
        };
        let (mesh, label) = cfg.single_mesh(8)?;
        check_unit_box(&mesh)?;
        let case = cfg.case(mesh.dim())?;
        let opts = cfg.study_options()?;
        println!("{} {label} m={}", case.name, cfg.m);
        export_problem(&case, mesh, &opts, dir)?;
        self.manifest(json!({ "dir": dir }))
    }

    fn mesh_info(&self) -> Outcome {
        let cfg = &self.cfg;
        let (mesh, label) = cfg.single_mesh(8)?;
        let nm = cfg.nm.unwrap_or_else(|| default_threshold(mesh.dim(), cfg.m));
        let boundary_faces = mesh.faces().iter().filter(|f| f.is_boundary()).count();
        let patches = build_all_patches(&mesh, nm)?;
        let mut depth_hist = vec![0usize; patches.iter().map(|p| p.depth).max().unwrap_or(0) + 1];
        for p in &patches {
            depth_hist[p.depth] += 1;
        }
        let nodes_min = patches.iter().map(|p| p.nodes.len()).min().unwrap_or(0);
        let nodes_max = patches.iter().map(|p| p.nodes.len()).max().unwrap_or(0);
        let recon = ReconOperator::build_adaptive(&mesh, cfg.m, nm)?;

        println!("mesh {label} dim={}", mesh.dim());
        println!(
            "nodes            {} ({} interior)",
            mesh.n_nodes(),
            mesh.n_interior_nodes()
        );
        println!("elements         {}", mesh.n_elements());
        println!("faces            {} ({} boundary)", mesh.faces().len(), boundary_faces);
        println!("h                {:.6}", mesh.mesh_size());
        println!("h / rho_min      {:.4}", mesh.quasi_uniformity());
        println!("patches at N_m = {nm} (m = {}):", cfg.m);
        println!("  #I(K)          {nodes_min}..{nodes_max}");
        let hist: Vec<String> = depth_hist
            .iter()
            .enumerate()
            .map(|(t, c)| format!("t={t}: {c}"))
            .collect();
        println!("  rings          {}", hist.join(", "));
        println!(
            "reconstruction   N_m = {}, Lambda_m = {:.4}",
            recon.threshold(),
            recon.stats().lambda
        );

        self.manifest(json!({
            "nodes": mesh.n_nodes(),
            "interior_nodes": mesh.n_interior_nodes(),
            "elements": mesh.n_elements(),
            "faces": mesh.faces().len(),
            "boundary_faces": boundary_faces,
            "h": mesh.mesh_size(),
            "quasi_uniformity": mesh.quasi_uniformity(),
            "nm": nm,
            "patch_nodes": [nodes_min, nodes_max],
            "ring_histogram": depth_hist,
            "recon_threshold": recon.threshold(),
            "lambda_m": recon.stats().lambda,
        }))
    }
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

fn init_threads() -> Outcome {
    let Ok(v) = std::env::var("BIHARM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("BIHARM_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Internal(format!("thread pool: {e}")))
}

fn run(argv: Vec<String>) -> Outcome {
    let argv = config::merge(argv).map_err(usage)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(usage(e.render().to_string())),
    };
    init_threads()?;
    let (command, cfg) = match cli.command {
        Command::Solve(c) => ("solve", c),
        Command::Condition(c) => ("condition", c),
        Command::LambdaStudy(c) => ("lambda-study", c),
        Command::DmtCheck(c) => ("dmt-check", c),
        Command::Export(c) => ("export", c),
        Command::MeshInfo(c) => ("mesh-info", c),
    };
    cfg.validate()?;
    let run = Run {
        cfg,
        command,
        start: Instant::now(),
    };
    let out = match command {
        "solve" => run.study(false),
        "condition" => run.study(true),
        "lambda-study" => run.lambda_study(),
        "dmt-check" => run.dmt_check(),
        "export" => run.export(),
        _ => run.mesh_info(),
    };
    eprintln!("{command} finished in {:.2} s", run.start.elapsed().as_secs_f64());
    out
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message().trim_end());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn later_flags_override_earlier_ones() {
        let cli = Cli::try_parse_from(["biharm", "solve", "--m", "3", "--m", "2"]).unwrap();
        let Command::Solve(c) = cli.command else { panic!() };
        assert_eq!(c.m, 2);
    }

    #[test]
    fn list_parsing_reports_bad_entries() {
        assert_eq!(parse_list("8, 16,32", "--n").unwrap(), vec![8, 16, 32]);
        assert!(matches!(parse_list("8,x", "--n"), Err(Failure::Usage(m)) if m.contains("'x'")));
    }

    #[test]
    fn error_categories_map_to_exit_codes() {
        assert_eq!(Failure::from(Error::InvalidArgument("x".into())).code(), 1);
        assert_eq!(
            Failure::from(Error::NotPositiveDefinite { pivot: 0, value: -1.0 }).code(),
            3
        );
        assert_eq!(Failure::NotConverged(String::new()).code(), 2);
    }
}
