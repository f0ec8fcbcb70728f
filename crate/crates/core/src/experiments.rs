//! Manufactured solutions, discretization errors and convergence studies.

use std::f64::consts::PI;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::assemble::{
    data_degree, norm_parts, BoundaryData, BrokenField, BrokenPolynomial, DgSystem, Jet, NormKind, Penalties,
};
use crate::error::{Error, Result};
use crate::mesh::{dot3, Mesh, MeshHierarchy, Point};
use crate::patch::{build_all_patches, default_threshold};
use crate::polyspace::{poly_dim, LocalBasis, QuadratureRule};
use crate::recon::lambda_constants;
use crate::solver::{self, DirectSolve, MgHierarchy, MgVariant, SolveReport};
use crate::sparse::ProfileCholesky;

/// Exact solution of `Δ²u = f` with clamped boundary data taken from `u`.
#[derive(Clone, Copy, Debug)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub dim: usize,
    /// `u` and its derivatives up to third order.
    pub exact: fn(&Point) -> Jet,
    pub source: fn(&Point) -> f64,
    /// `u = 0` and `∂_n u = 0` on the boundary.
    pub homogeneous: bool,
}

impl ManufacturedCase {
    pub fn u(&self, x: &Point) -> f64 {
        (self.exact)(x).value
    }

    pub fn f(&self, x: &Point) -> f64 {
        (self.source)(x)
    }

    /// `g1 = u` on the boundary.
    pub fn g1(&self, x: &Point) -> f64 {
        (self.exact)(x).value
    }

    /// `g2 = ∂_n u` for the outward normal `n`.
    pub fn g2(&self, x: &Point, n: &Point) -> f64 {
        dot3(&(self.exact)(x).grad, n)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ex1" => Ok(example1()),
            "ex2" => Ok(example2()),
            _ => Err(Error::InvalidArgument(format!(
                "unknown example '{name}' (expected ex1 or ex2)"
            ))),
        }
    }
}

fn ex1_jet(x: &Point) -> Jet {
    // u = A(x) A(y) with A(t) = sin²(πt)
    let a = |t: f64| {
        [
            (PI * t).sin().powi(2),
            PI * (2.0 * PI * t).sin(),
            2.0 * PI * PI * (2.0 * PI * t).cos(),
            -4.0 * PI.powi(3) * (2.0 * PI * t).sin(),
        ]
    };
    let (ax, ay) = (a(x[0]), a(x[1]));
    let mut j = Jet {
        value: ax[0] * ay[0],
        grad: [ax[1] * ay[0], ax[0] * ay[1], 0.0],
        ..Jet::default()
    };
    j.hess[0][0] = ax[2] * ay[0];
    j.hess[1][1] = ax[0] * ay[2];
    j.hess[0][1] = ax[1] * ay[1];
    j.hess[1][0] = j.hess[0][1];
    j.grad_lap = [ax[3] * ay[0] + ax[1] * ay[2], ax[2] * ay[1] + ax[0] * ay[3], 0.0];
    j
}

fn ex1_source(x: &Point) -> f64 {
    let (c, d) = ((2.0 * PI * x[0]).cos(), (2.0 * PI * x[1]).cos());
    4.0 * PI.powi(4) * (4.0 * c * d - c - d)
}

/// `u = sin²(πx) sin²(πy)` on the unit square, homogeneous clamped data.
pub fn example1() -> ManufacturedCase {
    ManufacturedCase {
        name: "ex1",
        dim: 2,
        exact: ex1_jet,
        source: ex1_source,
        homogeneous: true,
    }
}

fn ex2_jet(x: &Point) -> Jet {
    let s = [(PI * x[0]).sin(), (PI * x[1]).sin(), (PI * x[2]).sin()];
    let c = [(PI * x[0]).cos(), (PI * x[1]).cos(), (PI * x[2]).cos()];
    let u = s[0] * s[1] * s[2];
    let grad = [
        PI * c[0] * s[1] * s[2],
        PI * s[0] * c[1] * s[2],
        PI * s[0] * s[1] * c[2],
    ];
    let mut hess = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            hess[a][b] = if a == b {
                -PI * PI * u
            } else {
                let o = 3 - a - b;
                PI * PI * c[a] * c[b] * s[o]
            };
        }
    }
    Jet {
        value: u,
        grad,
        hess,
        grad_lap: grad.map(|g| -3.0 * PI * PI * g),
    }
}

fn ex2_source(x: &Point) -> f64 {
    9.0 * PI.powi(4) * (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
}

/// `u = sin(πx) sin(πy) sin(πz)` on the unit cube; `u = 0` but `∂_n u ≠ 0`
/// on the boundary.
pub fn example2() -> ManufacturedCase {
    ManufacturedCase {
        name: "ex2",
        dim: 3,
        exact: ex2_jet,
        source: ex2_source,
        homogeneous: false,
    }
}

/// `u − u_h` as a broken field.
struct ErrorField<'a> {
    exact: fn(&Point) -> Jet,
    discrete: BrokenPolynomial<'a>,
}

impl BrokenField for ErrorField<'_> {
    fn jet(&self, k: usize, x: &Point) -> Jet {
        (self.exact)(x).sub(&self.discrete.jet(k, x))
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Errors {
    pub l2: f64,
    /// `⦀u − u_h⦀`.
    pub energy: f64,
}

/// Broken L2 and energy errors of the discrete solution given by `coefs`.
pub fn measure_errors(mesh: &Mesh, bases: &[LocalBasis], coefs: &[f64], case: &ManufacturedCase) -> Result<Errors> {
    let field = ErrorField {
        exact: case.exact,
        discrete: BrokenPolynomial { bases, coefs },
    };
    let parts = norm_parts(mesh, &field, data_degree(bases[0].degree()))?;
    Ok(Errors {
        l2: parts.l2.sqrt(),
        energy: parts.norm(NormKind::Energy),
    })
}

pub fn unit_mesh(dim: usize, n: usize) -> Result<Mesh> {
    match dim {
        2 => Mesh::unit_square(n),
        3 => Mesh::unit_cube(n),
        _ => Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Direct,
    Cg,
    PcgAl,
    PcgMg1,
    PcgMg2,
}

impl SolverKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "direct" => Self::Direct,
            "cg" => Self::Cg,
            "pcg-al" => Self::PcgAl,
            "pcg-mg1" => Self::PcgMg1,
            "pcg-mg2" => Self::PcgMg2,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown solver '{s}' (expected direct, cg, pcg-al, pcg-mg1 or pcg-mg2)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::Cg => "cg",
            Self::PcgAl => "pcg-al",
            Self::PcgMg1 => "pcg-mg1",
            Self::PcgMg2 => "pcg-mg2",
        }
    }
}

/// Solves `A x = b` with the chosen method. Multigrid variants need the
/// structured hierarchy ending at the system's mesh.
pub fn solve_with(
    kind: SolverKind,
    sys: &DgSystem,
    b: &[f64],
    hier: Option<&MeshHierarchy>,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let a = sys.matrix();
    Ok(match kind {
        SolverKind::Direct => {
            let start = Instant::now();
            let x = ProfileCholesky::factor(a)?.solve(b);
            let mut r = a.mul_vec(&x);
            r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
            let bn = crate::sparse::norm2(b);
            let rn = crate::sparse::norm2(&r);
            let report = SolveReport {
                iterations: 0,
                residuals: vec![rn],
                converged: true,
                seconds: start.elapsed().as_secs_f64(),
                relative_residual: if bn > 0.0 { rn / bn } else { 0.0 },
            };
            (x, report)
        }
        SolverKind::Cg => solver::cg(a, b, tol, max_iters),
        SolverKind::PcgAl => solver::pcg(a, b, &DirectSolve::new(sys.low_order())?, tol, max_iters),
        SolverKind::PcgMg1 | SolverKind::PcgMg2 => {
            let hier = hier.ok_or_else(|| Error::InvalidArgument("multigrid needs a mesh hierarchy".into()))?;
            let variant = if kind == SolverKind::PcgMg1 {
                MgVariant::I
            } else {
                MgVariant::II
            };
            if hier.finest().n_interior_nodes() != sys.n_dofs() {
                return Err(Error::InvalidArgument(
                    "mesh hierarchy does not end at the system's mesh".into(),
                ));
            }
            let mg = match variant {
                MgVariant::I => MgHierarchy::variant_one(hier, sys.low_order(), None)?,
                MgVariant::II => MgHierarchy::variant_two(hier)?,
            };
            solver::pcg(a, b, &mg, tol, max_iters)
        }
    })
}

/// Settings shared by the study drivers.
#[derive(Clone, Debug, Serialize)]
pub struct StudyOptions {
    pub m: usize,
    /// Patch threshold; `None` uses `⌈1.5 dim P_m⌉`.
    pub nm: Option<usize>,
    pub penalties: Option<Penalties>,
    /// Solver producing the reported solution.
    pub solver: SolverKind,
    /// Additional solvers whose iteration counts are recorded.
    pub count_solvers: Vec<SolverKind>,
    pub conditions: bool,
    pub tol: f64,
    pub max_iters: usize,
    /// Coarsest multigrid level has at most this many unknowns.
    pub max_coarse_dofs: usize,
}

impl StudyOptions {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            nm: None,
            penalties: None,
            solver: SolverKind::Direct,
            count_solvers: Vec::new(),
            conditions: false,
            tol: solver::DEFAULT_TOL,
            max_iters: solver::DEFAULT_MAX_ITERS,
            max_coarse_dofs: 200,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationCount {
    pub solver: SolverKind,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub n_p: usize,
    pub threshold: usize,
    pub lambda_m: f64,
    pub l2_error: f64,
    pub energy_error: f64,
    pub kappa_a: Option<f64>,
    pub kappa_pre: Option<f64>,
    pub iterations: Vec<IterationCount>,
    /// Whether the reporting solver met the tolerance.
    pub converged: bool,
    /// Error or non-convergence message for this row, if any.
    pub failure: Option<String>,
    pub seconds: f64,
}

impl ConvergenceRow {
    pub fn iterations_for(&self, kind: SolverKind) -> Option<&IterationCount> {
        self.iterations.iter().find(|c| c.solver == kind)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceTable {
    pub case: String,
    pub m: usize,
    pub rows: Vec<ConvergenceRow>,
}

/// `log2(e(h) / e(h/2))` for each consecutive pair.
pub fn rates(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Least-squares slope of `log e` against `log(1/h)`.
pub fn fitted_rate(h: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = h.iter().map(|h| -h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    -sxy / sxx
}

impl ConvergenceTable {
    pub fn l2_rates(&self) -> Vec<f64> {
        rates(&self.rows.iter().map(|r| r.l2_error).collect::<Vec<_>>())
    }

    pub fn energy_rates(&self) -> Vec<f64> {
        rates(&self.rows.iter().map(|r| r.energy_error).collect::<Vec<_>>())
    }

    pub fn fitted_l2_rate(&self) -> f64 {
        let h: Vec<f64> = self.rows.iter().map(|r| r.h).collect();
        fitted_rate(&h, &self.rows.iter().map(|r| r.l2_error).collect::<Vec<_>>())
    }

    pub fn fitted_energy_rate(&self) -> f64 {
        let h: Vec<f64> = self.rows.iter().map(|r| r.h).collect();
        fitted_rate(&h, &self.rows.iter().map(|r| r.energy_error).collect::<Vec<_>>())
    }
}

/// Assembled problem for one case on one mesh.
pub struct Problem {
    pub mesh: Mesh,
    pub system: DgSystem,
    pub rhs: Vec<f64>,
    /// Nodal boundary lift (`g1` at boundary nodes), `None` when homogeneous.
    pub lift: Option<Vec<f64>>,
}

impl Problem {
    pub fn setup(case: &ManufacturedCase, mesh: Mesh, opts: &StudyOptions) -> Result<Self> {
        let m = opts.m;
        let threshold = opts.nm.unwrap_or_else(|| default_threshold(mesh.dim(), m));
        let pen = opts.penalties.unwrap_or_default();
        let system = DgSystem::build(&mesh, m, threshold, pen)?;
        let f = |x: &Point| case.f(x);
        let (rhs, lift) = if case.homogeneous {
            (system.rhs(&mesh, &f)?, None)
        } else {
            let g1 = |x: &Point| case.g1(x);
            let g2 = |x: &Point, n: &Point| case.g2(x, n);
            let (b, lift) = system.rhs_inhomogeneous(&mesh, &f, BoundaryData { g1: &g1, g2: &g2 })?;
            (b, Some(lift))
        };
        Ok(Self {
            mesh,
            system,
            rhs,
            lift,
        })
    }

    /// Broken coefficients of `u_h = R^m(w + lift)`.
    pub fn solution_coefficients(&self, interior: &[f64]) -> Vec<f64> {
        self.system.coefficients(&self.mesh, interior, self.lift.as_deref())
    }

    pub fn errors(&self, case: &ManufacturedCase, interior: &[f64]) -> Result<Errors> {
        let c = self.solution_coefficients(interior);
        measure_errors(&self.mesh, self.system.recon().bases(), &c, case)
    }
}

/// One table row on the `n`-cell structured mesh.
pub fn run_row(case: &ManufacturedCase, n: usize, opts: &StudyOptions) -> Result<ConvergenceRow> {
    let hier = MeshHierarchy::structured(case.dim, n, opts.max_coarse_dofs)?;
    run_row_on(case, &hier, n, opts)
}

/// One table row on the finest mesh of `hier`; multigrid uses the whole
/// hierarchy. `label` fills the `n` column.
pub fn run_row_on(
    case: &ManufacturedCase,
    hier: &MeshHierarchy,
    label: usize,
    opts: &StudyOptions,
) -> Result<ConvergenceRow> {
    let start = Instant::now();
    if hier.finest().dim() != case.dim {
        return Err(Error::InvalidArgument(format!(
            "{} is a {}D case but the mesh is {}D",
            case.name,
            case.dim,
            hier.finest().dim()
        )));
    }
    let mesh = hier.finest().clone();
    let h = mesh.mesh_size();
    let prob = Problem::setup(case, mesh, opts)?;
    let sys = &prob.system;

    let mut failure = None;
    let mut iterations = Vec::new();
    let (x, rep) = solve_with(opts.solver, sys, &prob.rhs, Some(hier), opts.tol, opts.max_iters)?;
    if !rep.converged {
        failure = Some(format!(
            "{} did not converge in {} iterations",
            opts.solver.name(),
            rep.iterations
        ));
    }
    if opts.solver != SolverKind::Direct {
        iterations.push(IterationCount {
            solver: opts.solver,
            iterations: rep.iterations,
            converged: rep.converged,
            seconds: rep.seconds,
        });
    }
    for &kind in &opts.count_solvers {
        if kind == opts.solver || kind == SolverKind::Direct {
            continue;
        }
        let (_, r) = solve_with(kind, sys, &prob.rhs, Some(hier), opts.tol, opts.max_iters)?;
        iterations.push(IterationCount {
            solver: kind,
            iterations: r.iterations,
            converged: r.converged,
            seconds: r.seconds,
        });
    }
    let errors = prob.errors(case, &x)?;
    let (kappa_a, kappa_pre) = if opts.conditions {
        (
            Some(solver::condition_number(sys.matrix())?),
            Some(solver::generalized_condition(sys.matrix(), sys.low_order())?),
        )
    } else {
        (None, None)
    };
    Ok(ConvergenceRow {
        n: label,
        h,
        n_p: sys.n_dofs(),
        threshold: sys.recon().threshold(),
        lambda_m: sys.recon().stats().lambda,
        l2_error: errors.l2,
        energy_error: errors.energy,
        kappa_a,
        kappa_pre,
        iterations,
        converged: rep.converged,
        failure,
        seconds: start.elapsed().as_secs_f64(),
    })
}

impl ConvergenceRow {
    /// Placeholder for a row whose setup or solve raised an error.
    pub fn failed(n: usize, h: f64, err: &Error) -> Self {
        Self {
            n,
            h,
            n_p: 0,
            threshold: 0,
            lambda_m: f64::NAN,
            l2_error: f64::NAN,
            energy_error: f64::NAN,
            kappa_a: None,
            kappa_pre: None,
            iterations: Vec::new(),
            converged: false,
            failure: Some(err.to_string()),
            seconds: 0.0,
        }
    }

    /// True when the row raised an error (as opposed to a solver that ran
    /// out of iterations).
    pub fn is_error(&self) -> bool {
        self.failure.is_some() && self.n_p == 0
    }
}

fn check_row_count(rows: usize) -> Result<()> {
    if rows < 3 {
        return Err(Error::InvalidArgument(format!(
            "a convergence study needs at least 3 meshes, got {rows}"
        )));
    }
    Ok(())
}

/// Rows for every structured mesh size, coarsest first. A failing row is
/// recorded and the study continues.
pub fn run_convergence_study(case: &ManufacturedCase, ns: &[usize], opts: &StudyOptions) -> Result<ConvergenceTable> {
    check_row_count(ns.len())?;
    let mut rows: Vec<ConvergenceRow> = ns
        .par_iter()
        .map(|&n| {
            // element diameter of the structured split
            let h = (case.dim as f64).sqrt() / n as f64;
            run_row(case, n, opts).unwrap_or_else(|e| ConvergenceRow::failed(n, h, &e))
        })
        .collect();
    rows.sort_by(|a, b| b.h.total_cmp(&a.h));
    Ok(ConvergenceTable {
        case: case.name.into(),
        m: opts.m,
        rows,
    })
}

/// Rows for `coarse` refined `0..=refines` times; the `n` column holds the
/// refinement count.
pub fn run_refinement_study(
    case: &ManufacturedCase,
    coarse: &Mesh,
    refines: usize,
    opts: &StudyOptions,
) -> Result<ConvergenceTable> {
    check_row_count(refines + 1)?;
    let rows = (0..=refines)
        .into_par_iter()
        .map(|r| {
            let h = coarse.mesh_size() / (1u64 << r) as f64;
            MeshHierarchy::new(coarse.clone(), r)
                .and_then(|hier| run_row_on(case, &hier, r, opts))
                .unwrap_or_else(|e| ConvergenceRow::failed(r, h, &e))
        })
        .collect();
    Ok(ConvergenceTable {
        case: case.name.into(),
        m: opts.m,
        rows,
    })
}

/// Broken norms of the reconstruction of the nodal interpolant of `u`.
pub fn interpolation_errors(case: &ManufacturedCase, mesh: &Mesh, m: usize) -> Result<Errors> {
    let recon = crate::recon::ReconOperator::build_adaptive(mesh, m, default_threshold(mesh.dim(), m))?;
    let c = recon.apply(&mesh.sample(|x| case.u(x)));
    measure_errors(mesh, recon.bases(), &c, case)
}

#[derive(Clone, Debug, Serialize)]
pub struct DmtResult {
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    /// `max (Σ‖D²v‖² − Σ‖Δv‖²)₊ / (jump terms)` over the trials.
    pub max_ratio: f64,
    /// Trials skipped because their jump terms vanish.
    pub skipped: usize,
}

/// Discrete Miranda–Talenti ratio for random broken polynomials with
/// unit-normal orthonormal-basis coefficients.
pub fn run_dmt_check(mesh: &Mesh, m: usize, trials: usize, seed: u64) -> Result<DmtResult> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let rule = QuadratureRule::simplex(mesh.dim(), 2 * m)?;
    let bases: Vec<LocalBasis> = (0..mesh.n_elements())
        .map(|k| LocalBasis::orthonormalize(mesh, k, m, &rule))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = mesh.n_elements() * poly_dim(mesh.dim(), m);
    let mut max_ratio: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..trials {
        let coefs: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = norm_parts(
            mesh,
            &BrokenPolynomial {
                bases: &bases,
                coefs: &coefs,
            },
            2 * m,
        )?;
        let jumps = p.jumps();
        if jumps <= 1e-14 * (p.hessian + p.laplacian) {
            skipped += 1;
            continue;
        }
        max_ratio = max_ratio.max((p.hessian - p.laplacian).max(0.0) / jumps);
    }
    Ok(DmtResult {
        n: (mesh.n_elements() as f64 / if mesh.dim() == 2 { 2.0 } else { 6.0 })
            .powf(1.0 / mesh.dim() as f64)
            .round() as usize,
        m,
        trials,
        seed,
        max_ratio,
        skipped,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaRow {
    pub nm: usize,
    /// `None` when some `B_K` is singular.
    pub lambda_m: Option<f64>,
    pub max_depth: usize,
}

/// `Λ_m` for each threshold in `range`.
pub fn lambda_study(mesh: &Mesh, m: usize, range: std::ops::RangeInclusive<usize>) -> Result<Vec<LambdaRow>> {
    let rule = QuadratureRule::simplex(mesh.dim(), 2 * m)?;
    let bases: Vec<LocalBasis> = (0..mesh.n_elements())
        .map(|k| LocalBasis::orthonormalize(mesh, k, m, &rule))
        .collect::<Result<_>>()?;
    range
        .map(|nm| {
            let patches = build_all_patches(mesh, nm)?;
            let max_depth = patches.iter().map(|p| p.depth).max().unwrap_or(0);
            let lambda_m = match lambda_constants(mesh, &bases, &patches) {
                Ok(s) => Some(s.lambda),
                Err(Error::SingularGram { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(LambdaRow {
                nm,
                lambda_m,
                max_depth,
            })
        })
        .collect()
}
