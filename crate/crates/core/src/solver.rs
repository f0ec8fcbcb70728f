//! Conjugate gradients, W-cycle multigrid preconditioners built on the
//! low-order matrix `A_L`, and spectral estimates.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assemble::low_order_matrix;
use crate::error::{Error, Result};
use crate::mesh::MeshHierarchy;
use crate::sparse::{axpy, dot, norm2, CsrMatrix, ProfileCholesky};

/// Default relative residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default iteration cap.
pub const DEFAULT_MAX_ITERS: usize = 3000;
/// Largest size handled by dense eigensolves.
/// Lanczos steps per extremal eigenvalue above the dense limit.
pub const LANCZOS_STEPS: usize = 150;
pub const DENSE_LIMIT: usize = 3000;

/// Approximate inverse used by PCG.
pub trait Preconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64>;
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

/// Exact solves with a sparse Cholesky factor.
pub struct DirectSolve(pub ProfileCholesky);

impl DirectSolve {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        Ok(Self(ProfileCholesky::factor(a)?))
    }
}

impl Preconditioner for DirectSolve {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        self.0.solve(r)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖r_k‖` for `k = 0..=iterations`.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub seconds: f64,
    pub relative_residual: f64,
}

/// Preconditioned CG from a zero initial guess; stops at
/// `‖r_k‖ ≤ tol ‖b‖` or after `max_iters` iterations.
pub fn pcg(a: &CsrMatrix, b: &[f64], prec: &dyn Preconditioner, tol: f64, max_iters: usize) -> (Vec<f64>, SolveReport) {
    let start = Instant::now();
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut residuals = vec![bnorm];
    let finish = |x: Vec<f64>, residuals: Vec<f64>, converged: bool| {
        let last = *residuals.last().unwrap();
        let report = SolveReport {
            iterations: residuals.len() - 1,
            converged,
            seconds: start.elapsed().as_secs_f64(),
            relative_residual: if bnorm > 0.0 { last / bnorm } else { 0.0 },
            residuals,
        };
        (x, report)
    };
    if bnorm == 0.0 {
        return finish(x, residuals, true);
    }
    let mut z = prec.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iters {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap.is_nan() || pap <= 0.0 {
            return finish(x, residuals, false);
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rn = norm2(&r);
        residuals.push(rn);
        if rn <= tol * bnorm {
            return finish(x, residuals, true);
        }
        z = prec.apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    finish(x, residuals, false)
}

/// Unpreconditioned CG.
pub fn cg(a: &CsrMatrix, b: &[f64], tol: f64, max_iters: usize) -> (Vec<f64>, SolveReport) {
    pcg(a, b, &Identity, tol, max_iters)
}

/// Upper bound for `ϱ(A)`: power iteration until the Rayleigh quotient
/// changes by less than `1e-3` relative, times `1.1`.
pub fn estimate_lambda(a: &CsrMatrix) -> f64 {
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut last = 0.0;
    for _ in 0..10_000 {
        let w = a.mul_vec(&v);
        let rq = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / nw).collect();
        if (rq - last).abs() <= 1e-3 * rq.abs() {
            return 1.1 * rq;
        }
        last = rq;
    }
    1.1 * last
}

/// A linear operator applied to a vector.
pub type VecOp<'a> = &'a dyn Fn(&[f64]) -> Vec<f64>;

/// Lanczos with full reorthogonalization for an operator self-adjoint in
/// the inner product `⟨x, y⟩ = xᵀ B y` (`b_apply = None` means `B = I`).
/// Returns the Ritz values, ascending.
pub fn lanczos(n: usize, steps: usize, op: VecOp, b_apply: Option<VecOp>) -> Vec<f64> {
    let bmul = |x: &[f64]| -> Vec<f64> { b_apply.map_or_else(|| x.to_vec(), |b| b(x)) };
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2c);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bq = bmul(&q);
    let nq = dot(&q, &bq).sqrt();
    q.iter_mut().for_each(|x| *x /= nq);
    let mut basis: Vec<Vec<f64>> = vec![q.clone()];
    let mut bbasis: Vec<Vec<f64>> = vec![bq.into_iter().map(|x| x / nq).collect()];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let k = steps.min(n);
    for j in 0..k {
        let mut w = op(&basis[j]);
        // ⟨w, q_j⟩ = wᵀ B q_j
        let alpha = dot(&w, &bbasis[j]);
        alphas.push(alpha);
        // two passes of Gram–Schmidt against every stored vector
        for _ in 0..2 {
            for (qi, bqi) in basis.iter().zip(&bbasis) {
                let c = dot(&w, bqi);
                axpy(-c, qi, &mut w);
            }
        }
        if j + 1 == k {
            break;
        }
        let bw = bmul(&w);
        let beta = dot(&w, &bw).max(0.0).sqrt();
        if beta <= 1e-12 * alpha.abs().max(1e-300) {
            break;
        }
        betas.push(beta);
        basis.push(w.into_iter().map(|x| x / beta).collect());
        bbasis.push(bw.into_iter().map(|x| x / beta).collect());
    }
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let mut ev: Vec<f64> = t.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Extremal eigenvalues `(λ_min, λ_max)` of a symmetric matrix.
pub fn extremal_eigenvalues(a: &CsrMatrix) -> (f64, f64) {
    let n = a.nrows();
    if n <= DENSE_LIMIT {
        let ev = a.to_dense().symmetric_eigenvalues();
        (ev.min(), ev.max())
    } else {
        let ev = lanczos(n, 400, &|x| a.mul_vec(x), None);
        (ev[0], *ev.last().unwrap())
    }
}

/// Largest Ritz value after `steps` Lanczos steps.
fn lanczos_max(n: usize, steps: usize, op: VecOp, b_apply: Option<VecOp>) -> f64 {
    *lanczos(n, steps, op, b_apply).last().unwrap()
}

/// `κ(A)` for SPD `A`. Above the dense limit the smallest eigenvalue comes
/// from Lanczos on `A⁻¹`.
pub fn condition_number(a: &CsrMatrix) -> Result<f64> {
    let n = a.nrows();
    let (lo, hi) = if n <= DENSE_LIMIT {
        extremal_eigenvalues(a)
    } else {
        extremal_eigenvalues_spd_lanczos(a)?
    };
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite { pivot: 0, value: lo });
    }
    Ok(hi / lo)
}

/// `(λ_min, λ_max)` of SPD `A` from Lanczos on `A` and on `A⁻¹`.
pub fn extremal_eigenvalues_spd_lanczos(a: &CsrMatrix) -> Result<(f64, f64)> {
    let n = a.nrows();
    let fac = ProfileCholesky::factor(a)?;
    let hi = lanczos_max(n, LANCZOS_STEPS, &|x| a.mul_vec(x), None);
    let lo = 1.0 / lanczos_max(n, LANCZOS_STEPS, &|x| fac.solve(x), None);
    Ok((lo, hi))
}

/// Pencil extremes from Lanczos on `B⁻¹A` (B inner product) and on `A⁻¹B`
/// (A inner product).
pub fn generalized_extremal_eigenvalues_lanczos(a: &CsrMatrix, b: &CsrMatrix) -> Result<(f64, f64)> {
    let n = a.nrows();
    let fb = ProfileCholesky::factor(b)?;
    let fa = ProfileCholesky::factor(a)?;
    let hi = lanczos_max(n, LANCZOS_STEPS, &|x| fb.solve(&a.mul_vec(x)), Some(&|x| b.mul_vec(x)));
    let lo = 1.0 / lanczos_max(n, LANCZOS_STEPS, &|x| fa.solve(&b.mul_vec(x)), Some(&|x| a.mul_vec(x)));
    Ok((lo, hi))
}

/// Extremal eigenvalues of the pencil `(A, B)`, both SPD.
pub fn generalized_extremal_eigenvalues(a: &CsrMatrix, b: &CsrMatrix) -> Result<(f64, f64)> {
    let n = a.nrows();
    if n <= DENSE_LIMIT {
        let chol = b
            .to_dense()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 })?;
        let l = chol.l();
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 })?;
        let c = &linv * a.to_dense() * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let ev = c.symmetric_eigenvalues();
        Ok((ev.min(), ev.max()))
    } else {
        generalized_extremal_eigenvalues_lanczos(a, b)
    }
}

/// `κ(B⁻¹A)`.
pub fn generalized_condition(a: &CsrMatrix, b: &CsrMatrix) -> Result<f64> {
    let (lo, hi) = generalized_extremal_eigenvalues(a, b)?;
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite { pivot: 0, value: lo });
    }
    Ok(hi / lo)
}

/// Forward (`true`) or backward Gauss–Seidel sweep.
pub fn gauss_seidel(a: &CsrMatrix, b: &[f64], x: &mut [f64], forward: bool) {
    let n = a.nrows();
    let mut sweep = |i: usize| {
        let (cols, vals) = a.row(i);
        let mut s = b[i];
        let mut diag = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            if c == i {
                diag = v;
            } else {
                s -= v * x[c];
            }
        }
        x[i] = s / diag;
    };
    if forward {
        (0..n).for_each(&mut sweep);
    } else {
        (0..n).rev().for_each(&mut sweep);
    }
}

/// `S = I − 2.9 t + 2.15 t²` evaluated at `t = A/λ`.
pub fn smoother_poly(t: f64) -> f64 {
    1.0 - 2.9 * t + 2.15 * t * t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MgVariant {
    /// Galerkin hierarchy through polynomially smoothed prolongations.
    I,
    /// Low-order matrix rediscretized on every mesh level.
    II,
}

#[derive(Clone, Debug)]
struct MgLevel {
    a: CsrMatrix,
    /// Transfer from the next coarser level (variant I: `S_j P̃_j`).
    p: Option<CsrMatrix>,
    lambda: f64,
}

/// W-cycle multigrid for `A_L`; level 0 is the coarsest.
#[derive(Clone, Debug)]
pub struct MgHierarchy {
    variant: MgVariant,
    levels: Vec<MgLevel>,
    coarse: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl MgHierarchy {
    /// Variant I from the finest-level `A_L` and the mesh hierarchy. `lambda`
    /// defaults to [`estimate_lambda`].
    pub fn variant_one(hier: &MeshHierarchy, a_fine: &CsrMatrix, lambda: Option<f64>) -> Result<Self> {
        let nl = hier.levels();
        let lambda = lambda.unwrap_or_else(|| estimate_lambda(a_fine));
        let measured = lanczos(a_fine.nrows(), 60, &|x| a_fine.mul_vec(x), None);
        let rho = *measured.last().unwrap();
        if lambda < 0.99 * rho {
            return Err(Error::SpectralBound { lambda, measured: rho });
        }
        let d = hier.finest().dim() as i32;
        let scale = 2f64.powf(-(d as f64) / 2.0);
        let mut levels = vec![MgLevel {
            a: a_fine.clone(),
            p: None,
            lambda,
        }];
        // top-down: A_{j-1} = (S_j P̃_j)ᵀ A_j (S_j P̃_j)
        for j in (1..nl).rev() {
            let top = levels.last_mut().unwrap();
            let mut pt = hier.interior_prolongation(j - 1);
            pt.scale(scale);
            let ap = top.a.matmul(&pt);
            let aap = top.a.matmul(&ap);
            let lj = top.lambda;
            let sp = pt
                .add_scaled(1.0, &ap, -2.9 / lj)
                .add_scaled(1.0, &aap, 2.15 / (lj * lj));
            let coarse = top.a.ptap(&sp).symmetrize();
            top.p = Some(sp);
            levels.push(MgLevel {
                a: coarse,
                p: None,
                lambda: lj / 16.0,
            });
        }
        levels.reverse();
        Self::finish(MgVariant::I, levels)
    }

    /// Variant II: `A_L` assembled on each mesh of the hierarchy.
    pub fn variant_two(hier: &MeshHierarchy) -> Result<Self> {
        let levels = (0..hier.levels())
            .map(|j| MgLevel {
                a: low_order_matrix(hier.mesh(j)),
                p: (j > 0).then(|| hier.interior_prolongation(j - 1)),
                lambda: 0.0,
            })
            .collect();
        Self::finish(MgVariant::II, levels)
    }

    pub fn build(variant: MgVariant, hier: &MeshHierarchy) -> Result<Self> {
        match variant {
            MgVariant::I => Self::variant_one(hier, &low_order_matrix(hier.finest()), None),
            MgVariant::II => Self::variant_two(hier),
        }
    }

    fn finish(variant: MgVariant, levels: Vec<MgLevel>) -> Result<Self> {
        let a0 = levels[0].a.to_dense();
        let coarse = a0
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 })?;
        Ok(Self {
            variant,
            levels,
            coarse,
        })
    }

    pub fn variant(&self) -> MgVariant {
        self.variant
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Level matrix (`0` = coarsest).
    pub fn level_matrix(&self, j: usize) -> &CsrMatrix {
        &self.levels[j].a
    }

    /// Spectral bound `λ_j` (variant I only; zero otherwise).
    pub fn level_lambda(&self, j: usize) -> f64 {
        self.levels[j].lambda
    }

    /// Coarse-to-fine transfer into level `j` (variant I: `S_j P̃_j`).
    pub fn level_prolongation(&self, j: usize) -> Option<&CsrMatrix> {
        self.levels[j].p.as_ref()
    }

    /// One W-cycle at level `j` updating `x` for `A_j x = b`.
    pub fn cycle(&self, j: usize, x: &mut [f64], b: &[f64]) {
        let a = &self.levels[j].a;
        if j == 0 {
            let sol = self.coarse.solve(&DVector::from_column_slice(b));
            x.copy_from_slice(sol.as_slice());
            return;
        }
        gauss_seidel(a, b, x, true);
        let p = self.levels[j].p.as_ref().expect("prolongation on non-coarsest level");
        let mut r = b.to_vec();
        axpy(-1.0, &a.mul_vec(x), &mut r);
        let y = p.tr_mul_vec(&r);
        let mut z = vec![0.0; y.len()];
        self.cycle(j - 1, &mut z, &y);
        self.cycle(j - 1, &mut z, &y);
        axpy(1.0, &p.mul_vec(&z), x);
        gauss_seidel(a, b, x, false);
    }

    /// Stationary iteration `x ← x + B(b − A x)` with the finest cycle.
    pub fn iterate(&self, x: &mut [f64], b: &[f64]) {
        self.cycle(self.levels.len() - 1, x, b);
    }
}

impl Preconditioner for MgHierarchy {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; r.len()];
        self.iterate(&mut x, r);
        x
    }
}
