//! Reconstruction operator `R^m`: continuous linear nodal values to a
//! discontinuous piecewise polynomial of degree `m`.
//!
//! On each element `K` the reconstruction is the polynomial minimizing the
//! squared misfit at the patch nodes `I(K)`, subject to matching the nodal
//! values exactly at the vertices of `K`. The constraints are eliminated
//! with an orthogonal basis of `{q ∈ P_m : q = 0 at the vertices of K}`,
//! and the remaining unconstrained problem is solved by SVD.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::patch::{build_all_patches, ElementPatch};
use crate::polyspace::{poly_dim, LocalBasis, QuadratureRule};
use crate::sparse::CsrMatrix;

/// Relative singular-value cutoff for the reduced least-squares matrix.
const RANK_TOL: f64 = 1e-10;
/// Smallest admissible eigenvalue of the evaluation Gram matrix `B_K`.
const GRAM_TOL: f64 = 1e-14;

/// Local map from nodal values on `I(K)` to orthonormal-basis coefficients.
#[derive(Clone, Debug)]
pub struct LocalRecon {
    pub element: usize,
    /// `I(K)`; the first `d + 1` entries are the constrained vertices of `K`.
    pub nodes: Vec<usize>,
    /// `l × #I(K)` matrix `C_K`.
    pub matrix: DMatrix<f64>,
    /// Positions of the vertex constraints inside `nodes`.
    pub constrained: Vec<usize>,
}

impl LocalRecon {
    /// Coefficients of `R_K^m v` given the values of `v` at `self.nodes`.
    pub fn apply(&self, values: &[f64]) -> DVector<f64> {
        &self.matrix * DVector::from_column_slice(values)
    }
}

/// Evaluation matrix `E_ij = p_j(x_i)` of the basis at the patch nodes.
pub fn evaluation_matrix(mesh: &Mesh, basis: &LocalBasis, nodes: &[usize]) -> DMatrix<f64> {
    let l = basis.len();
    let mut e = DMatrix::zeros(nodes.len(), l);
    for (i, &v) in nodes.iter().enumerate() {
        for (j, val) in basis.values(mesh.point(v)).into_iter().enumerate() {
            e[(i, j)] = val;
        }
    }
    e
}

/// Solves the vertex-constrained least-squares fit on one patch.
pub fn local_reconstruct(mesh: &Mesh, basis: &LocalBasis, patch: &ElementPatch) -> Result<LocalRecon> {
    let k = patch.element;
    let nc = mesh.dim() + 1;
    let l = basis.len();
    let ni = patch.nodes.len();
    let e = evaluation_matrix(mesh, basis, &patch.nodes);
    let ec = e.rows(0, nc).into_owned();

    // Q1 spans the row space of the constraints; the unit eigenvectors of
    // I - Q1 Q1ᵀ give an orthonormal basis Q2 of their null space.
    let qr = ec.transpose().qr();
    let q1 = qr.q();
    let r1 = qr.r();
    let proj = DMatrix::identity(l, l) - &q1 * q1.transpose();
    let eig = proj.symmetric_eigen();
    let keep: Vec<usize> = (0..l).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    let q2 = eig.eigenvectors.select_columns(&keep);

    // particular solution Y with E_c Y = I
    let r1t_inv = r1.transpose().try_inverse().ok_or_else(|| Error::DegenerateElement {
        element: k,
        reason: "vertex constraints are linearly dependent".into(),
    })?;
    let y = &q1 * r1t_inv;
    // Y S_c, with S_c selecting the constrained entries
    let mut ysc = DMatrix::zeros(l, ni);
    ysc.view_mut((0, 0), (l, nc)).copy_from(&y);

    let matrix = if l == nc {
        ysc
    } else {
        if ni < l {
            return Err(Error::NotUnisolvent {
                element: k,
                rank: ni - nc,
                required: l - nc,
            });
        }
        let f = &e * &q2;
        let svd = f.svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count();
        if rank < l - nc {
            return Err(Error::NotUnisolvent {
                element: k,
                rank,
                required: l - nc,
            });
        }
        let u = svd.u.as_ref().unwrap();
        let vt = svd.v_t.as_ref().unwrap();
        let sinv = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
        let fpinv = vt.transpose() * sinv * u.transpose();
        let residual_map = DMatrix::identity(ni, ni) - &e * &ysc;
        &ysc + &q2 * fpinv * residual_map
    };
    Ok(LocalRecon {
        element: k,
        nodes: patch.nodes.clone(),
        matrix,
        constrained: (0..nc).collect(),
    })
}

/// `Λ_{m,K} = (h_K^d λ_min(B_K))^{-1/2}` with `B_K = EᵀE`.
pub fn lambda_local(mesh: &Mesh, basis: &LocalBasis, patch: &ElementPatch) -> Result<f64> {
    let e = evaluation_matrix(mesh, basis, &patch.nodes);
    let b = e.transpose() * &e;
    let lmin = b.symmetric_eigenvalues().min();
    if lmin <= GRAM_TOL {
        return Err(Error::SingularGram {
            element: patch.element,
            value: lmin,
        });
    }
    let hd = mesh.diameter(patch.element).powi(mesh.dim() as i32);
    Ok((hd * lmin).powf(-0.5))
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconStats {
    /// `Λ_{m,K}` per element.
    pub lambda_local: Vec<f64>,
    /// `Λ_m = max_K (1 + Λ_{m,K} t_K √#I(K))`.
    pub lambda: f64,
    pub max_depth: usize,
}

impl ReconStats {
    pub fn from_parts(lambda_local: Vec<f64>, patches: &[ElementPatch]) -> Self {
        let lambda = lambda_local
            .iter()
            .zip(patches)
            .map(|(lk, p)| 1.0 + lk * p.depth as f64 * (p.nodes.len() as f64).sqrt())
            .fold(1.0, f64::max);
        Self {
            lambda,
            max_depth: patches.iter().map(|p| p.depth).max().unwrap_or(0),
            lambda_local,
        }
    }

    pub fn min_local(&self) -> f64 {
        self.lambda_local.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_local(&self) -> f64 {
        self.lambda_local.iter().cloned().fold(0.0, f64::max)
    }
}

/// `Λ` constants for a set of patches and bases.
pub fn lambda_constants(mesh: &Mesh, bases: &[LocalBasis], patches: &[ElementPatch]) -> Result<ReconStats> {
    let local: Vec<f64> = bases
        .par_iter()
        .zip(patches)
        .map(|(b, p)| lambda_local(mesh, b, p))
        .collect::<Result<_>>()?;
    Ok(ReconStats::from_parts(local, patches))
}

/// Search range of [`ReconOperator::build_adaptive`] in multiples of `dim P_m`.
pub const ADAPTIVE_STEPS: usize = 5;

/// Global reconstruction operator over a mesh.
#[derive(Clone, Debug)]
pub struct ReconOperator {
    degree: usize,
    threshold: usize,
    bases: Vec<LocalBasis>,
    patches: Vec<ElementPatch>,
    locals: Vec<LocalRecon>,
    stats: ReconStats,
}

impl ReconOperator {
    pub fn build(mesh: &Mesh, m: usize, threshold: usize) -> Result<Self> {
        Self::build_with_bases(mesh, m, threshold, Self::element_bases(mesh, m)?)
    }

    fn element_bases(mesh: &Mesh, m: usize) -> Result<Vec<LocalBasis>> {
        let rule = QuadratureRule::simplex(mesh.dim(), 2 * m)?;
        (0..mesh.n_elements())
            .into_par_iter()
            .map(|k| LocalBasis::orthonormalize(mesh, k, m, &rule))
            .collect()
    }

    fn build_with_bases(mesh: &Mesh, m: usize, threshold: usize, bases: Vec<LocalBasis>) -> Result<Self> {
        let patches = build_all_patches(mesh, threshold)?;
        let locals: Vec<LocalRecon> = bases
            .par_iter()
            .zip(&patches)
            .map(|(b, p)| local_reconstruct(mesh, b, p))
            .collect::<Result<_>>()?;
        let stats = lambda_constants(mesh, &bases, &patches)?;
        Ok(Self {
            degree: m,
            threshold,
            bases,
            patches,
            locals,
            stats,
        })
    }

    /// Builds with `threshold`, then enlarges it one node at a time (by at
    /// most `5 dim P_m` in total) while the fit is not unisolvent or the
    /// local constants spread by more than `max_K Λ_{m,K} > 10 min_K Λ_{m,K}`.
    /// The smallest admissible threshold wins, since the approximation
    /// constant grows with the patch.
    pub fn build_adaptive(mesh: &Mesh, m: usize, threshold: usize) -> Result<Self> {
        let bases = Self::element_bases(mesh, m)?;
        let mut current = threshold;
        let mut last: Option<Result<Self>> = None;
        for _ in 0..=ADAPTIVE_STEPS * poly_dim(mesh.dim(), m) {
            let at_cap = current >= mesh.n_nodes();
            current = current.min(mesh.n_nodes());
            match Self::build_with_bases(mesh, m, current, bases.clone()) {
                Ok(op) if op.stats.max_local() <= 10.0 * op.stats.min_local() => return Ok(op),
                Ok(op) => last = Some(Ok(op)),
                Err(e @ (Error::NotUnisolvent { .. } | Error::SingularGram { .. })) => {
                    if !matches!(last, Some(Ok(_))) {
                        last = Some(Err(e));
                    }
                }
                Err(e @ Error::PatchExhausted { .. }) => return last.unwrap_or(Err(e)),
                Err(e) => return Err(e),
            }
            if at_cap {
                break;
            }
            current += 1;
        }
        last.expect("at least one attempt")
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    /// Number of coefficients per element.
    pub fn local_dim(&self) -> usize {
        self.bases[0].len()
    }

    pub fn bases(&self) -> &[LocalBasis] {
        &self.bases
    }

    pub fn basis(&self, k: usize) -> &LocalBasis {
        &self.bases[k]
    }

    pub fn patches(&self) -> &[ElementPatch] {
        &self.patches
    }

    pub fn local(&self, k: usize) -> &LocalRecon {
        &self.locals[k]
    }

    pub fn locals(&self) -> &[LocalRecon] {
        &self.locals
    }

    pub fn stats(&self) -> &ReconStats {
        &self.stats
    }

    /// Broken coefficients (element-major, `l` per element) of `R^m v` for
    /// nodal values `v` on all mesh nodes.
    pub fn apply(&self, nodal: &[f64]) -> Vec<f64> {
        let l = self.local_dim();
        let mut out = vec![0.0; self.locals.len() * l];
        for (k, loc) in self.locals.iter().enumerate() {
            let vals: Vec<f64> = loc.nodes.iter().map(|&v| nodal[v]).collect();
            let c = loc.apply(&vals);
            out[k * l..(k + 1) * l].copy_from_slice(c.as_slice());
        }
        out
    }

    /// `R^m` on interior values only (boundary nodes set to zero), i.e. the
    /// coefficient map of `U_h^m`.
    pub fn apply_interior(&self, mesh: &Mesh, interior: &[f64]) -> Vec<f64> {
        let mut nodal = vec![0.0; mesh.n_nodes()];
        for (i, &v) in mesh.interior_nodes().iter().enumerate() {
            nodal[v] = interior[i];
        }
        self.apply(&nodal)
    }

    /// Sparse matrix of `R^m` (`n_elements·l × n_nodes`).
    pub fn matrix(&self, n_nodes: usize) -> CsrMatrix {
        let l = self.local_dim();
        let mut t = Vec::new();
        for (k, loc) in self.locals.iter().enumerate() {
            for i in 0..l {
                for (j, &v) in loc.nodes.iter().enumerate() {
                    t.push((k * l + i, v, loc.matrix[(i, j)]));
                }
            }
        }
        CsrMatrix::from_triplets(self.locals.len() * l, n_nodes, &t)
    }

    /// Values of the broken polynomial on element `k` at its vertices
    /// (the readback `I_K`).
    pub fn vertex_values(&self, mesh: &Mesh, k: usize, coefs: &[f64]) -> Vec<f64> {
        let b = &self.bases[k];
        mesh.element(k)
            .iter()
            .map(|&v| b.values(mesh.point(v)).iter().zip(coefs).map(|(p, c)| p * c).sum())
            .collect()
    }

    /// Evaluates element `k`'s polynomial with coefficients `coefs` at `x`.
    pub fn eval(&self, k: usize, coefs: &[f64], x: &Point) -> f64 {
        self.bases[k].values(x).iter().zip(coefs).map(|(p, c)| p * c).sum()
    }
}
