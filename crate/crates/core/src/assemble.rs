//! IPDG matrices on the reconstructed space, the low-order matrix `A_L`,
//! load vectors and energy norms.
//!
//! Everything is first assembled on the broken space (element-major blocks
//! of `l` orthonormal-basis coefficients) and then pulled back to nodal
//! unknowns through the reconstruction matrix: `A = Rᵀ D R`, `M = Rᵀ R`,
//! `b = Rᵀ f`. Only interior nodes are unknowns.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{dot3, Face, Mesh, Point};
use crate::polyspace::{BasisValues, LocalBasis, QuadratureRule, MAX_QUADRATURE_DEGREE};
use crate::recon::ReconOperator;
use crate::sparse::CsrMatrix;

/// Scalar source or boundary function.
pub type ScalarFn<'a> = &'a (dyn Fn(&Point) -> f64 + Sync);
/// Normal-derivative data `g2(x, n)` with `n` the outward unit normal.
pub type NormalFn<'a> = &'a (dyn Fn(&Point, &Point) -> f64 + Sync);

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Penalties {
    /// Coefficient of `h_e^{-3} ⟦v⟧⟦w⟧`.
    pub mu1: f64,
    /// Coefficient of `h_e^{-1} ⟦∂_n v⟧⟦∂_n w⟧`.
    pub mu2: f64,
}

impl Default for Penalties {
    /// `μ1 = μ2 = 10` for every degree.
    fn default() -> Self {
        Self { mu1: 10.0, mu2: 10.0 }
    }
}

/// Clamped boundary data `u = g1`, `∂_n u = g2`.
#[derive(Clone, Copy)]
pub struct BoundaryData<'a> {
    pub g1: ScalarFn<'a>,
    pub g2: NormalFn<'a>,
}

/// Quadrature degree for integrands involving non-polynomial data.
pub(crate) fn data_degree(m: usize) -> usize {
    (2 * m + 4).min(MAX_QUADRATURE_DEGREE)
}

/// `(element, jump sign, average weight)` for each side of a face.
fn face_sides(face: &Face) -> Vec<(usize, f64, f64)> {
    match face.neighbor {
        Some(nb) => vec![(face.owner, 1.0, 0.5), (nb, -1.0, 0.5)],
        None => vec![(face.owner, 1.0, 1.0)],
    }
}

struct SideTab {
    value: Vec<f64>,
    dn: Vec<f64>,
    lap: Vec<f64>,
    dn_lap: Vec<f64>,
}

fn side_tab(b: &BasisValues, n: &Point) -> SideTab {
    SideTab {
        value: b.value.clone(),
        dn: b.normal_derivative(n),
        lap: b.lap.clone(),
        dn_lap: b.normal_grad_lap(n),
    }
}

/// Local matrix of the face terms of `a_h` on one face, rows and columns
/// ordered side-major.
fn face_matrix(mesh: &Mesh, bases: &[LocalBasis], f: usize, rule: &QuadratureRule, pen: Penalties) -> Vec<f64> {
    let face = &mesh.faces()[f];
    let sides = face_sides(face);
    let l = bases[0].len();
    let n = sides.len() * l;
    let h = face.diameter;
    let (p1, p2) = (pen.mu1 * h.powi(-3), pen.mu2 / h);
    let mut out = vec![0.0; n * n];
    for (x, w) in rule.on_face(mesh, f) {
        let tabs: Vec<SideTab> = sides
            .iter()
            .map(|&(k, _, _)| side_tab(&bases[k].tabulate(&x), &face.normal))
            .collect();
        for (s, &(_, js, as_)) in sides.iter().enumerate() {
            let ts = &tabs[s];
            for (t, &(_, jt, at)) in sides.iter().enumerate() {
                let tt = &tabs[t];
                for i in 0..l {
                    let row = (s * l + i) * n + t * l;
                    for j in 0..l {
                        let v = js * ts.value[i] * at * tt.dn_lap[j] + jt * tt.value[j] * as_ * ts.dn_lap[i]
                            - at * tt.lap[j] * js * ts.dn[i]
                            - as_ * ts.lap[i] * jt * tt.dn[j]
                            + js * jt * (p1 * ts.value[i] * tt.value[j] + p2 * ts.dn[i] * tt.dn[j]);
                        out[row + j] += w * v;
                    }
                }
            }
        }
    }
    out
}

/// Broken-space DG matrix `D` (`n_elements·l` square).
pub fn broken_dg_matrix(mesh: &Mesh, bases: &[LocalBasis], pen: Penalties) -> Result<CsrMatrix> {
    let m = bases[0].degree();
    let l = bases[0].len();
    let vol_rule = QuadratureRule::simplex(mesh.dim(), 2 * m)?;
    let face_rule = QuadratureRule::simplex(mesh.dim() - 1, 2 * m)?;

    let volume: Vec<Vec<(usize, usize, f64)>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let mut loc = vec![0.0; l * l];
            for (x, w) in vol_rule.on_element(mesh, k) {
                let lap = bases[k].laplacians(&x);
                for i in 0..l {
                    for j in 0..l {
                        loc[i * l + j] += w * lap[i] * lap[j];
                    }
                }
            }
            let mut t = Vec::with_capacity(l * l);
            for i in 0..l {
                for j in 0..l {
                    t.push((k * l + i, k * l + j, loc[i * l + j]));
                }
            }
            t
        })
        .collect();
    let faces: Vec<Vec<(usize, usize, f64)>> = (0..mesh.faces().len())
        .into_par_iter()
        .map(|f| {
            let loc = face_matrix(mesh, bases, f, &face_rule, pen);
            let sides = face_sides(&mesh.faces()[f]);
            let n = sides.len() * l;
            let mut t = Vec::with_capacity(n * n);
            for (s, &(ks, _, _)) in sides.iter().enumerate() {
                for (tt, &(kt, _, _)) in sides.iter().enumerate() {
                    for i in 0..l {
                        for j in 0..l {
                            t.push((ks * l + i, kt * l + j, loc[(s * l + i) * n + tt * l + j]));
                        }
                    }
                }
            }
            t
        })
        .collect();
    let trip: Vec<(usize, usize, f64)> = volume.into_iter().chain(faces).flatten().collect();
    let nb = mesh.n_elements() * l;
    Ok(CsrMatrix::from_triplets(nb, nb, &trip).symmetrize())
}

/// Low-order matrix `A_L`: `Σ_e h_e^{-1} ∫_e ⟦∂_n v⟧⟦∂_n w⟧` on continuous
/// linears vanishing on the boundary, over all faces.
pub fn low_order_matrix(mesh: &Mesh) -> CsrMatrix {
    let grads: Vec<Vec<Point>> = (0..mesh.n_elements()).map(|k| mesh.barycentric_gradients(k)).collect();
    let mut trip = Vec::new();
    for face in mesh.faces() {
        // jump of the normal derivative of each nodal hat function
        let mut jumps: Vec<(usize, f64)> = Vec::new();
        for (k, sign, _) in face_sides(face) {
            for (i, &v) in mesh.element(k).iter().enumerate() {
                let val = sign * dot3(&grads[k][i], &face.normal);
                match jumps.iter_mut().find(|(u, _)| *u == v) {
                    Some(e) => e.1 += val,
                    None => jumps.push((v, val)),
                }
            }
        }
        let scale = face.measure / face.diameter;
        for &(a, ja) in &jumps {
            let Some(ia) = mesh.interior_index(a) else { continue };
            for &(b, jb) in &jumps {
                if let Some(ib) = mesh.interior_index(b) {
                    trip.push((ia, ib, scale * ja * jb));
                }
            }
        }
    }
    let n = mesh.n_interior_nodes();
    CsrMatrix::from_triplets(n, n, &trip).symmetrize()
}

/// Element load `∫_K f p_i` for every element, element-major.
pub fn broken_load(mesh: &Mesh, bases: &[LocalBasis], f: ScalarFn) -> Result<Vec<f64>> {
    let m = bases[0].degree();
    let l = bases[0].len();
    let rule = QuadratureRule::simplex(mesh.dim(), data_degree(m))?;
    let blocks: Vec<Vec<f64>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let mut loc = vec![0.0; l];
            for (x, w) in rule.on_element(mesh, k) {
                let fx = f(&x);
                for (o, p) in loc.iter_mut().zip(bases[k].values(&x)) {
                    *o += w * fx * p;
                }
            }
            loc
        })
        .collect();
    Ok(blocks.concat())
}

/// Boundary-data terms of the consistent load, per element:
/// `∫_e g1 ∂_nΔp − g2 Δp + μ1 h_e^{-3} g1 p + μ2 h_e^{-1} g2 ∂_n p`.
pub fn broken_boundary_load(mesh: &Mesh, bases: &[LocalBasis], data: BoundaryData, pen: Penalties) -> Result<Vec<f64>> {
    let m = bases[0].degree();
    let l = bases[0].len();
    let rule = QuadratureRule::simplex(mesh.dim() - 1, data_degree(m))?;
    let mut out = vec![0.0; mesh.n_elements() * l];
    for (f, face) in mesh.faces().iter().enumerate() {
        if !face.is_boundary() {
            continue;
        }
        let k = face.owner;
        let h = face.diameter;
        let n = &face.normal;
        for (x, w) in rule.on_face(mesh, f) {
            let (g1, g2) = ((data.g1)(&x), (data.g2)(&x, n));
            let t = side_tab(&bases[k].tabulate(&x), n);
            for i in 0..l {
                out[k * l + i] += w
                    * (g1 * t.dn_lap[i] - g2 * t.lap[i]
                        + pen.mu1 * h.powi(-3) * g1 * t.value[i]
                        + pen.mu2 / h * g2 * t.dn[i]);
            }
        }
    }
    Ok(out)
}

/// Linear system over interior nodes for a given reconstruction.
#[derive(Clone, Debug)]
pub struct DgSystem {
    degree: usize,
    penalties: Penalties,
    recon: ReconOperator,
    /// `R` over all nodes.
    recon_matrix: CsrMatrix,
    /// `A` over all nodes (needed for boundary lifting).
    a_full: CsrMatrix,
    a: CsrMatrix,
    mass: CsrMatrix,
    a_low: CsrMatrix,
    interior: Vec<usize>,
}

impl DgSystem {
    pub fn assemble(mesh: &Mesh, recon: ReconOperator, penalties: Penalties) -> Result<Self> {
        if !(penalties.mu1 > 0.0 && penalties.mu2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalties must be positive (mu1 = {}, mu2 = {})",
                penalties.mu1, penalties.mu2
            )));
        }
        let d = broken_dg_matrix(mesh, recon.bases(), penalties)?;
        let r = recon.matrix(mesh.n_nodes());
        let rt = r.transpose();
        let a_full = rt.matmul(&d.matmul(&r)).symmetrize();
        let interior = mesh.interior_nodes().to_vec();
        let a = a_full.select(&interior, &interior);
        let mass = rt.matmul(&r).select(&interior, &interior).symmetrize();
        Ok(Self {
            degree: recon.degree(),
            penalties,
            recon,
            recon_matrix: r,
            a_full,
            a,
            mass,
            a_low: low_order_matrix(mesh),
            interior,
        })
    }

    /// Builds the reconstruction (with the adaptive threshold fallback) and
    /// assembles.
    pub fn build(mesh: &Mesh, m: usize, threshold: usize, penalties: Penalties) -> Result<Self> {
        let recon = ReconOperator::build_adaptive(mesh, m, threshold)?;
        Self::assemble(mesh, recon, penalties)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn penalties(&self) -> Penalties {
        self.penalties
    }

    pub fn recon(&self) -> &ReconOperator {
        &self.recon
    }

    /// Number of unknowns `n_p` (interior nodes).
    pub fn n_dofs(&self) -> usize {
        self.interior.len()
    }

    /// `A_m`.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.a
    }

    /// `M_m`.
    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// `A_L`.
    pub fn low_order(&self) -> &CsrMatrix {
        &self.a_low
    }

    /// `l_h(φ_ν)` for every interior node.
    pub fn rhs(&self, mesh: &Mesh, f: ScalarFn) -> Result<Vec<f64>> {
        let fb = broken_load(mesh, self.recon.bases(), f)?;
        let full = self.recon_matrix.tr_mul_vec(&fb);
        Ok(self.interior.iter().map(|&v| full[v]).collect())
    }

    /// Load for clamped data `u = g1`, `∂_n u = g2`. Returns the load and the
    /// nodal lift (`g1` at boundary nodes, zero inside); the discrete
    /// solution is `R^m(w + lift)` with `w` solving `A w = b`.
    pub fn rhs_inhomogeneous(&self, mesh: &Mesh, f: ScalarFn, data: BoundaryData) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut fb = broken_load(mesh, self.recon.bases(), f)?;
        let gb = broken_boundary_load(mesh, self.recon.bases(), data, self.penalties)?;
        for (a, b) in fb.iter_mut().zip(gb) {
            *a += b;
        }
        let lift: Vec<f64> = (0..mesh.n_nodes())
            .map(|v| {
                if mesh.is_boundary_node(v) {
                    (data.g1)(mesh.point(v))
                } else {
                    0.0
                }
            })
            .collect();
        let full = self.recon_matrix.tr_mul_vec(&fb);
        let a_lift = self.a_full.mul_vec(&lift);
        let b = self.interior.iter().map(|&v| full[v] - a_lift[v]).collect();
        Ok((b, lift))
    }

    /// Nodal vector over all nodes from interior values and an optional lift.
    pub fn nodal(&self, mesh: &Mesh, interior: &[f64], lift: Option<&[f64]>) -> Vec<f64> {
        let mut out = match lift {
            Some(l) => l.to_vec(),
            None => vec![0.0; mesh.n_nodes()],
        };
        for (&v, &x) in self.interior.iter().zip(interior) {
            out[v] += x;
        }
        out
    }

    /// Broken coefficients of `R^m` applied to interior values plus lift.
    pub fn coefficients(&self, mesh: &Mesh, interior: &[f64], lift: Option<&[f64]>) -> Vec<f64> {
        self.recon.apply(&self.nodal(mesh, interior, lift))
    }
}

/// Value and derivatives up to third order of a scalar field at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Point,
    pub hess: [[f64; 3]; 3],
    /// `∇Δv`.
    pub grad_lap: Point,
}

impl Jet {
    pub fn lap(&self) -> f64 {
        self.hess[0][0] + self.hess[1][1] + self.hess[2][2]
    }

    pub fn hess_frobenius_sq(&self) -> f64 {
        self.hess.iter().flatten().map(|x| x * x).sum()
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        let mut r = *self;
        r.value -= o.value;
        for a in 0..3 {
            r.grad[a] -= o.grad[a];
            r.grad_lap[a] -= o.grad_lap[a];
            for b in 0..3 {
                r.hess[a][b] -= o.hess[a][b];
            }
        }
        r
    }
}

/// A piecewise smooth function evaluated element by element.
pub trait BrokenField: Sync {
    fn jet(&self, k: usize, x: &Point) -> Jet;
}

/// Broken polynomial given by orthonormal-basis coefficients.
pub struct BrokenPolynomial<'a> {
    pub bases: &'a [LocalBasis],
    pub coefs: &'a [f64],
}

impl BrokenField for BrokenPolynomial<'_> {
    fn jet(&self, k: usize, x: &Point) -> Jet {
        let b = &self.bases[k];
        let l = b.len();
        let c = &self.coefs[k * l..(k + 1) * l];
        let comb = |beta: [usize; 3]| -> f64 { b.eval(x, beta).iter().zip(c).map(|(p, a)| p * a).sum() };
        let d = b.dim();
        let mut jet = Jet {
            value: comb([0, 0, 0]),
            ..Jet::default()
        };
        for a in 0..d {
            let mut e = [0; 3];
            e[a] = 1;
            jet.grad[a] = comb(e);
            for bb in a..d {
                let mut e2 = e;
                e2[bb] += 1;
                let v = comb(e2);
                jet.hess[a][bb] = v;
                jet.hess[bb][a] = v;
            }
            let mut gl = 0.0;
            for bb in 0..d {
                let mut e3 = e;
                e3[bb] += 2;
                gl += comb(e3);
            }
            jet.grad_lap[a] = gl;
        }
        jet
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NormKind {
    /// `Σ‖Δv‖² + Σ h_e^{-3}‖⟦v⟧‖² + h_e^{-1}‖⟦∂_n v⟧‖²`.
    Energy,
    /// `Energy` plus `Σ h_e³‖⟨∂_nΔv⟩‖² + h_e‖⟨Δv⟩‖²`.
    EnergyTilde,
    /// `Energy` with the Laplacian replaced by the full Hessian.
    Hessian,
}

/// Squared contributions to the broken norms of a field.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct NormParts {
    pub l2: f64,
    pub laplacian: f64,
    pub hessian: f64,
    /// `Σ h_e^{-3}‖⟦v⟧‖²`
    pub jump_value: f64,
    /// `Σ h_e^{-1}‖⟦∂_n v⟧‖²`
    pub jump_normal: f64,
    /// `Σ h_e‖⟨Δv⟩‖²`
    pub avg_lap: f64,
    /// `Σ h_e³‖⟨∂_nΔv⟩‖²`
    pub avg_normal_lap: f64,
}

impl NormParts {
    pub fn jumps(&self) -> f64 {
        self.jump_value + self.jump_normal
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        let sq = match kind {
            NormKind::Energy => self.laplacian + self.jumps(),
            NormKind::EnergyTilde => self.laplacian + self.jumps() + self.avg_lap + self.avg_normal_lap,
            NormKind::Hessian => self.hessian + self.jumps(),
        };
        sq.sqrt()
    }
}

/// Evaluates all norm contributions with quadrature of the given degree.
pub fn norm_parts(mesh: &Mesh, field: &dyn BrokenField, degree: usize) -> Result<NormParts> {
    let vol = QuadratureRule::simplex(mesh.dim(), degree)?;
    let fr = QuadratureRule::simplex(mesh.dim() - 1, degree)?;
    let elems: Vec<[f64; 3]> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let mut s = [0.0; 3];
            for (x, w) in vol.on_element(mesh, k) {
                let j = field.jet(k, &x);
                s[0] += w * j.value * j.value;
                s[1] += w * j.lap() * j.lap();
                s[2] += w * j.hess_frobenius_sq();
            }
            s
        })
        .collect();
    let faces: Vec<[f64; 4]> = (0..mesh.faces().len())
        .into_par_iter()
        .map(|f| {
            let face = &mesh.faces()[f];
            let h = face.diameter;
            let n = &face.normal;
            let mut s = [0.0; 4];
            for (x, w) in fr.on_face(mesh, f) {
                let (mut jv, mut jn, mut al, mut anl) = (0.0, 0.0, 0.0, 0.0);
                for (k, sign, avg) in face_sides(face) {
                    let j = field.jet(k, &x);
                    jv += sign * j.value;
                    jn += sign * dot3(&j.grad, n);
                    al += avg * j.lap();
                    anl += avg * dot3(&j.grad_lap, n);
                }
                s[0] += w * jv * jv / h.powi(3);
                s[1] += w * jn * jn / h;
                s[2] += w * al * al * h;
                s[3] += w * anl * anl * h.powi(3);
            }
            s
        })
        .collect();
    let mut p = NormParts::default();
    for s in elems {
        p.l2 += s[0];
        p.laplacian += s[1];
        p.hessian += s[2];
    }
    for s in faces {
        p.jump_value += s[0];
        p.jump_normal += s[1];
        p.avg_lap += s[2];
        p.avg_normal_lap += s[3];
    }
    Ok(p)
}

/// Selected norm of a broken polynomial.
pub fn energy_norm(mesh: &Mesh, bases: &[LocalBasis], coefs: &[f64], kind: NormKind) -> Result<f64> {
    let deg = 2 * bases[0].degree();
    Ok(norm_parts(mesh, &BrokenPolynomial { bases, coefs }, deg)?.norm(kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::default_threshold;
    use crate::sparse::dot;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn system(n: usize, m: usize) -> (Mesh, DgSystem) {
        let mesh = Mesh::unit_square(n).unwrap();
        let sys = DgSystem::build(&mesh, m, default_threshold(2, m), Penalties::default()).unwrap();
        (mesh, sys)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn default_penalties() {
        assert_eq!(Penalties::default(), Penalties { mu1: 10.0, mu2: 10.0 });
    }

    #[test]
    fn degree_one_form_is_mu2_times_low_order() {
        for mesh in [Mesh::unit_square(6).unwrap(), Mesh::unit_cube(3).unwrap()] {
            let recon = ReconOperator::build(&mesh, 1, mesh.dim() + 1).unwrap();
            let pen = Penalties { mu1: 7.0, mu2: 3.0 };
            let sys = DgSystem::assemble(&mesh, recon, pen).unwrap();
            let diff = sys.matrix().add_scaled(1.0, sys.low_order(), -3.0);
            let scale = sys.matrix().values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(diff.values().iter().all(|v| v.abs() < 1e-10 * scale));
        }
    }

    #[test]
    fn matrices_are_symmetric_and_definite() {
        let (_, sys) = system(4, 2);
        for a in [sys.matrix(), sys.mass(), sys.low_order()] {
            assert!(a.asymmetry() < 1e-12);
            let eig = a.to_dense().symmetric_eigenvalues();
            assert!(eig.min() > 0.0, "min eigenvalue {}", eig.min());
        }
        assert_eq!(sys.n_dofs(), 9);
    }

    #[test]
    fn default_penalties_are_coercive_with_margin() {
        // still definite at a quarter of the default strength
        let weak = Penalties { mu1: 2.5, mu2: 2.5 };
        for (mesh, degrees) in [
            (Mesh::unit_square(8).unwrap(), 2..=4),
            (Mesh::unit_cube(3).unwrap(), 2..=3),
        ] {
            for m in degrees {
                let recon = ReconOperator::build_adaptive(&mesh, m, default_threshold(mesh.dim(), m)).unwrap();
                let sys = DgSystem::assemble(&mesh, recon, weak).unwrap();
                let eig = sys.matrix().to_dense().symmetric_eigenvalues();
                assert!(eig.min() > 0.0, "d = {}, m = {m}: {}", mesh.dim(), eig.min());
            }
        }
    }

    #[test]
    fn system_size_is_independent_of_degree() {
        for m in 1..=4 {
            let (mesh, sys) = system(6, m);
            assert_eq!(sys.matrix().nrows(), mesh.n_interior_nodes());
        }
    }

    #[test]
    fn single_interior_node_low_order_by_hand() {
        // n = 2: the single unknown is the hat function of (1/2, 1/2)
        let mesh = Mesh::unit_square(2).unwrap();
        let al = low_order_matrix(&mesh);
        assert_eq!(al.nrows(), 1);
        // independent oracle: sample ∂_n on each side just off the face midpoint
        let node = mesh.interior_nodes()[0];
        let hat_grad = |k: usize| -> Point {
            let pos = mesh.element(k).iter().position(|&v| v == node);
            pos.map_or([0.0; 3], |i| mesh.barycentric_gradients(k)[i])
        };
        let mut expected = 0.0;
        for face in mesh.faces() {
            let gp = dot3(&hat_grad(face.owner), &face.normal);
            let gm = face.neighbor.map_or(0.0, |nb| dot3(&hat_grad(nb), &face.normal));
            expected += face.measure / face.diameter * (gp - gm).powi(2);
        }
        assert!(expected > 0.0);
        assert!((al.get(0, 0) - expected).abs() < 1e-12);
        // each face contributes |∂_n jump|² with h_e = |e|: 4 axis edges at
        // the node, 2 diagonals and the faces opposite it sum to 64
        assert!((al.get(0, 0) - 64.0).abs() < 1e-12);
    }

    #[test]
    fn low_order_matches_energy_norm_of_linears() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mesh = Mesh::unit_square(5).unwrap();
        let recon = ReconOperator::build(&mesh, 1, 3).unwrap();
        let al = low_order_matrix(&mesh);
        for _ in 0..5 {
            let v = random_vec(&mut rng, mesh.n_interior_nodes());
            let c = recon.apply_interior(&mesh, &v);
            let e = energy_norm(&mesh, recon.bases(), &c, NormKind::Energy).unwrap();
            let q = dot(&v, &al.mul_vec(&v));
            assert!((e * e - q).abs() < 1e-10 * q);
        }
    }

    #[test]
    fn coarse_functions_see_doubled_low_order_form_on_fine_mesh() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for coarse in [Mesh::unit_square(4).unwrap(), Mesh::unit_cube(2).unwrap()] {
            let (fine, p) = coarse.refine().unwrap();
            let pi = p.select(fine.interior_nodes(), coarse.interior_nodes());
            let ac = low_order_matrix(&coarse);
            let af = low_order_matrix(&fine);
            for _ in 0..20 {
                let v = random_vec(&mut rng, coarse.n_interior_nodes());
                let w = random_vec(&mut rng, coarse.n_interior_nodes());
                let coarse_form = dot(&w, &ac.mul_vec(&v));
                let fine_form = dot(&pi.mul_vec(&w), &af.mul_vec(&pi.mul_vec(&v)));
                assert!((fine_form - 2.0 * coarse_form).abs() < 1e-8 * fine_form.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mass_row_sums_integrate_reconstructed_function() {
        let (mesh, sys) = system(5, 2);
        let ones = vec![1.0; sys.n_dofs()];
        let c = sys.coefficients(&mesh, &ones, None);
        // ∫ R(1_interior) via quadrature of the broken polynomial
        let rule = QuadratureRule::simplex(2, 4).unwrap();
        let r = sys.recon();
        let l = r.local_dim();
        let integral: f64 = (0..mesh.n_elements())
            .flat_map(|k| rule.on_element(&mesh, k).into_iter().map(move |(x, w)| (k, x, w)))
            .map(|(k, x, w)| w * r.eval(k, &c[k * l..(k + 1) * l], &x))
            .sum();
        // 1ᵀ M 1 = ‖R 1‖² whereas Σ_ν (M 1)_ν ∫φ_ν pairs against ∫R 1 via the load
        let b = sys.rhs(&mesh, &|_| 1.0).unwrap();
        let total: f64 = b.iter().sum();
        assert!((total - integral).abs() < 1e-12);
        let m1 = sys.mass().mul_vec(&ones);
        let quad_sq: f64 = (0..mesh.n_elements())
            .map(|k| c[k * l..(k + 1) * l].iter().map(|x| x * x).sum::<f64>())
            .sum();
        assert!((m1.iter().sum::<f64>() - quad_sq).abs() < 1e-10);
    }

    #[test]
    fn mass_rayleigh_quotient_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [4, 8] {
            let (mesh, sys) = system(n, 2);
            let h2 = mesh.mesh_size().powi(2);
            let lam = sys.recon().stats().lambda;
            for _ in 0..100 {
                let v = random_vec(&mut rng, sys.n_dofs());
                let q = dot(&v, &sys.mass().mul_vec(&v)) / dot(&v, &v);
                assert!(q >= 0.01 * h2 && q <= 10.0 * lam * lam * h2, "q/h² = {}", q / h2);
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_load() {
        let (mesh, sys) = system(4, 2);
        let zero = |_: &Point| 0.0;
        let zero_n = |_: &Point, _: &Point| 0.0;
        let (b, lift) = sys
            .rhs_inhomogeneous(&mesh, &zero, BoundaryData { g1: &zero, g2: &zero_n })
            .unwrap();
        assert!(b.iter().chain(&lift).all(|&x| x == 0.0));
    }

    #[test]
    fn unit_load_on_one_node_mesh_integrates_basis_function() {
        let mesh = Mesh::unit_square(2).unwrap();
        let sys = DgSystem::build(&mesh, 2, 6, Penalties::default()).unwrap();
        let b = sys.rhs(&mesh, &|_| 1.0).unwrap();
        // φ_ν = R(e_ν); integrate it with an independent high-order rule
        let c = sys.coefficients(&mesh, &[1.0], None);
        let rule = QuadratureRule::simplex(2, 10).unwrap();
        let l = sys.recon().local_dim();
        let mut integral = 0.0;
        for k in 0..mesh.n_elements() {
            for (x, w) in rule.on_element(&mesh, k) {
                integral += w * sys.recon().eval(k, &c[k * l..(k + 1) * l], &x);
            }
        }
        assert!((b[0] - integral).abs() < 1e-12);
    }

    /// Adaptive Simpson on [a, b] with relative tolerance.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rtol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (flm, frm) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                return left + right + delta / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        let scale = [fa, fm, fb].iter().fold(0.0f64, |s, v| s.max(v.abs())) * (b - a);
        rec(f, a, b, fa, fm, fb, whole, rtol * scale.max(1e-300), 14)
    }

    #[test]
    fn boundary_load_face_integral_matches_adaptive_oracle() {
        use std::f64::consts::PI;
        let mesh = Mesh::unit_cube(4).unwrap();
        let m = 2;
        let recon = ReconOperator::build_adaptive(&mesh, m, default_threshold(3, m)).unwrap();
        let pen = Penalties::default();
        let g1 = |_: &Point| 0.0;
        let g2 = |x: &Point, n: &Point| {
            let grad = [
                PI * (PI * x[0]).cos() * (PI * x[1]).sin() * (PI * x[2]).sin(),
                PI * (PI * x[0]).sin() * (PI * x[1]).cos() * (PI * x[2]).sin(),
                PI * (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).cos(),
            ];
            dot3(&grad, n)
        };
        // a face on x = 0 owned by some element
        let face = mesh
            .faces()
            .iter()
            .find(|fc| fc.is_boundary() && fc.vertices.iter().all(|&v| mesh.point(v)[0] == 0.0))
            .unwrap();
        assert!((g2(&[0.0, 0.3, 0.6], &face.normal) + PI * (0.3 * PI).sin() * (0.6 * PI).sin()).abs() < 1e-14);
        let k = face.owner;
        let l = recon.local_dim();
        // element k may own several boundary faces; the oracle integrates all of them
        let loads = broken_boundary_load(&mesh, recon.bases(), BoundaryData { g1: &g1, g2: &g2 }, pen).unwrap();
        let single = &loads[k * l..(k + 1) * l];
        let owned: Vec<usize> = mesh
            .faces()
            .iter()
            .enumerate()
            .filter(|(_, fc)| fc.is_boundary() && fc.owner == k)
            .map(|(i, _)| i)
            .collect();
        // oracle: nested adaptive Simpson over each owned face triangle
        let basis = recon.basis(k);
        let mut oracle = vec![0.0; l];
        for &fi in &owned {
            let fc = &mesh.faces()[fi];
            let p: Vec<Point> = fc.vertices.iter().map(|&v| *mesh.point(v)).collect();
            let h = fc.diameter;
            let jac = 2.0 * fc.measure;
            for (i, o) in oracle.iter_mut().enumerate() {
                let integrand = |s: f64, t: f64| {
                    let x = [0, 1, 2].map(|a| p[0][a] + s * (p[1][a] - p[0][a]) + t * (p[2][a] - p[0][a]));
                    let tab = basis.tabulate(&x);
                    let dn = tab.normal_derivative(&fc.normal)[i];
                    let g = g2(&x, &fc.normal);
                    -g * tab.lap[i] + pen.mu2 / h * g * dn
                };
                let inner = |s: f64| simpson(&|t| integrand(s, t), 0.0, 1.0 - s, 1e-11);
                *o += jac * simpson(&inner, 0.0, 1.0, 1e-10);
            }
        }
        for i in 0..l {
            assert!(
                (single[i] - oracle[i]).abs() < 1e-7 * oracle[i].abs().max(1.0),
                "{i}: {} vs {}",
                single[i],
                oracle[i]
            );
        }
    }

    #[test]
    fn energy_norm_orderings() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mesh, sys) = system(4, 3);
        let bases = sys.recon().bases();
        for _ in 0..50 {
            let v = random_vec(&mut rng, sys.n_dofs());
            let c = sys.coefficients(&mesh, &v, None);
            let p = norm_parts(&mesh, &BrokenPolynomial { bases, coefs: &c }, 6).unwrap();
            assert!(p.norm(NormKind::Energy) <= p.norm(NormKind::EnergyTilde));
            // trace inequality (Δv)² ≤ d |D²v|²
            assert!(p.laplacian <= 2.0 * p.hessian * (1.0 + 1e-12));
            let a = dot(&v, &sys.matrix().mul_vec(&v));
            assert!(a > 0.0);
        }
    }

    #[test]
    fn quadratic_form_matches_field_evaluation() {
        // vᵀ A v against a direct evaluation of the bilinear form through jets
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mesh, sys) = system(3, 2);
        let v = random_vec(&mut rng, sys.n_dofs());
        let c = sys.coefficients(&mesh, &v, None);
        let bases = sys.recon().bases();
        let field = BrokenPolynomial { bases, coefs: &c };
        let pen = sys.penalties();
        let vol = QuadratureRule::simplex(2, 4).unwrap();
        let fr = QuadratureRule::simplex(1, 4).unwrap();
        let mut a = 0.0;
        for k in 0..mesh.n_elements() {
            for (x, w) in vol.on_element(&mesh, k) {
                a += w * field.jet(k, &x).lap().powi(2);
            }
        }
        for (f, face) in mesh.faces().iter().enumerate() {
            let h = face.diameter;
            for (x, w) in fr.on_face(&mesh, f) {
                let (mut jv, mut jn, mut al, mut anl) = (0.0, 0.0, 0.0, 0.0);
                for (k, s, avg) in face_sides(face) {
                    let j = field.jet(k, &x);
                    jv += s * j.value;
                    jn += s * dot3(&j.grad, &face.normal);
                    al += avg * j.lap();
                    anl += avg * dot3(&j.grad_lap, &face.normal);
                }
                a += w * (2.0 * jv * anl - 2.0 * al * jn + pen.mu1 / h.powi(3) * jv * jv + pen.mu2 / h * jn * jn);
            }
        }
        let q = dot(&v, &sys.matrix().mul_vec(&v));
        assert!((a - q).abs() < 1e-9 * q.abs());
    }

    #[test]
    fn dense_pullback_agrees_with_sparse_assembly() {
        let (mesh, sys) = system(3, 2);
        let d = broken_dg_matrix(&mesh, sys.recon().bases(), sys.penalties())
            .unwrap()
            .to_dense();
        let r = sys.recon().matrix(mesh.n_nodes()).to_dense();
        let full: DMatrix<f64> = r.transpose() * d * &r;
        let ii = mesh.interior_nodes();
        let a = sys.matrix();
        for (i, &vi) in ii.iter().enumerate() {
            for (j, &vj) in ii.iter().enumerate() {
                assert!((full[(vi, vj)] - a.get(i, j)).abs() < 1e-9 * full[(vi, vi)].abs());
            }
        }
    }
}
