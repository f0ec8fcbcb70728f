//! Quadrature on simplices and element-orthonormal polynomial bases.
//!
//! Bases are built from scaled monomials `((x - x_K)/h_K)^α` in graded
//! lexicographic order and orthonormalized in `L²(K)` by a Cholesky
//! factorization of their Gram matrix (the same triangular transform as
//! Gram–Schmidt in that order), applied twice.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

pub const MAX_QUADRATURE_DEGREE: usize = 20;

/// Quadrature rule on the reference simplex `{ξ ≥ 0, Σξ ≤ 1}`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    dim: usize,
    degree: usize,
    points: Vec<Point>,
    weights: Vec<f64>,
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Newton iteration on P_n from the Chebyshev-like initial guess
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

impl QuadratureRule {
    /// Rule exact for polynomials of total degree `degree` on the reference
    /// simplex of dimension `dim ∈ {1, 2, 3}`. Degrees 0 and 1 use the
    /// barycenter; higher degrees use collapsed Gauss–Legendre products,
    /// which keeps all weights positive.
    pub fn simplex(dim: usize, degree: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) || degree > MAX_QUADRATURE_DEGREE {
            return Err(Error::UnsupportedQuadrature { dim, degree });
        }
        let fact = [1.0, 1.0, 2.0, 6.0][dim];
        if degree <= 1 {
            let c = 1.0 / (dim + 1) as f64;
            let mut p = [0.0; 3];
            p[..dim].fill(c);
            return Ok(Self {
                dim,
                degree,
                points: vec![p],
                weights: vec![1.0 / fact],
            });
        }
        let npts = |extra: usize| (degree + extra + 1).div_ceil(2);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        match dim {
            1 => {
                let (x, w) = gauss_legendre(npts(0));
                for (xi, wi) in x.iter().zip(&w) {
                    points.push([*xi, 0.0, 0.0]);
                    weights.push(*wi);
                }
            }
            2 => {
                let (xu, wu) = gauss_legendre(npts(1));
                let (xv, wv) = gauss_legendre(npts(0));
                for (u, a) in xu.iter().zip(&wu) {
                    for (v, b) in xv.iter().zip(&wv) {
                        points.push([*u, v * (1.0 - u), 0.0]);
                        weights.push(a * b * (1.0 - u));
                    }
                }
            }
            _ => {
                let (xu, wu) = gauss_legendre(npts(2));
                let (xv, wv) = gauss_legendre(npts(1));
                let (xw, ww) = gauss_legendre(npts(0));
                for (u, a) in xu.iter().zip(&wu) {
                    for (v, b) in xv.iter().zip(&wv) {
                        for (w, c) in xw.iter().zip(&ww) {
                            points.push([*u, v * (1.0 - u), w * (1.0 - u) * (1.0 - v)]);
                            weights.push(a * b * c * (1.0 - u) * (1.0 - u) * (1.0 - v));
                        }
                    }
                }
            }
        }
        Ok(Self {
            dim,
            degree,
            points,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Reference coordinates `ξ`.
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Barycentric coordinates `(1 - Σξ, ξ_1, …, ξ_dim)` of point `q`.
    pub fn barycentric(&self, q: usize) -> Vec<f64> {
        let xi = &self.points[q][..self.dim];
        let mut b = Vec::with_capacity(self.dim + 1);
        b.push(1.0 - xi.iter().sum::<f64>());
        b.extend_from_slice(xi);
        b
    }

    /// Physical points and weights on the simplex with the given vertices
    /// (`dim + 1` of them) and measure.
    pub fn map(&self, vertices: &[Point], measure: f64) -> Vec<(Point, f64)> {
        let fact = [1.0, 1.0, 2.0, 6.0][self.dim];
        let v0 = vertices[0];
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(xi, &w)| {
                let mut x = v0;
                for (i, vi) in vertices.iter().enumerate().skip(1) {
                    for a in 0..3 {
                        x[a] += xi[i - 1] * (vi[a] - v0[a]);
                    }
                }
                (x, w * fact * measure)
            })
            .collect()
    }

    /// Quadrature nodes on element `k`.
    pub fn on_element(&self, mesh: &Mesh, k: usize) -> Vec<(Point, f64)> {
        let verts: Vec<Point> = mesh.element(k).iter().map(|&v| *mesh.point(v)).collect();
        self.map(&verts, mesh.volume(k))
    }

    /// Quadrature nodes on face `f` (rule must have dimension `d - 1`).
    pub fn on_face(&self, mesh: &Mesh, f: usize) -> Vec<(Point, f64)> {
        let face = &mesh.faces()[f];
        let verts: Vec<Point> = face.vertices.iter().map(|&v| *mesh.point(v)).collect();
        self.map(&verts, face.measure)
    }
}

/// Exponents of all monomials of total degree `≤ m` in `dim` variables,
/// graded, and lexicographically descending in `x` within a degree.
pub fn monomial_exponents(dim: usize, m: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for t in 0..=m {
        match dim {
            1 => out.push([t, 0, 0]),
            2 => {
                for a in (0..=t).rev() {
                    out.push([a, t - a, 0]);
                }
            }
            _ => {
                for a in (0..=t).rev() {
                    for b in (0..=t - a).rev() {
                        out.push([a, b, t - a - b]);
                    }
                }
            }
        }
    }
    out
}

/// `dim P_m` in `dim` variables.
pub fn poly_dim(dim: usize, m: usize) -> usize {
    match dim {
        1 => m + 1,
        2 => (m + 1) * (m + 2) / 2,
        _ => (m + 1) * (m + 2) * (m + 3) / 6,
    }
}

/// `L²(K)`-orthonormal basis of `P_m` on one element.
#[derive(Clone, Debug)]
pub struct LocalBasis {
    element: usize,
    dim: usize,
    degree: usize,
    center: Point,
    scale: f64,
    exponents: Vec<[usize; 3]>,
    /// Row `i` holds the scaled-monomial coefficients of basis function `i`.
    coef: DMatrix<f64>,
}

/// Values of a falling factorial `a (a-1) … (a-k+1)`.
fn falling(a: usize, k: usize) -> f64 {
    if k > a {
        return 0.0;
    }
    ((a - k + 1)..=a).fold(1.0, |p, v| p * v as f64)
}

impl LocalBasis {
    /// Orthonormalizes scaled monomials on element `k` using `rule`, which
    /// must be exact to degree `2m`.
    pub fn orthonormalize(mesh: &Mesh, k: usize, m: usize, rule: &QuadratureRule) -> Result<Self> {
        if rule.degree() < 2 * m {
            return Err(Error::InvalidArgument(format!(
                "quadrature degree {} below 2m = {}",
                rule.degree(),
                2 * m
            )));
        }
        let dim = mesh.dim();
        let exponents = monomial_exponents(dim, m);
        let l = exponents.len();
        let mut basis = Self {
            element: k,
            dim,
            degree: m,
            center: *mesh.barycenter(k),
            scale: mesh.diameter(k),
            exponents,
            coef: DMatrix::identity(l, l),
        };
        let nodes = rule.on_element(mesh, k);
        for _pass in 0..2 {
            let mut gram = DMatrix::<f64>::zeros(l, l);
            for (x, w) in &nodes {
                let v = basis.values(x);
                for i in 0..l {
                    for j in 0..=i {
                        gram[(i, j)] += w * v[i] * v[j];
                    }
                }
            }
            for i in 0..l {
                for j in 0..i {
                    gram[(j, i)] = gram[(i, j)];
                }
            }
            let chol = gram.cholesky().ok_or_else(|| Error::DegenerateElement {
                element: k,
                reason: "Gram matrix of the local basis is numerically singular".into(),
            })?;
            let linv = chol
                .l()
                .solve_lower_triangular(&DMatrix::identity(l, l))
                .ok_or_else(|| Error::DegenerateElement {
                    element: k,
                    reason: "singular Cholesky factor".into(),
                })?;
            basis.coef = linv * &basis.coef;
        }
        Ok(basis)
    }

    pub fn element(&self) -> usize {
        self.element
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of basis functions `l = dim P_m`.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coef
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `∂^β` of every scaled monomial at `x`.
    fn monomial_derivs(&self, x: &Point, beta: [usize; 3]) -> Vec<f64> {
        let s = [
            (x[0] - self.center[0]) / self.scale,
            (x[1] - self.center[1]) / self.scale,
            (x[2] - self.center[2]) / self.scale,
        ];
        let order: usize = beta.iter().sum();
        let hscale = self.scale.powi(-(order as i32));
        self.exponents
            .iter()
            .map(|alpha| {
                let mut v = hscale;
                for a in 0..self.dim {
                    if beta[a] > alpha[a] {
                        return 0.0;
                    }
                    v *= falling(alpha[a], beta[a]) * s[a].powi((alpha[a] - beta[a]) as i32);
                }
                v
            })
            .collect()
    }

    /// `∂^β p_i(x)` for all basis functions, `|β| ≤ 3`.
    pub fn eval(&self, x: &Point, beta: [usize; 3]) -> Vec<f64> {
        debug_assert!(beta.iter().sum::<usize>() <= 3);
        let md = self.monomial_derivs(x, beta);
        let l = self.len();
        (0..l)
            .map(|i| (0..l).map(|j| self.coef[(i, j)] * md[j]).sum())
            .collect()
    }

    pub fn values(&self, x: &Point) -> Vec<f64> {
        self.eval(x, [0, 0, 0])
    }

    /// `grad[a][i] = ∂_a p_i(x)`.
    pub fn gradients(&self, x: &Point) -> Vec<Vec<f64>> {
        (0..self.dim).map(|a| self.eval(x, unit(a))).collect()
    }

    /// `hess[a][b][i] = ∂_a ∂_b p_i(x)`.
    pub fn hessians(&self, x: &Point) -> Vec<Vec<Vec<f64>>> {
        (0..self.dim)
            .map(|a| (0..self.dim).map(|b| self.eval(x, add(unit(a), unit(b)))).collect())
            .collect()
    }

    pub fn laplacians(&self, x: &Point) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for a in 0..self.dim {
            for (o, v) in out.iter_mut().zip(self.eval(x, add(unit(a), unit(a)))) {
                *o += v;
            }
        }
        out
    }

    /// `out[a][i] = ∂_a Δ p_i(x)`.
    pub fn grad_laplacians(&self, x: &Point) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|a| {
                let mut out = vec![0.0; self.len()];
                for b in 0..self.dim {
                    let beta = add(unit(a), add(unit(b), unit(b)));
                    for (o, v) in out.iter_mut().zip(self.eval(x, beta)) {
                        *o += v;
                    }
                }
                out
            })
            .collect()
    }

    /// Everything the DG kernels need at one point.
    pub fn tabulate(&self, x: &Point) -> BasisValues {
        BasisValues {
            value: self.values(x),
            grad: self.gradients(x),
            lap: self.laplacians(x),
            grad_lap: self.grad_laplacians(x),
        }
    }
}

/// Basis values and derivatives at a single point.
#[derive(Clone, Debug)]
pub struct BasisValues {
    pub value: Vec<f64>,
    pub grad: Vec<Vec<f64>>,
    pub lap: Vec<f64>,
    pub grad_lap: Vec<Vec<f64>>,
}

impl BasisValues {
    /// Normal derivative of every basis function.
    pub fn normal_derivative(&self, n: &Point) -> Vec<f64> {
        directional(&self.grad, n)
    }

    /// Normal derivative of the Laplacian of every basis function.
    pub fn normal_grad_lap(&self, n: &Point) -> Vec<f64> {
        directional(&self.grad_lap, n)
    }
}

fn directional(g: &[Vec<f64>], n: &Point) -> Vec<f64> {
    let l = g[0].len();
    (0..l)
        .map(|i| g.iter().enumerate().map(|(a, ga)| n[a] * ga[i]).sum())
        .collect()
}

fn unit(a: usize) -> [usize; 3] {
    let mut u = [0; 3];
    u[a] = 1;
    u
}

fn add(a: [usize; 3], b: [usize; 3]) -> [usize; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).fold(1.0, |p, v| p * v as f64)
    }

    /// `∫ ξ^α` over the reference simplex.
    fn exact_moment(dim: usize, alpha: [usize; 3]) -> f64 {
        let t: usize = alpha.iter().sum();
        alpha[..dim].iter().map(|&a| factorial(a)).product::<f64>() / factorial(t + dim)
    }

    #[test]
    fn degree_one_rule_is_barycenter() {
        let r = QuadratureRule::simplex(2, 1).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r.points()[0][0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.weights()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_form_examples() {
        let r = QuadratureRule::simplex(2, 4).unwrap();
        let s: f64 = r
            .points()
            .iter()
            .zip(r.weights())
            .map(|(p, w)| w * p[0] * p[0] * p[1] * p[1])
            .sum();
        assert!((s - 1.0 / 180.0).abs() < 1e-15);
        let r = QuadratureRule::simplex(3, 3).unwrap();
        let s: f64 = r
            .points()
            .iter()
            .zip(r.weights())
            .map(|(p, w)| w * p[0] * p[1] * p[2])
            .sum();
        assert!((s - 1.0 / 720.0).abs() < 1e-16);
    }

    #[test]
    fn rules_integrate_all_monomials_exactly() {
        for dim in 1..=3 {
            for degree in [0, 1, 2, 3, 5, 8, 12, 20] {
                let r = QuadratureRule::simplex(dim, degree).unwrap();
                assert!(r.weights().iter().all(|&w| w > 0.0));
                for alpha in monomial_exponents(dim, degree) {
                    let q: f64 = r
                        .points()
                        .iter()
                        .zip(r.weights())
                        .map(|(p, w)| w * (0..dim).map(|a| p[a].powi(alpha[a] as i32)).product::<f64>())
                        .sum();
                    let e = exact_moment(dim, alpha);
                    assert!(
                        (q - e).abs() <= 1e-12 * e,
                        "dim {dim} deg {degree} {alpha:?}: {q} vs {e}"
                    );
                }
            }
        }
    }

    #[test]
    fn unsupported_degree_errors() {
        assert!(QuadratureRule::simplex(2, 21).is_err());
        assert!(QuadratureRule::simplex(4, 2).is_err());
    }

    #[test]
    fn barycentric_coordinates_sum_to_one() {
        let r = QuadratureRule::simplex(3, 6).unwrap();
        for q in 0..r.len() {
            let b = r.barycentric(q);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(b.iter().all(|&x| x >= 0.0));
        }
    }

    fn gram(mesh: &Mesh, basis: &LocalBasis) -> DMatrix<f64> {
        let rule = QuadratureRule::simplex(mesh.dim(), 2 * basis.degree() + 2).unwrap();
        let l = basis.len();
        let mut g = DMatrix::zeros(l, l);
        for (x, w) in rule.on_element(mesh, basis.element()) {
            let v = basis.values(&x);
            for i in 0..l {
                for j in 0..l {
                    g[(i, j)] += w * v[i] * v[j];
                }
            }
        }
        g
    }

    #[test]
    fn constant_basis_is_inverse_sqrt_volume() {
        let mesh = Mesh::unit_square(3).unwrap();
        let rule = QuadratureRule::simplex(2, 0).unwrap();
        let b = LocalBasis::orthonormalize(&mesh, 4, 0, &rule).unwrap();
        let v = b.values(mesh.barycenter(4));
        assert!((v[0].abs() - 1.0 / mesh.volume(4).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn reference_triangle_linear_basis_orthonormal() {
        let coords = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let mesh = Mesh::new(2, coords, vec![0, 1, 2]).unwrap();
        let rule = QuadratureRule::simplex(2, 2).unwrap();
        let b = LocalBasis::orthonormalize(&mesh, 0, 1, &rule).unwrap();
        assert_eq!(b.len(), 3);
        assert!((gram(&mesh, &b) - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn orthonormal_on_every_element_up_to_degree_four() {
        for mesh in [Mesh::unit_square(4).unwrap(), Mesh::unit_cube(2).unwrap()] {
            for m in 0..=4 {
                let rule = QuadratureRule::simplex(mesh.dim(), 2 * m).unwrap();
                for k in (0..mesh.n_elements()).step_by(7) {
                    let b = LocalBasis::orthonormalize(&mesh, k, m, &rule).unwrap();
                    assert_eq!(b.len(), poly_dim(mesh.dim(), m));
                    let g = gram(&mesh, &b);
                    assert!((g - DMatrix::identity(b.len(), b.len())).amax() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn translation_leaves_coefficients_unchanged() {
        let c1 = vec![[0.0, 0.0, 0.0], [0.3, 0.1, 0.0], [0.05, 0.4, 0.0]];
        let c2: Vec<Point> = c1.iter().map(|p| [p[0] + 7.5, p[1] - 3.25, 0.0]).collect();
        let m1 = Mesh::new(2, c1, vec![0, 1, 2]).unwrap();
        let m2 = Mesh::new(2, c2, vec![0, 1, 2]).unwrap();
        let rule = QuadratureRule::simplex(2, 6).unwrap();
        let b1 = LocalBasis::orthonormalize(&m1, 0, 3, &rule).unwrap();
        let b2 = LocalBasis::orthonormalize(&m2, 0, 3, &rule).unwrap();
        assert!((b1.coefficients() - b2.coefficients()).amax() < 1e-8 * b1.coefficients().amax());
    }

    #[test]
    fn low_order_derivatives_vanish() {
        let mesh = Mesh::unit_square(2).unwrap();
        let rule = QuadratureRule::simplex(2, 2).unwrap();
        let b = LocalBasis::orthonormalize(&mesh, 0, 1, &rule).unwrap();
        let x = *mesh.barycenter(0);
        let g = b.gradients(&x);
        assert!(g.iter().all(|ga| ga[0].abs() < 1e-12));
        for row in b.hessians(&x) {
            for h in row {
                assert!(h.iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn laplacian_is_hessian_trace() {
        let mesh = Mesh::unit_cube(2).unwrap();
        let rule = QuadratureRule::simplex(3, 8).unwrap();
        let b = LocalBasis::orthonormalize(&mesh, 3, 4, &rule).unwrap();
        let x = [0.31, 0.27, 0.12];
        let h = b.hessians(&x);
        let lap = b.laplacians(&x);
        for i in 0..b.len() {
            let tr = h[0][0][i] + h[1][1][i] + h[2][2][i];
            assert_eq!(tr, lap[i]);
        }
    }

    #[test]
    fn third_derivatives_match_finite_differences() {
        let mesh = Mesh::unit_square(2).unwrap();
        let rule = QuadratureRule::simplex(2, 8).unwrap();
        let b = LocalBasis::orthonormalize(&mesh, 2, 4, &rule).unwrap();
        let x = *mesh.barycenter(2);
        let step = 1e-4;
        for a in 0..2 {
            // central difference of the second derivative ∂_a∂_a in direction a,
            // and of the mixed second derivative in direction 1 - a
            let mut xp = x;
            let mut xm = x;
            xp[a] += step;
            xm[a] -= step;
            let aa = add(unit(a), unit(a));
            let fd: Vec<f64> = b
                .eval(&xp, aa)
                .iter()
                .zip(b.eval(&xm, aa))
                .map(|(p, m)| (p - m) / (2.0 * step))
                .collect();
            let exact = b.eval(&x, add(aa, unit(a)));
            let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (e, f) in exact.iter().zip(&fd) {
                assert!((e - f).abs() <= 1e-6 * scale, "{e} vs {f}");
            }
            let ab = add(unit(a), unit(1 - a));
            let mut yp = x;
            let mut ym = x;
            yp[1 - a] += step;
            ym[1 - a] -= step;
            let fd: Vec<f64> = b
                .eval(&yp, ab)
                .iter()
                .zip(b.eval(&ym, ab))
                .map(|(p, m)| (p - m) / (2.0 * step))
                .collect();
            let exact = b.eval(&x, add(ab, unit(1 - a)));
            let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (e, f) in exact.iter().zip(&fd) {
                assert!((e - f).abs() <= 1e-6 * scale, "{e} vs {f}");
            }
        }
    }

    #[test]
    fn span_contains_every_scaled_monomial() {
        let mesh = Mesh::unit_square(3).unwrap();
        let m = 3;
        let rule = QuadratureRule::simplex(2, 2 * m + 2).unwrap();
        let b = LocalBasis::orthonormalize(&mesh, 5, m, &rule).unwrap();
        let nodes = rule.on_element(&mesh, 5);
        let c = *mesh.barycenter(5);
        let h = mesh.diameter(5);
        for alpha in monomial_exponents(2, m) {
            let f = |x: &Point| ((x[0] - c[0]) / h).powi(alpha[0] as i32) * ((x[1] - c[1]) / h).powi(alpha[1] as i32);
            // L² projection onto the orthonormal basis, then residual
            let mut coef = vec![0.0; b.len()];
            for (x, w) in &nodes {
                for (ci, vi) in coef.iter_mut().zip(b.values(x)) {
                    *ci += w * f(x) * vi;
                }
            }
            let mut res = 0.0;
            let mut norm = 0.0;
            for (x, w) in &nodes {
                let p: f64 = coef.iter().zip(b.values(x)).map(|(a, v)| a * v).sum();
                res += w * (p - f(x)).powi(2);
                norm += w * f(x).powi(2);
            }
            assert!(res.sqrt() <= 1e-10 * norm.sqrt().max(1e-300), "{alpha:?}");
        }
    }
}
