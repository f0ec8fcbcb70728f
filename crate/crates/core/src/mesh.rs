//! Simplicial meshes of the unit square and cube, face topology and uniform
//! red refinement.
//!
//! Conventions:
//! - vertices are stored as `[f64; 3]`; in 2D the third coordinate is zero
//!   and ignored;
//! - each interior face has an owner `K+` (the smaller element index) and a
//!   neighbor `K-`; the unit normal points from `K+` into `K-`, and on
//!   boundary faces it points out of the domain;
//! - a node is a boundary node iff it belongs to some boundary face.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub type Point = [f64; 3];

/// A `(d-1)`-dimensional face shared by one or two elements.
#[derive(Clone, Debug)]
pub struct Face {
    /// Sorted vertex indices.
    pub vertices: Vec<usize>,
    /// Diameter `h_e`.
    pub diameter: f64,
    /// Length (2D) or area (3D).
    pub measure: f64,
    /// Unit normal from `owner` towards `neighbor` (outward on the boundary).
    pub normal: Point,
    pub owner: usize,
    pub neighbor: Option<usize>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.neighbor.is_none()
    }
}

/// Conforming simplicial mesh with precomputed geometry and topology.
#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    coords: Vec<Point>,
    cells: Vec<usize>,
    faces: Vec<Face>,
    element_faces: Vec<usize>,
    diameters: Vec<f64>,
    inradii: Vec<f64>,
    volumes: Vec<f64>,
    barycenters: Vec<Point>,
    node_elements: Vec<Vec<usize>>,
    boundary_node: Vec<bool>,
    interior_nodes: Vec<usize>,
    interior_index: Vec<Option<usize>>,
}

fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot3(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    let d = sub(a, b);
    dot3(&d, &d).sqrt()
}

fn diameter_of(points: &[Point]) -> f64 {
    let mut h: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            h = h.max(dist(&points[i], &points[j]));
        }
    }
    h
}

/// Local vertex lists of the faces of a simplex with `dim + 1` vertices;
/// face `i` is opposite local vertex `i`.
fn local_faces(dim: usize) -> Vec<Vec<usize>> {
    (0..=dim)
        .map(|skip| (0..=dim).filter(|&v| v != skip).collect())
        .collect()
}

impl Mesh {
    /// Builds a mesh from coordinates and a flat list of `dim + 1` vertex
    /// indices per element.
    pub fn new(dim: usize, coords: Vec<Point>, cells: Vec<usize>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}")));
        }
        let nv = dim + 1;
        if cells.is_empty() || !cells.len().is_multiple_of(nv) {
            return Err(Error::InconsistentMesh(format!(
                "element list length {} is not a positive multiple of {nv}",
                cells.len()
            )));
        }
        if let Some(&bad) = cells.iter().find(|&&v| v >= coords.len()) {
            return Err(Error::InconsistentMesh(format!("vertex index {bad} out of range")));
        }
        let ne = cells.len() / nv;

        let mut volumes = Vec::with_capacity(ne);
        let mut diameters = Vec::with_capacity(ne);
        let mut barycenters = Vec::with_capacity(ne);
        for k in 0..ne {
            let pts: Vec<Point> = cells[k * nv..(k + 1) * nv].iter().map(|&v| coords[v]).collect();
            let vol = simplex_volume(dim, &pts);
            if vol.is_nan() || vol <= 0.0 {
                return Err(Error::DegenerateElement {
                    element: k,
                    reason: "zero volume".into(),
                });
            }
            volumes.push(vol);
            diameters.push(diameter_of(&pts));
            let mut c = [0.0; 3];
            for p in &pts {
                for a in 0..3 {
                    c[a] += p[a] / nv as f64;
                }
            }
            barycenters.push(c);
        }

        // face deduplication
        let lf = local_faces(dim);
        let mut lookup: HashMap<[usize; 3], usize> = HashMap::new();
        let mut faces: Vec<Face> = Vec::new();
        let mut element_faces = vec![usize::MAX; ne * nv];
        for k in 0..ne {
            let cell = &cells[k * nv..(k + 1) * nv];
            for (li, loc) in lf.iter().enumerate() {
                let mut verts: Vec<usize> = loc.iter().map(|&l| cell[l]).collect();
                verts.sort_unstable();
                let mut key = [usize::MAX; 3];
                key[..verts.len()].copy_from_slice(&verts);
                match lookup.get(&key) {
                    Some(&f) => {
                        let face = &mut faces[f];
                        if face.neighbor.is_some() {
                            return Err(Error::InconsistentMesh(format!(
                                "face {verts:?} is shared by more than two elements"
                            )));
                        }
                        face.neighbor = Some(k);
                        element_faces[k * nv + li] = f;
                    }
                    None => {
                        let pts: Vec<Point> = verts.iter().map(|&v| coords[v]).collect();
                        let (normal, measure) = face_normal(dim, &pts);
                        lookup.insert(key, faces.len());
                        element_faces[k * nv + li] = faces.len();
                        faces.push(Face {
                            vertices: verts,
                            diameter: diameter_of(&pts),
                            measure,
                            normal,
                            owner: k,
                            neighbor: None,
                        });
                    }
                }
            }
        }
        // orient normals away from the owner
        for face in &mut faces {
            let p0 = coords[face.vertices[0]];
            let d = sub(&p0, &barycenters[face.owner]);
            if dot3(&d, &face.normal) < 0.0 {
                for a in 0..3 {
                    face.normal[a] = -face.normal[a];
                }
            }
        }

        let mut inradii = vec![0.0; ne];
        for k in 0..ne {
            let surf: f64 = element_faces[k * nv..(k + 1) * nv]
                .iter()
                .map(|&f| faces[f].measure)
                .sum();
            inradii[k] = dim as f64 * volumes[k] / surf;
        }

        let mut node_elements = vec![Vec::new(); coords.len()];
        for k in 0..ne {
            for &v in &cells[k * nv..(k + 1) * nv] {
                node_elements[v].push(k);
            }
        }
        if let Some(orphan) = node_elements.iter().position(|l| l.is_empty()) {
            return Err(Error::InconsistentMesh(format!(
                "vertex {orphan} belongs to no element"
            )));
        }
        let mut boundary_node = vec![false; coords.len()];
        for face in faces.iter().filter(|f| f.is_boundary()) {
            for &v in &face.vertices {
                boundary_node[v] = true;
            }
        }
        let mut interior_nodes = Vec::new();
        let mut interior_index = vec![None; coords.len()];
        for (v, &b) in boundary_node.iter().enumerate() {
            if !b {
                interior_index[v] = Some(interior_nodes.len());
                interior_nodes.push(v);
            }
        }

        Ok(Self {
            dim,
            coords,
            cells,
            faces,
            element_faces,
            diameters,
            inradii,
            volumes,
            barycenters,
            node_elements,
            boundary_node,
            interior_nodes,
            interior_index,
        })
    }

    /// Unit square split into `n × n` cells, each cut along the diagonal
    /// from `(x_i, y_j)` to `(x_{i+1}, y_{j+1})`.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("cells per side must be at least 1".into()));
        }
        let idx = |i: usize, j: usize| i + j * (n + 1);
        let h = 1.0 / n as f64;
        let mut coords = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                coords.push([i as f64 * h, j as f64 * h, 0.0]);
            }
        }
        let mut cells = Vec::with_capacity(6 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                cells.extend_from_slice(&[v00, v10, v11]);
                cells.extend_from_slice(&[v00, v11, v01]);
            }
        }
        Self::new(2, coords, cells)
    }

    /// Unit cube split into `n³` cubes, each cut into six Kuhn tetrahedra
    /// around the main diagonal.
    pub fn unit_cube(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("cells per side must be at least 1".into()));
        }
        let m = n + 1;
        let idx = |i: usize, j: usize, k: usize| i + j * m + k * m * m;
        let h = 1.0 / n as f64;
        let mut coords = Vec::with_capacity(m * m * m);
        for k in 0..m {
            for j in 0..m {
                for i in 0..m {
                    coords.push([i as f64 * h, j as f64 * h, k as f64 * h]);
                }
            }
        }
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut cells = Vec::with_capacity(24 * n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    for perm in PERMS {
                        let mut c = [i, j, k];
                        cells.push(idx(c[0], c[1], c[2]));
                        for axis in perm {
                            c[axis] += 1;
                            cells.push(idx(c[0], c[1], c[2]));
                        }
                    }
                }
            }
        }
        Self::new(3, coords, cells)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn point(&self, v: usize) -> &Point {
        &self.coords[v]
    }

    /// Vertex indices `N_K` of element `k`.
    pub fn element(&self, k: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.cells[k * nv..(k + 1) * nv]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Face indices of element `k`; entry `i` is opposite local vertex `i`.
    pub fn element_faces(&self, k: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.element_faces[k * nv..(k + 1) * nv]
    }

    pub fn diameter(&self, k: usize) -> f64 {
        self.diameters[k]
    }

    pub fn inradius(&self, k: usize) -> f64 {
        self.inradii[k]
    }

    pub fn volume(&self, k: usize) -> f64 {
        self.volumes[k]
    }

    pub fn barycenter(&self, k: usize) -> &Point {
        &self.barycenters[k]
    }

    /// Mesh size `h = max_K h_K`.
    pub fn mesh_size(&self) -> f64 {
        self.diameters.iter().cloned().fold(0.0, f64::max)
    }

    /// `max_K h_K / min_K ρ_K`.
    pub fn quasi_uniformity(&self) -> f64 {
        let rho_min = self.inradii.iter().cloned().fold(f64::INFINITY, f64::min);
        self.mesh_size() / rho_min
    }

    pub fn node_elements(&self, v: usize) -> &[usize] {
        &self.node_elements[v]
    }

    /// Elements sharing at least one vertex with `k` (including `k`), sorted.
    pub fn vertex_neighbors(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .element(k)
            .iter()
            .flat_map(|&v| self.node_elements[v].iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn is_boundary_node(&self, v: usize) -> bool {
        self.boundary_node[v]
    }

    /// Interior nodes `N_h^i` in increasing index order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&v| self.boundary_node[v]).collect()
    }

    /// Position of node `v` in [`Mesh::interior_nodes`].
    pub fn interior_index(&self, v: usize) -> Option<usize> {
        self.interior_index[v]
    }

    pub fn n_interior_nodes(&self) -> usize {
        self.interior_nodes.len()
    }

    /// Uniform red refinement. Returns the fine mesh and the prolongation
    /// (`n_fine_nodes × n_coarse_nodes`) of continuous piecewise linears.
    /// Coarse nodes keep their indices; edge midpoints are appended.
    pub fn refine(&self) -> Result<(Mesh, CsrMatrix)> {
        let nv = self.dim + 1;
        let mut coords = self.coords.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut trip: Vec<(usize, usize, f64)> = (0..self.n_nodes()).map(|v| (v, v, 1.0)).collect();
        let mut mid = |a: usize, b: usize, coords: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let (pa, pb) = (coords[a], coords[b]);
                coords.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]), 0.5 * (pa[2] + pb[2])]);
                let id = coords.len() - 1;
                trip.push((id, a, 0.5));
                trip.push((id, b, 0.5));
                id
            })
        };
        let mut cells = Vec::with_capacity(self.cells.len() * if self.dim == 2 { 4 } else { 8 });
        for k in 0..self.n_elements() {
            let c = &self.cells[k * nv..(k + 1) * nv];
            if self.dim == 2 {
                let (x0, x1, x2) = (c[0], c[1], c[2]);
                let m01 = mid(x0, x1, &mut coords);
                let m12 = mid(x1, x2, &mut coords);
                let m02 = mid(x0, x2, &mut coords);
                cells.extend_from_slice(&[x0, m01, m02]);
                cells.extend_from_slice(&[m01, x1, m12]);
                cells.extend_from_slice(&[m02, m12, x2]);
                cells.extend_from_slice(&[m01, m12, m02]);
            } else {
                // Bey's red refinement; preserves Kuhn tetrahedra.
                let (x0, x1, x2, x3) = (c[0], c[1], c[2], c[3]);
                let x01 = mid(x0, x1, &mut coords);
                let x02 = mid(x0, x2, &mut coords);
                let x03 = mid(x0, x3, &mut coords);
                let x12 = mid(x1, x2, &mut coords);
                let x13 = mid(x1, x3, &mut coords);
                let x23 = mid(x2, x3, &mut coords);
                cells.extend_from_slice(&[x0, x01, x02, x03]);
                cells.extend_from_slice(&[x01, x1, x12, x13]);
                cells.extend_from_slice(&[x02, x12, x2, x23]);
                cells.extend_from_slice(&[x03, x13, x23, x3]);
                cells.extend_from_slice(&[x01, x02, x03, x13]);
                cells.extend_from_slice(&[x01, x02, x12, x13]);
                cells.extend_from_slice(&[x02, x03, x13, x23]);
                cells.extend_from_slice(&[x02, x12, x13, x23]);
            }
        }
        let n_fine = coords.len();
        let fine = Mesh::new(self.dim, coords, cells)?;
        let p = CsrMatrix::from_triplets(n_fine, self.n_nodes(), &trip);
        Ok((fine, p))
    }

    /// Constant gradients of the barycentric coordinates of element `k`,
    /// in local vertex order.
    pub fn barycentric_gradients(&self, k: usize) -> Vec<Point> {
        let d = self.dim;
        let v = self.element(k);
        let x0 = self.coords[v[0]];
        let jac = nalgebra::DMatrix::from_fn(d, d, |a, i| self.coords[v[i + 1]][a] - x0[a]);
        // element validity is checked at construction
        let inv = jac.try_inverse().expect("degenerate element");
        let mut out = vec![[0.0; 3]; d + 1];
        for i in 0..d {
            for a in 0..d {
                out[i + 1][a] = inv[(i, a)];
                out[0][a] -= inv[(i, a)];
            }
        }
        out
    }

    /// Nodal values of `f` at all vertices.
    pub fn sample<F: Fn(&Point) -> f64>(&self, f: F) -> Vec<f64> {
        self.coords.iter().map(f).collect()
    }
}

fn simplex_volume(dim: usize, pts: &[Point]) -> f64 {
    if dim == 2 {
        let a = sub(&pts[1], &pts[0]);
        let b = sub(&pts[2], &pts[0]);
        0.5 * (a[0] * b[1] - a[1] * b[0]).abs()
    } else {
        let a = sub(&pts[1], &pts[0]);
        let b = sub(&pts[2], &pts[0]);
        let c = sub(&pts[3], &pts[0]);
        dot3(&a, &cross(&b, &c)).abs() / 6.0
    }
}

/// Unnormalized orientation does not matter here; the caller flips it.
fn face_normal(dim: usize, pts: &[Point]) -> (Point, f64) {
    if dim == 2 {
        let t = sub(&pts[1], &pts[0]);
        let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
        ([t[1] / len, -t[0] / len, 0.0], len)
    } else {
        let n = cross(&sub(&pts[1], &pts[0]), &sub(&pts[2], &pts[0]));
        let len = dot3(&n, &n).sqrt();
        ([n[0] / len, n[1] / len, n[2] / len], 0.5 * len)
    }
}

/// Nested sequence `T_1 ⊂ … ⊂ T_J` obtained by repeated red refinement,
/// with the prolongations between consecutive levels.
#[derive(Clone, Debug)]
pub struct MeshHierarchy {
    meshes: Vec<Mesh>,
    /// `prolongations[j]` maps all nodes of level `j` to all nodes of level `j + 1`.
    prolongations: Vec<CsrMatrix>,
}

impl MeshHierarchy {
    pub fn new(coarse: Mesh, refinements: usize) -> Result<Self> {
        let mut meshes = vec![coarse];
        let mut prolongations = Vec::new();
        for _ in 0..refinements {
            let (fine, p) = meshes.last().unwrap().refine()?;
            meshes.push(fine);
            prolongations.push(p);
        }
        Ok(Self { meshes, prolongations })
    }

    /// Structured hierarchy ending at `n_fine` cells per side, starting from
    /// the coarsest `n_fine / 2^k` whose interior node count is ≤ `max_coarse_dofs`.
    pub fn structured(dim: usize, n_fine: usize, max_coarse_dofs: usize) -> Result<Self> {
        let interior = |n: usize| (n.saturating_sub(1)).pow(dim as u32);
        let mut n_coarse = n_fine;
        while n_coarse.is_multiple_of(2) && interior(n_coarse) > max_coarse_dofs && n_coarse > 2 {
            n_coarse /= 2;
        }
        let refinements = (n_fine / n_coarse).trailing_zeros() as usize;
        let coarse = match dim {
            2 => Mesh::unit_square(n_coarse)?,
            3 => Mesh::unit_cube(n_coarse)?,
            _ => return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}"))),
        };
        Self::new(coarse, refinements)
    }

    pub fn levels(&self) -> usize {
        self.meshes.len()
    }

    /// Level `j` in `0..levels()`; the last one is the finest.
    pub fn mesh(&self, j: usize) -> &Mesh {
        &self.meshes[j]
    }

    pub fn finest(&self) -> &Mesh {
        self.meshes.last().unwrap()
    }

    /// Full-node prolongation from level `j` to `j + 1`.
    pub fn prolongation(&self, j: usize) -> &CsrMatrix {
        &self.prolongations[j]
    }

    /// Prolongation restricted to interior nodes of both levels.
    pub fn interior_prolongation(&self, j: usize) -> CsrMatrix {
        let coarse = &self.meshes[j];
        let fine = &self.meshes[j + 1];
        self.prolongations[j].select(fine.interior_nodes(), coarse.interior_nodes())
    }
}
