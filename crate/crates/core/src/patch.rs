//! Element patches `S(K)` and collocation node sets `I(K)`.
//!
//! A patch grows by whole vertex-neighbor rings until the next ring would
//! supply enough nodes; elements of that last ring are then added one at a
//! time, nearest barycenter first, until `#I(K) ≥ N_m`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{dist, Mesh};
use crate::polyspace::poly_dim;

#[derive(Clone, Debug, Serialize)]
pub struct ElementPatch {
    pub element: usize,
    /// `S(K)`, starting with `K`, in insertion order.
    pub elements: Vec<usize>,
    /// `I(K)`; the first `d + 1` entries are the vertices of `K` in local order.
    pub nodes: Vec<usize>,
    /// Number of neighbor rings touched (`0` when `N_K` already suffices).
    pub depth: usize,
    /// Diameter of the patch domain `D(K)`.
    pub diameter: f64,
}

impl ElementPatch {
    pub fn contains_node(&self, v: usize) -> bool {
        self.nodes.contains(&v)
    }
}

/// Default threshold `N_m = ⌈1.5 · dim P_m⌉`.
pub fn default_threshold(dim: usize, m: usize) -> usize {
    (3 * poly_dim(dim, m)).div_ceil(2)
}

fn push_nodes(mesh: &Mesh, k: usize, nodes: &mut Vec<usize>, seen: &mut Vec<usize>) {
    for &v in mesh.element(k) {
        if let Err(pos) = seen.binary_search(&v) {
            seen.insert(pos, v);
            nodes.push(v);
        }
    }
}

pub fn build_patch(mesh: &Mesh, k: usize, threshold: usize) -> Result<ElementPatch> {
    let d = mesh.dim();
    if threshold < d + 1 {
        return Err(Error::InvalidArgument(format!(
            "patch threshold {threshold} is below d + 1 = {}",
            d + 1
        )));
    }
    let mut elements = vec![k];
    let mut in_patch = vec![k];
    let mut nodes = Vec::new();
    let mut seen = Vec::new();
    push_nodes(mesh, k, &mut nodes, &mut seen);
    let mut depth = 0;

    while nodes.len() < threshold {
        // next ring: S_{t+1} \ S_t
        let mut ring: Vec<usize> = elements
            .iter()
            .flat_map(|&e| mesh.vertex_neighbors(e))
            .filter(|e| in_patch.binary_search(e).is_err())
            .collect();
        ring.sort_unstable();
        ring.dedup();
        if ring.is_empty() {
            return Err(Error::PatchExhausted {
                element: k,
                nodes: nodes.len(),
                required: threshold,
            });
        }
        depth += 1;

        let mut ring_nodes = seen.clone();
        for &e in &ring {
            for &v in mesh.element(e) {
                if let Err(pos) = ring_nodes.binary_search(&v) {
                    ring_nodes.insert(pos, v);
                }
            }
        }
        if ring_nodes.len() >= threshold {
            let bk = mesh.barycenter(k);
            let mut order: Vec<(f64, usize)> = ring.iter().map(|&e| (dist(bk, mesh.barycenter(e)), e)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (_, e) in order {
                elements.push(e);
                push_nodes(mesh, e, &mut nodes, &mut seen);
                if nodes.len() >= threshold {
                    break;
                }
            }
        } else {
            for &e in &ring {
                elements.push(e);
                push_nodes(mesh, e, &mut nodes, &mut seen);
            }
        }
        for &e in &ring {
            if let Err(pos) = in_patch.binary_search(&e) {
                in_patch.insert(pos, e);
            }
        }
    }

    let mut diameter: f64 = 0.0;
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            diameter = diameter.max(dist(mesh.point(a), mesh.point(b)));
        }
    }
    Ok(ElementPatch {
        element: k,
        elements,
        nodes,
        depth,
        diameter,
    })
}

/// Patches for every element, in element order.
pub fn build_all_patches(mesh: &Mesh, threshold: usize) -> Result<Vec<ElementPatch>> {
    (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| build_patch(mesh, k, threshold))
        .collect()
}
