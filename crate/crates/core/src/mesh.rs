//! Interval and structured triangular meshes, plus observation-subdomain masks.
//!
//! Node numbering is left-to-right in 1D and row-major (`j * (nx + 1) + i`)
//! on rectangles. Each rectangular cell is split along its lower-left to
//! upper-right diagonal.

use crate::error::{invalid, Result};

/// Relative slack used when testing whether a node lies on a box boundary.
const CLOSURE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    /// Coordinates; the second entry is 0 for 1D meshes.
    nodes: Vec<[f64; 2]>,
    /// Flat connectivity with `dim + 1` indices per element.
    connectivity: Vec<usize>,
    boundary: Vec<bool>,
    lower: [f64; 2],
    upper: [f64; 2],
    cells: [usize; 2],
}

impl Mesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.connectivity.len() / (self.dim + 1)
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.connectivity[e * k..(e + 1) * k]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.connectivity.chunks(self.dim + 1)
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.boundary[i]).collect()
    }

    pub fn lower(&self) -> [f64; 2] {
        self.lower
    }

    pub fn upper(&self) -> [f64; 2] {
        self.upper
    }

    /// Number of cells per axis (`ny` is 0 in 1D).
    pub fn subdivisions(&self) -> [usize; 2] {
        self.cells
    }

    /// Uniform spacing along x.
    pub fn hx(&self) -> f64 {
        (self.upper[0] - self.lower[0]) / self.cells[0] as f64
    }

    pub fn domain_measure(&self) -> f64 {
        match self.dim {
            1 => self.upper[0] - self.lower[0],
            _ => (self.upper[0] - self.lower[0]) * (self.upper[1] - self.lower[1]),
        }
    }

    /// Length (1D) or area (2D) of element `e`.
    pub fn element_measure(&self, e: usize) -> f64 {
        let v = self.element(e);
        match self.dim {
            1 => (self.nodes[v[1]][0] - self.nodes[v[0]][0]).abs(),
            _ => triangle_area(self.nodes[v[0]], self.nodes[v[1]], self.nodes[v[2]]).abs(),
        }
    }

    fn scale(&self) -> f64 {
        (self.upper[0] - self.lower[0]).max(self.upper[1] - self.lower[1])
    }
}

pub(crate) fn triangle_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub fn build_interval_mesh(a: f64, b: f64, n_elems: usize) -> Result<Mesh> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return invalid(format!("interval requires a < b, got ({a}, {b})"));
    }
    if n_elems == 0 {
        return invalid("interval mesh needs at least one element");
    }
    let h = (b - a) / n_elems as f64;
    let nodes: Vec<[f64; 2]> = (0..=n_elems)
        .map(|i| {
            let x = if i == n_elems { b } else { a + i as f64 * h };
            [x, 0.0]
        })
        .collect();
    let connectivity = (0..n_elems).flat_map(|e| [e, e + 1]).collect();
    let mut boundary = vec![false; n_elems + 1];
    boundary[0] = true;
    boundary[n_elems] = true;
    Ok(Mesh {
        dim: 1,
        nodes,
        connectivity,
        boundary,
        lower: [a, 0.0],
        upper: [b, 0.0],
        cells: [n_elems, 0],
    })
}

/// Structured triangulation of `[0, lx] x [0, ly]` with `nx * ny` cells.
pub fn build_rect_mesh(nx: usize, ny: usize, lengths: (f64, f64)) -> Result<Mesh> {
    let (lx, ly) = lengths;
    if nx == 0 || ny == 0 {
        return invalid("rectangle mesh needs nx, ny >= 1");
    }
    if !(lx > 0.0) || !(ly > 0.0) {
        return invalid(format!("rectangle lengths must be positive, got ({lx}, {ly})"));
    }
    let (hx, hy) = (lx / nx as f64, ly / ny as f64);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut boundary = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = if j == ny { ly } else { j as f64 * hy };
        for i in 0..=nx {
            let x = if i == nx { lx } else { i as f64 * hx };
            nodes.push([x, y]);
            boundary.push(i == 0 || j == 0 || i == nx || j == ny);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut connectivity = Vec::with_capacity(6 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            // counter-clockwise triangles sharing the diagonal a-c
            connectivity.extend_from_slice(&[a, b, c]);
            connectivity.extend_from_slice(&[a, c, d]);
        }
    }
    Ok(Mesh {
        dim: 2,
        nodes,
        connectivity,
        boundary,
        lower: [0.0, 0.0],
        upper: [lx, ly],
        cells: [nx, ny],
    })
}

/// Axis-aligned interval (1D, y-range ignored) or rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl ObsBox {
    pub fn interval(a: f64, b: f64) -> Self {
        ObsBox {
            lo: [a, 0.0],
            hi: [b, 0.0],
        }
    }

    pub fn rect(x: (f64, f64), y: (f64, f64)) -> Self {
        ObsBox {
            lo: [x.0, y.0],
            hi: [x.1, y.1],
        }
    }

    fn contains(&self, p: [f64; 2], dim: usize, tol: f64) -> bool {
        (0..dim).all(|d| p[d] >= self.lo[d] - tol && p[d] <= self.hi[d] + tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainMask {
    pub node_flags: Vec<bool>,
    pub element_flags: Vec<bool>,
    pub boxes: Vec<ObsBox>,
    /// Sum of the measures of flagged elements.
    pub measure: f64,
}

impl SubdomainMask {
    pub fn flagged_nodes(&self) -> Vec<usize> {
        (0..self.node_flags.len())
            .filter(|&i| self.node_flags[i])
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        !self.node_flags.iter().any(|&f| f)
    }

    /// Mask covering the whole domain.
    pub fn full(mesh: &Mesh) -> Self {
        let measure = mesh.domain_measure();
        SubdomainMask {
            node_flags: vec![true; mesh.node_count()],
            element_flags: vec![true; mesh.element_count()],
            boxes: vec![ObsBox {
                lo: mesh.lower(),
                hi: mesh.upper(),
            }],
            measure,
        }
    }
}

/// Flags nodes in the closure of any box and elements whose vertices are all flagged.
pub fn mask_from_boxes(mesh: &Mesh, boxes: &[ObsBox]) -> Result<SubdomainMask> {
    if boxes.is_empty() {
        return invalid("observation mask needs at least one box");
    }
    let tol = CLOSURE_TOL * mesh.scale();
    let (lo, hi) = (mesh.lower(), mesh.upper());
    for b in boxes {
        for d in 0..mesh.dim() {
            if !(b.lo[d] < b.hi[d]) || b.lo[d] < lo[d] - tol || b.hi[d] > hi[d] + tol {
                return invalid(format!("box {:?}..{:?} lies outside the domain", b.lo, b.hi));
            }
        }
    }
    let node_flags: Vec<bool> = mesh
        .nodes()
        .iter()
        .map(|&p| boxes.iter().any(|b| b.contains(p, mesh.dim(), tol)))
        .collect();
    let element_flags: Vec<bool> = mesh
        .elements()
        .map(|el| el.iter().all(|&v| node_flags[v]))
        .collect();
    let measure = (0..mesh.element_count())
        .filter(|&e| element_flags[e])
        .map(|e| mesh.element_measure(e))
        .sum();
    if !node_flags.iter().any(|&f| f) {
        log::warn!("observation boxes flag no mesh node");
    }
    Ok(SubdomainMask {
        node_flags,
        element_flags,
        boxes: boxes.to_vec(),
        measure,
    })
}
