//! Structured uniform triangulations of the unit square centered at the
//! origin, with the boundary topology and arc-length parametrization the
//! boundary-data pipeline works with.
//!
//! Nodes live on an (n+1) x (n+1) grid over [-0.5, 0.5]^2; each grid cell is
//! split along the lower-left to upper-right diagonal, giving 2 n^2 congruent
//! right triangles. The boundary is parametrized counter-clockwise by arc
//! length starting from (0.5, 0), the point where the boundary crosses the
//! positive first coordinate axis; the circumference is 4.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh needs at least 2 cells per side, got {0}")]
    TooCoarse(usize),
    #[error("subdomain radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("subdomain contains no whole triangle (center ({0}, {1}), radius {2})")]
    EmptySubdomain(f64, f64, f64),
}

/// Disc-shaped observation subdomain.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiscSpec {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Interior edge shared by two triangles.
#[derive(Debug, Clone, Copy)]
pub struct InteriorFace {
    pub nodes: [usize; 2],
    pub left_tri: usize,
    pub right_tri: usize,
}

/// Boundary edge of a single triangle, with its outward unit normal.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tri: usize,
    pub normal: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub n_cells_per_side: usize,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Boundary node ids ordered counter-clockwise from the arc-length origin.
    pub boundary_nodes: Vec<usize>,
    /// Arc length along the boundary for each entry of `boundary_nodes`.
    pub boundary_arclength: Vec<f64>,
    pub interior_faces: Vec<InteriorFace>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Mesh parameter: the cell side length 1/n.
    pub h: f64,
    boundary_index_of_node: Vec<Option<usize>>,
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn boundary_node_count(&self) -> usize {
        self.boundary_nodes.len()
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        self.boundary_index_of_node[node].is_some()
    }

    /// Position of `node` in `boundary_nodes`, if it is a boundary node.
    pub fn boundary_index(&self, node: usize) -> Option<usize> {
        self.boundary_index_of_node[node]
    }

    /// Interior node ids in ascending order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| !self.is_boundary_node(i)).collect()
    }

    pub fn interior_node_count(&self) -> usize {
        self.node_count() - self.boundary_node_count()
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.triangles[tri];
        let pa = self.nodes[a];
        let pb = self.nodes[b];
        let pc = self.nodes[c];
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Constant gradients of the three P1 basis functions on a triangle,
    /// together with its area.
    pub fn p1_gradients(&self, tri: usize) -> ([[f64; 2]; 3], f64) {
        let [a, b, c] = self.triangles[tri];
        let pa = self.nodes[a];
        let pb = self.nodes[b];
        let pc = self.nodes[c];
        let area = self.triangle_area(tri);
        let scale = 1.0 / (2.0 * area);
        let grads = [
            [(pb[1] - pc[1]) * scale, (pc[0] - pb[0]) * scale],
            [(pc[1] - pa[1]) * scale, (pa[0] - pc[0]) * scale],
            [(pa[1] - pb[1]) * scale, (pb[0] - pa[0]) * scale],
        ];
        (grads, area)
    }
}

/// Arc length (counter-clockwise from (0.5, 0)) of a boundary point.
fn square_arclength(x: f64, y: f64) -> f64 {
    let eps = 1e-12;
    if (x - 0.5).abs() < eps && y >= 0.0 {
        y
    } else if (y - 0.5).abs() < eps {
        0.5 + (0.5 - x)
    } else if (x + 0.5).abs() < eps {
        1.5 + (0.5 - y)
    } else if (y + 0.5).abs() < eps {
        2.5 + (x + 0.5)
    } else {
        // x = 0.5, y < 0: last stretch back up to the start.
        3.5 + (y + 0.5)
    }
}

pub fn build_unit_square_mesh(n: usize) -> Result<Mesh, MeshError> {
    if n < 2 {
        return Err(MeshError::TooCoarse(n));
    }
    let h = 1.0 / n as f64;
    let np = n + 1;
    let mut nodes = Vec::with_capacity(np * np);
    for i in 0..np {
        for j in 0..np {
            nodes.push([-0.5 + j as f64 * h, -0.5 + i as f64 * h]);
        }
    }
    let node_id = |i: usize, j: usize| i * np + j;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            let ll = node_id(i, j);
            let lr = node_id(i, j + 1);
            let ul = node_id(i + 1, j);
            let ur = node_id(i + 1, j + 1);
            // Fixed lower-left to upper-right split, both triangles counter-clockwise.
            triangles.push([ll, lr, ur]);
            triangles.push([ll, ur, ul]);
        }
    }

    // Edge -> adjacent triangles.
    let mut edge_map: std::collections::HashMap<(usize, usize), Vec<usize>> =
        std::collections::HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            let a = tri[k];
            let b = tri[(k + 1) % 3];
            let key = (a.min(b), a.max(b));
            edge_map.entry(key).or_default().push(t);
        }
    }
    let mut interior_faces = Vec::new();
    let mut boundary_edges = Vec::new();
    let mut edges: Vec<_> = edge_map.into_iter().collect();
    edges.sort_unstable_by_key(|&(k, _)| k);
    for ((a, b), tris) in edges {
        match tris.len() {
            2 => interior_faces.push(InteriorFace {
                nodes: [a, b],
                left_tri: tris[0].min(tris[1]),
                right_tri: tris[0].max(tris[1]),
            }),
            1 => {
                let t = tris[0];
                let third = triangles[t].iter().copied().find(|&v| v != a && v != b).unwrap();
                let pa = nodes[a];
                let pb = nodes[b];
                let pt = nodes[third];
                let tangent = [pb[0] - pa[0], pb[1] - pa[1]];
                let len = (tangent[0] * tangent[0] + tangent[1] * tangent[1]).sqrt();
                let mut normal = [tangent[1] / len, -tangent[0] / len];
                // Orient away from the opposite vertex.
                let to_third = [pt[0] - pa[0], pt[1] - pa[1]];
                if normal[0] * to_third[0] + normal[1] * to_third[1] > 0.0 {
                    normal = [-normal[0], -normal[1]];
                }
                boundary_edges.push(BoundaryEdge { nodes: [a, b], tri: t, normal });
            }
            _ => unreachable!("edge shared by more than two triangles"),
        }
    }

    let mut boundary: Vec<(f64, usize)> = Vec::new();
    for (id, &[x, y]) in nodes.iter().enumerate() {
        let on_boundary = x.abs() >= 0.5 - 1e-12 || y.abs() >= 0.5 - 1e-12;
        if on_boundary {
            boundary.push((square_arclength(x, y), id));
        }
    }
    boundary.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let boundary_arclength: Vec<f64> = boundary.iter().map(|&(s, _)| s).collect();
    let boundary_nodes: Vec<usize> = boundary.iter().map(|&(_, id)| id).collect();
    let mut boundary_index_of_node = vec![None; nodes.len()];
    for (pos, &id) in boundary_nodes.iter().enumerate() {
        boundary_index_of_node[id] = Some(pos);
    }

    Ok(Mesh {
        n_cells_per_side: n,
        nodes,
        triangles,
        boundary_nodes,
        boundary_arclength,
        interior_faces,
        boundary_edges,
        h,
        boundary_index_of_node,
    })
}

/// Triangles whose three vertices all lie inside the disc (closed: distance
/// up to and including the radius counts as inside).
pub fn subdomain_elements(mesh: &Mesh, omega: &DiscSpec) -> Result<Vec<usize>, MeshError> {
    if omega.radius <= 0.0 {
        return Err(MeshError::BadRadius(omega.radius));
    }
    let r2 = omega.radius * omega.radius;
    let inside = |p: [f64; 2]| {
        let dx = p[0] - omega.center[0];
        let dy = p[1] - omega.center[1];
        dx * dx + dy * dy <= r2
    };
    let selected: Vec<usize> = (0..mesh.triangle_count())
        .filter(|&t| mesh.triangles[t].iter().all(|&v| inside(mesh.nodes[v])))
        .collect();
    if selected.is_empty() {
        return Err(MeshError::EmptySubdomain(
            omega.center[0],
            omega.center[1],
            omega.radius,
        ));
    }
    Ok(selected)
}
