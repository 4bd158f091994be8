//! Nested uniform quadrilateral meshes of the unit square.
//!
//! The coarse mesh has `coarse_divisions` square elements per side and the
//! fine mesh refines each coarse element into `refine_ratio` cells per side.
//! Only interior fine nodes carry degrees of freedom; nodes on the boundary
//! of the unit square are excluded from every index space, which imposes the
//! homogeneous Dirichlet condition at mesh level.
//!
//! Node and element ids are row-major over the tensor grid so that all
//! downstream matrices are reproducible.

use crate::error::{LodError, Result};

/// Nested coarse/fine mesh pair with all index maps.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    /// Coarse elements per side (H = 1/coarse_divisions).
    pub coarse_divisions: usize,
    /// Fine cells per coarse cell side (h = H/refine_ratio).
    pub refine_ratio: usize,
    /// Fine cells per side of the unit square.
    pub fine_divisions: usize,
    /// Number of coarse elements.
    pub m: usize,
    /// Number of interior fine nodes (dim of the fine FE space).
    pub n: usize,
    /// Coarse mesh size.
    pub coarse_h: f64,
    /// Fine mesh size.
    pub fine_h: f64,
    /// Per coarse element, the global ids of its fine nodes not on the
    /// domain boundary, row-major within the element.
    pub element_membership: Vec<Vec<usize>>,
}

impl MeshHierarchy {
    pub fn build(coarse_divisions: usize, refine_ratio: usize) -> Result<Self> {
        if coarse_divisions < 2 {
            return Err(LodError::InvalidMesh(format!(
                "coarse_divisions must be >= 2, got {coarse_divisions}"
            )));
        }
        if refine_ratio < 2 {
            return Err(LodError::InvalidMesh(format!(
                "refine_ratio must be >= 2, got {refine_ratio}"
            )));
        }
        let nf = coarse_divisions * refine_ratio;
        let m = coarse_divisions * coarse_divisions;
        let n = (nf - 1) * (nf - 1);
        let mut hier = MeshHierarchy {
            coarse_divisions,
            refine_ratio,
            fine_divisions: nf,
            m,
            n,
            coarse_h: 1.0 / coarse_divisions as f64,
            fine_h: 1.0 / nf as f64,
            element_membership: Vec::with_capacity(m),
        };
        for e in 0..m {
            let mut members = Vec::new();
            let (x0, x1, y0, y1) = hier.element_node_range(e);
            for gy in y0..=y1 {
                for gx in x0..=x1 {
                    members.push(hier.node_id(gx, gy).expect("clipped range is interior"));
                }
            }
            hier.element_membership.push(members);
        }
        Ok(hier)
    }

    /// Global id of the interior fine node at grid coordinates (gx, gy),
    /// or `None` if the node lies on the domain boundary.
    #[inline]
    pub fn node_id(&self, gx: usize, gy: usize) -> Option<usize> {
        let nf = self.fine_divisions;
        if gx == 0 || gy == 0 || gx >= nf || gy >= nf {
            None
        } else {
            Some((gy - 1) * (nf - 1) + (gx - 1))
        }
    }

    /// Grid coordinates of an interior fine node.
    #[inline]
    pub fn node_coords(&self, id: usize) -> (usize, usize) {
        let w = self.fine_divisions - 1;
        (id % w + 1, id / w + 1)
    }

    /// Physical position of an interior fine node.
    #[inline]
    pub fn node_position(&self, id: usize) -> (f64, f64) {
        let (gx, gy) = self.node_coords(id);
        (gx as f64 * self.fine_h, gy as f64 * self.fine_h)
    }

    /// Coarse grid coordinates of element `e`.
    #[inline]
    pub fn element_grid(&self, e: usize) -> (usize, usize) {
        (e % self.coarse_divisions, e / self.coarse_divisions)
    }

    #[inline]
    pub fn element_id(&self, cx: usize, cy: usize) -> usize {
        cy * self.coarse_divisions + cx
    }

    /// Clipped fine-grid node range [x0..=x1] x [y0..=y1] of the nodes of
    /// V_h(K_e) (element nodes minus those on the domain boundary).
    pub fn element_node_range(&self, e: usize) -> (usize, usize, usize, usize) {
        let (cx, cy) = self.element_grid(e);
        let r = self.refine_ratio;
        let nf = self.fine_divisions;
        let x0 = (cx * r).max(1);
        let x1 = ((cx + 1) * r).min(nf - 1);
        let y0 = (cy * r).max(1);
        let y1 = ((cy + 1) * r).min(nf - 1);
        (x0, x1, y0, y1)
    }

    /// Local index inside `element_membership[e]` of the node at (gx, gy),
    /// or `None` if the node is not a member.
    pub fn local_index(&self, e: usize, gx: usize, gy: usize) -> Option<usize> {
        let (x0, x1, y0, y1) = self.element_node_range(e);
        if gx < x0 || gx > x1 || gy < y0 || gy > y1 {
            return None;
        }
        Some((gy - y0) * (x1 - x0 + 1) + (gx - x0))
    }

    /// Dimension of V_h(K_e).
    pub fn element_dim(&self, e: usize) -> usize {
        self.element_membership[e].len()
    }

    /// Global ids of the fine nodes strictly interior to element `e`.
    pub fn element_interior_nodes(&self, e: usize) -> Vec<usize> {
        let (cx, cy) = self.element_grid(e);
        let r = self.refine_ratio;
        let mut out = Vec::with_capacity((r - 1) * (r - 1));
        for gy in cy * r + 1..(cy + 1) * r {
            for gx in cx * r + 1..(cx + 1) * r {
                out.push(self.node_id(gx, gy).expect("strict interior"));
            }
        }
        out
    }

    /// Coarse elements whose closure contains the fine node (1, 2 or 4 of them).
    pub fn elements_containing(&self, id: usize) -> Vec<usize> {
        let (gx, gy) = self.node_coords(id);
        let r = self.refine_ratio;
        let nh = self.coarse_divisions;
        let xs: Vec<usize> = if gx % r == 0 {
            vec![gx / r - 1, gx / r]
        } else {
            vec![gx / r]
        };
        let ys: Vec<usize> = if gy % r == 0 {
            vec![gy / r - 1, gy / r]
        } else {
            vec![gy / r]
        };
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for &cy in &ys {
            for &cx in &xs {
                debug_assert!(cx < nh && cy < nh);
                out.push(self.element_id(cx, cy));
            }
        }
        out
    }
}

/// Coarse-entity ownership of an interior fine node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    /// Strictly inside the given coarse element.
    ElementInterior(usize),
    /// In the interior of the given interior coarse edge.
    EdgeInterior(usize),
    /// Coincides with the given interior coarse vertex.
    CoarseVertex(usize),
}

/// How many edges of a coarse element lie on the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryClass {
    Interior,
    OneEdgeOnBoundary,
    TwoEdgesOnBoundary,
}

/// An interior coarse edge with its two adjacent elements and the fine
/// nodes interior to it.
#[derive(Debug, Clone)]
pub struct CoarseEdge {
    pub elements: [usize; 2],
    pub interior_nodes: Vec<usize>,
}

/// An interior coarse vertex with its fine node, the four surrounding
/// elements and the four touching interior edges.
#[derive(Debug, Clone)]
pub struct CoarseVertexInfo {
    pub node: usize,
    pub elements: [usize; 4],
    pub edges: [usize; 4],
}

/// Partition of the interior fine nodes by coarse entity.
#[derive(Debug, Clone)]
pub struct NodeClassification {
    pub classes: Vec<NodeClass>,
    pub element_boundary_class: Vec<BoundaryClass>,
    pub edges: Vec<CoarseEdge>,
    pub vertices: Vec<CoarseVertexInfo>,
}

impl NodeClassification {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }
}

/// Classifies every interior fine node as element-interior, coarse-edge
/// interior or coarse vertex, and every coarse element by how it touches
/// the domain boundary.
pub fn classify_nodes(hier: &MeshHierarchy) -> NodeClassification {
    let nh = hier.coarse_divisions;
    let r = hier.refine_ratio;
    let nf = hier.fine_divisions;

    // Interior edges: vertical ones first (on grid lines x = ex/nh,
    // ex in 1..nh), then horizontal ones, each row-major.
    let n_vert = (nh - 1) * nh;
    let vertical_edge_id = |ex: usize, cy: usize| cy * (nh - 1) + (ex - 1);
    let horizontal_edge_id = |cx: usize, ey: usize| n_vert + (ey - 1) * nh + cx;

    let mut edges = Vec::with_capacity(2 * nh * (nh - 1));
    for cy in 0..nh {
        for ex in 1..nh {
            let interior_nodes = (cy * r + 1..(cy + 1) * r)
                .map(|gy| hier.node_id(ex * r, gy).expect("edge node interior"))
                .collect();
            edges.push(CoarseEdge {
                elements: [hier.element_id(ex - 1, cy), hier.element_id(ex, cy)],
                interior_nodes,
            });
        }
    }
    for ey in 1..nh {
        for cx in 0..nh {
            let interior_nodes = (cx * r + 1..(cx + 1) * r)
                .map(|gx| hier.node_id(gx, ey * r).expect("edge node interior"))
                .collect();
            edges.push(CoarseEdge {
                elements: [hier.element_id(cx, ey - 1), hier.element_id(cx, ey)],
                interior_nodes,
            });
        }
    }
    debug_assert_eq!(edges.len(), 2 * nh * (nh - 1));

    let mut vertices = Vec::with_capacity((nh - 1) * (nh - 1));
    for vy in 1..nh {
        for vx in 1..nh {
            vertices.push(CoarseVertexInfo {
                node: hier.node_id(vx * r, vy * r).expect("interior coarse vertex"),
                elements: [
                    hier.element_id(vx - 1, vy - 1),
                    hier.element_id(vx, vy - 1),
                    hier.element_id(vx - 1, vy),
                    hier.element_id(vx, vy),
                ],
                edges: [
                    vertical_edge_id(vx, vy - 1),
                    vertical_edge_id(vx, vy),
                    horizontal_edge_id(vx - 1, vy),
                    horizontal_edge_id(vx, vy),
                ],
            });
        }
    }

    let mut classes = Vec::with_capacity(hier.n);
    for id in 0..hier.n {
        let (gx, gy) = hier.node_coords(id);
        debug_assert!(gx > 0 && gx < nf && gy > 0 && gy < nf);
        let on_x = gx % r == 0;
        let on_y = gy % r == 0;
        let class = match (on_x, on_y) {
            (false, false) => NodeClass::ElementInterior(hier.element_id(gx / r, gy / r)),
            (true, false) => NodeClass::EdgeInterior(vertical_edge_id(gx / r, gy / r)),
            (false, true) => NodeClass::EdgeInterior(horizontal_edge_id(gx / r, gy / r)),
            (true, true) => {
                let (vx, vy) = (gx / r, gy / r);
                NodeClass::CoarseVertex((vy - 1) * (nh - 1) + (vx - 1))
            }
        };
        classes.push(class);
    }

    let element_boundary_class = (0..hier.m)
        .map(|e| {
            let (cx, cy) = hier.element_grid(e);
            let touches = usize::from(cx == 0)
                + usize::from(cx == nh - 1)
                + usize::from(cy == 0)
                + usize::from(cy == nh - 1);
            match touches {
                0 => BoundaryClass::Interior,
                1 => BoundaryClass::OneEdgeOnBoundary,
                _ => BoundaryClass::TwoEdgesOnBoundary,
            }
        })
        .collect();

    NodeClassification {
        classes,
        element_boundary_class,
        edges,
        vertices,
    }
}
