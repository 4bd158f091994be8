//! Bilinear quad finite element assembly on the fine grid: global
//! stiffness and scaled mass matrices, load vectors, and the dense local
//! forms restricted to one coarse element.

use nalgebra::DMatrix;

use crate::coefficient::CoefficientField;
use crate::mesh::MeshHierarchy;
use crate::sparse::CsrMatrix;

/// Element stiffness matrix for a square bilinear element with constant
/// coefficient `kappa`. Node order: SW, SE, NE, NW. Independent of the
/// element size.
pub fn q1_stiffness(kappa: f64) -> [[f64; 4]; 4] {
    let c = kappa / 6.0;
    [
        [4.0 * c, -c, -2.0 * c, -c],
        [-c, 4.0 * c, -c, -2.0 * c],
        [-2.0 * c, -c, 4.0 * c, -c],
        [-c, -2.0 * c, -c, 4.0 * c],
    ]
}

/// Element mass matrix weighted by constant `kappa` on a square element of
/// side `h`. Node order: SW, SE, NE, NW.
pub fn q1_mass(kappa: f64, h: f64) -> [[f64; 4]; 4] {
    let c = kappa * h * h / 36.0;
    [
        [4.0 * c, 2.0 * c, c, 2.0 * c],
        [2.0 * c, 4.0 * c, 2.0 * c, c],
        [c, 2.0 * c, 4.0 * c, 2.0 * c],
        [2.0 * c, c, 2.0 * c, 4.0 * c],
    ]
}

/// Grid node ids (may be boundary) of fine element (ex, ey) in SW, SE, NE,
/// NW order.
#[inline]
fn element_grid_nodes(ex: usize, ey: usize) -> [(usize, usize); 4] {
    [(ex, ey), (ex + 1, ey), (ex + 1, ey + 1), (ex, ey + 1)]
}

/// Assembles the global stiffness matrix over interior fine nodes,
/// eliminating the homogeneous boundary values.
pub fn assemble_stiffness(hier: &MeshHierarchy, kappa: &CoefficientField) -> CsrMatrix {
    let nf = hier.fine_divisions;
    let mut triplets = Vec::with_capacity(16 * nf * nf);
    for ey in 0..nf {
        for ex in 0..nf {
            let ke = q1_stiffness(kappa.at(hier, ex, ey));
            let nodes = element_grid_nodes(ex, ey);
            for (a, &(gx, gy)) in nodes.iter().enumerate() {
                let Some(i) = hier.node_id(gx, gy) else { continue };
                for (b, &(hx, hy)) in nodes.iter().enumerate() {
                    if let Some(j) = hier.node_id(hx, hy) {
                        triplets.push((i, j, ke[a][b]));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(hier.n, triplets)
}

/// Assembles the kappa-weighted mass matrix scaled by `scale` over
/// interior fine nodes.
pub fn assemble_weighted_mass(hier: &MeshHierarchy, kappa: &CoefficientField, scale: f64) -> CsrMatrix {
    let nf = hier.fine_divisions;
    let h = hier.fine_h;
    let mut triplets = Vec::with_capacity(16 * nf * nf);
    for ey in 0..nf {
        for ex in 0..nf {
            let me = q1_mass(kappa.at(hier, ex, ey) * scale, h);
            let nodes = element_grid_nodes(ex, ey);
            for (a, &(gx, gy)) in nodes.iter().enumerate() {
                let Some(i) = hier.node_id(gx, gy) else { continue };
                for (b, &(hx, hy)) in nodes.iter().enumerate() {
                    if let Some(j) = hier.node_id(hx, hy) {
                        triplets.push((i, j, me[a][b]));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(hier.n, triplets)
}

/// Assembles the unweighted mass matrix over interior fine nodes.
pub fn assemble_mass(hier: &MeshHierarchy) -> CsrMatrix {
    let ones = crate::coefficient::constant_field(hier, 1.0).expect("positive constant");
    assemble_weighted_mass(hier, &ones, 1.0)
}

/// Load vector for a source given at fine element midpoints, using the
/// midpoint quadrature rule: each element contributes f_K * h^2 / 4 to its
/// four corner nodes.
pub fn assemble_load(hier: &MeshHierarchy, source: &[f64]) -> Vec<f64> {
    let nf = hier.fine_divisions;
    assert_eq!(source.len(), nf * nf, "source sampled per fine element");
    let h2 = hier.fine_h * hier.fine_h;
    let mut f = vec![0.0; hier.n];
    for ey in 0..nf {
        for ex in 0..nf {
            let contrib = source[ey * nf + ex] * h2 / 4.0;
            for (gx, gy) in element_grid_nodes(ex, ey) {
                if let Some(i) = hier.node_id(gx, gy) {
                    f[i] += contrib;
                }
            }
        }
    }
    f
}

/// Dense local forms on one coarse element: the energy form a_i and the
/// scaled weighted L2 form s_i = H^{-2} * (kappa v, w), both over the
/// element's member nodes (all its fine nodes off the domain boundary).
///
/// a_i is symmetric positive semidefinite; it is singular exactly when the
/// element touches no part of the domain boundary (constants in kernel).
/// s_i is symmetric positive definite.
pub struct LocalForms {
    /// Global interior node ids in local order.
    pub nodes: Vec<usize>,
    pub a: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

/// Assembles the local forms of coarse element `elem`. Row/column order
/// matches `MeshHierarchy::element_membership`.
pub fn assemble_local_forms(hier: &MeshHierarchy, kappa: &CoefficientField, elem: usize) -> LocalForms {
    let nodes = hier.element_membership[elem].clone();
    let pos: std::collections::HashMap<usize, usize> = nodes
        .iter()
        .enumerate()
        .map(|(local, &global)| (global, local))
        .collect();
    let dim = nodes.len();
    let mut a = DMatrix::zeros(dim, dim);
    let mut s = DMatrix::zeros(dim, dim);
    let (cx, cy) = hier.element_grid(elem);
    let r = hier.refine_ratio;
    let h = hier.fine_h;
    let s_scale = 1.0 / (hier.coarse_h * hier.coarse_h);
    for fy in cy * r..(cy + 1) * r {
        for fx in cx * r..(cx + 1) * r {
            let k = kappa.at(hier, fx, fy);
            let ke = q1_stiffness(k);
            let me = q1_mass(k * s_scale, h);
            let nodes4 = element_grid_nodes(fx, fy);
            for (la, &(gx, gy)) in nodes4.iter().enumerate() {
                let Some(i) = hier.node_id(gx, gy).and_then(|g| pos.get(&g)).copied() else {
                    continue;
                };
                for (lb, &(hx, hy)) in nodes4.iter().enumerate() {
                    if let Some(j) = hier.node_id(hx, hy).and_then(|g| pos.get(&g)).copied() {
                        a[(i, j)] += ke[la][lb];
                        s[(i, j)] += me[la][lb];
                    }
                }
            }
        }
    }
    LocalForms { nodes, a, s }
}

/// Energy norm sqrt(x' A x).
pub fn energy_norm(a: &CsrMatrix, x: &[f64]) -> f64 {
    a.bilinear(x, x).max(0.0).sqrt()
}

/// L2 norm through the mass matrix, sqrt(x' M x).
pub fn l2_norm(mass: &CsrMatrix, x: &[f64]) -> f64 {
    mass.bilinear(x, x).max(0.0).sqrt()
}
