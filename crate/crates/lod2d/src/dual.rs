//! Dual node selection and dual functions.
//!
//! Each coarse element gets L_i randomly chosen, mutually separated fine
//! nodes strictly inside it. The hat functions at those nodes, a-normalized
//! and recombined through the inverse of the local coupling matrix S_i,
//! yield functions biorthogonal to the selected spectral modes.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::auxiliary::AuxSpace;
use crate::dense::{min_singular, two_norm};
use crate::error::{LodError, Result};
use crate::mesh::MeshHierarchy;
use crate::sparse::CsrMatrix;

/// Two fine-grid nodes are separated when no fine element can have both
/// among its vertices.
#[inline]
pub fn separated(a: (usize, usize), b: (usize, usize)) -> bool {
    let dx = a.0.abs_diff(b.0);
    let dy = a.1.abs_diff(b.1);
    !(dx <= 1 && dy <= 1)
}

/// Whether `l` separated nodes fit strictly inside an element of
/// `refine_ratio` fine cells per side.
#[inline]
pub fn separation_feasible(refine_ratio: usize, l: usize) -> bool {
    let root = (l as f64).sqrt().ceil() as usize;
    refine_ratio >= 2 * root + 1
}

/// Dual nodes of one element with the coupling matrix S_i.
#[derive(Debug, Clone)]
pub struct ElementDuals {
    pub element: usize,
    /// Global ids of the L_i dual nodes.
    pub nodes: Vec<usize>,
    /// 1/sqrt(A[p,p]) per dual node; the a-normalized hat is scale * hat.
    pub hat_scale: Vec<f64>,
    /// S_i(j,k) = s_i(hat_j, psi_k), L_i x L_i.
    pub s_mat: DMatrix<f64>,
    /// sigma_min / sigma_max of S_i (1 for empty S_i).
    pub inv_cond: f64,
    /// Resampling attempts consumed.
    pub attempts: usize,
}

/// Dual nodes of all elements.
#[derive(Debug, Clone)]
pub struct DualNodeSet {
    pub per_element: Vec<ElementDuals>,
    /// Total number of dual nodes = L.
    pub n_aux: usize,
}

impl DualNodeSet {
    pub fn is_dual(&self, node: usize) -> bool {
        self.per_element
            .iter()
            .any(|ed| ed.nodes.contains(&node))
    }
}

fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn keyed_rng(seed: u64, element: usize, attempt: usize) -> ChaCha8Rng {
    let k = mix64(seed)
        ^ mix64((element as u64).wrapping_mul(0x9e3779b97f4a7c15))
        ^ mix64((attempt as u64).wrapping_mul(0xd1342543de82ef95).wrapping_add(1));
    ChaCha8Rng::seed_from_u64(k)
}

const MAX_ATTEMPTS: usize = 100;
const COND_FLOOR: f64 = 1e-8;

fn select_for_element(
    hier: &MeshHierarchy,
    aux: &AuxSpace,
    a_diag: &[f64],
    seed: u64,
    element: usize,
) -> Result<ElementDuals> {
    let lb = &aux.locals[element];
    let l = lb.l;
    if l == 0 {
        return Ok(ElementDuals {
            element,
            nodes: Vec::new(),
            hat_scale: Vec::new(),
            s_mat: DMatrix::zeros(0, 0),
            inv_cond: 1.0,
            attempts: 0,
        });
    }
    if !separation_feasible(hier.refine_ratio, l) {
        return Err(LodError::DualNodesInfeasible {
            element,
            refine_ratio: hier.refine_ratio,
            count: l,
        });
    }
    let candidates = hier.element_interior_nodes(element);
    let mut last_inv_cond = 0.0;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = keyed_rng(seed, element, attempt);
        let mut pool = candidates.clone();
        pool.shuffle(&mut rng);
        let mut chosen: Vec<usize> = Vec::with_capacity(l);
        for &p in &pool {
            let pc = hier.node_coords(p);
            if chosen.iter().all(|&q| separated(pc, hier.node_coords(q))) {
                chosen.push(p);
                if chosen.len() == l {
                    break;
                }
            }
        }
        if chosen.len() < l {
            continue;
        }
        let hat_scale: Vec<f64> = chosen.iter().map(|&p| 1.0 / a_diag[p].sqrt()).collect();
        let mut s_mat = DMatrix::zeros(l, l);
        for (j, &p) in chosen.iter().enumerate() {
            let (gx, gy) = hier.node_coords(p);
            let local = hier
                .local_index(element, gx, gy)
                .expect("dual node is a member of its element");
            for k in 0..l {
                s_mat[(j, k)] = lb.s_psi[(local, k)] * hat_scale[j];
            }
        }
        let smax = two_norm(&s_mat);
        let smin = min_singular(&s_mat);
        let inv_cond = if smax > 0.0 { smin / smax } else { 0.0 };
        last_inv_cond = inv_cond;
        if inv_cond >= COND_FLOOR {
            return Ok(ElementDuals {
                element,
                nodes: chosen,
                hat_scale,
                s_mat,
                inv_cond,
                attempts: attempt + 1,
            });
        }
    }
    Err(LodError::DualSelectionFailed {
        element,
        inv_cond: last_inv_cond,
        attempts: MAX_ATTEMPTS,
    })
}

/// Selects separated dual nodes for every element and verifies the S_i
/// coupling matrices are well conditioned. Deterministic in `seed`
/// regardless of thread schedule.
pub fn select_dual_nodes(
    hier: &MeshHierarchy,
    aux: &AuxSpace,
    a: &CsrMatrix,
    seed: u64,
) -> Result<DualNodeSet> {
    let a_diag = a.diagonal();
    let per_element: Vec<ElementDuals> = (0..hier.m)
        .into_par_iter()
        .map(|e| select_for_element(hier, aux, &a_diag, seed, e))
        .collect::<Result<Vec<_>>>()?;
    let n_aux = per_element.iter().map(|ed| ed.nodes.len()).sum();

    // cross-element separation: no fine element may touch two dual nodes
    let mut cell_owner: std::collections::HashMap<(usize, usize), usize> =
        std::collections::HashMap::new();
    for ed in &per_element {
        for &p in &ed.nodes {
            let (gx, gy) = hier.node_coords(p);
            for (cx, cy) in [(gx - 1, gy - 1), (gx, gy - 1), (gx - 1, gy), (gx, gy)] {
                if let Some(&other) = cell_owner.get(&(cx, cy)) {
                    if other != p {
                        return Err(LodError::InvalidMesh(format!(
                            "dual nodes {other} and {p} share a fine element"
                        )));
                    }
                }
                cell_owner.insert((cx, cy), p);
            }
        }
    }
    Ok(DualNodeSet {
        per_element,
        n_aux,
    })
}

/// Dual functions of one element: expansion of each dual function over the
/// a-normalized hats at the dual nodes, with the a-Gram matrix and its norm.
#[derive(Debug, Clone)]
pub struct ElementDualFns {
    pub element: usize,
    /// tau = S_i^{-1}; dual function j = sum_l tau[j,l] * hat_l.
    pub tau: DMatrix<f64>,
    /// G_i(j,l) = a(dual_j, dual_l).
    pub gram: DMatrix<f64>,
    /// Spectral norm of G_i.
    pub m_i: f64,
}

/// All dual functions with M = max_i M_i.
#[derive(Debug, Clone)]
pub struct DualFunctions {
    pub per_element: Vec<ElementDualFns>,
    pub m_max: f64,
}

/// Builds the dual functions from the selected nodes.
pub fn build_dual_functions(dual: &DualNodeSet, a: &CsrMatrix) -> Result<DualFunctions> {
    let per_element: Vec<ElementDualFns> = dual
        .per_element
        .par_iter()
        .map(|ed| {
            let l = ed.nodes.len();
            if l == 0 {
                return Ok(ElementDualFns {
                    element: ed.element,
                    tau: DMatrix::zeros(0, 0),
                    gram: DMatrix::zeros(0, 0),
                    m_i: 0.0,
                });
            }
            let tau = ed.s_mat.clone().lu().try_inverse().ok_or_else(|| {
                LodError::NotPositiveDefinite(format!(
                    "S_i singular on element {} despite condition check",
                    ed.element
                ))
            })?;
            // a-Gram of the normalized hats; separation makes it the identity
            let mut ghat = DMatrix::zeros(l, l);
            for (j, &p) in ed.nodes.iter().enumerate() {
                for (k, &q) in ed.nodes.iter().enumerate() {
                    ghat[(j, k)] = a.get(p, q) * ed.hat_scale[j] * ed.hat_scale[k];
                }
            }
            let gram = &tau * ghat * tau.transpose();
            let m_i = two_norm(&gram);
            Ok(ElementDualFns {
                element: ed.element,
                tau,
                gram,
                m_i,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m_max = per_element.iter().map(|f| f.m_i).fold(0.0, f64::max);
    Ok(DualFunctions { per_element, m_max })
}

/// Nodal values of dual function j of element i as (node, value) pairs.
pub fn dual_function_vector(
    dual: &DualNodeSet,
    fns: &DualFunctions,
    element: usize,
    j: usize,
) -> Vec<(usize, f64)> {
    let ed = &dual.per_element[element];
    let f = &fns.per_element[element];
    ed.nodes
        .iter()
        .enumerate()
        .map(|(l, &p)| (p, f.tau[(j, l)] * ed.hat_scale[l]))
        .collect()
}

/// Projects a global vector onto the span of the dual functions through
/// the auxiliary coefficients: sum_i sum_j s_i(v, psi_j) * dual_j^(i).
pub fn project_onto_dual(
    v: &[f64],
    aux: &AuxSpace,
    dual: &DualNodeSet,
    fns: &DualFunctions,
) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (lb, (ed, f)) in aux
        .locals
        .iter()
        .zip(dual.per_element.iter().zip(&fns.per_element))
    {
        if lb.l == 0 {
            continue;
        }
        let c = lb.project(v);
        for (l, &p) in ed.nodes.iter().enumerate() {
            let mut w = 0.0;
            for (j, &cj) in c.iter().enumerate() {
                w += cj * f.tau[(j, l)];
            }
            out[p] += w * ed.hat_scale[l];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_stiffness;
    use crate::auxiliary::{build_aux_space, pi_aux_coeffs};
    use crate::coefficient::{constant_field, four_channels};
    use crate::mesh::classify_nodes;
    use rand::Rng;

    fn setup(
        nh: usize,
        r: usize,
        kappa: crate::coefficient::CoefficientField,
    ) -> (
        MeshHierarchy,
        CsrMatrix,
        AuxSpace,
        DualNodeSet,
        DualFunctions,
    ) {
        let hier = MeshHierarchy::build(nh, r).unwrap();
        let cls = classify_nodes(&hier);
        let a = assemble_stiffness(&hier, &kappa);
        let aux = build_aux_space(&hier, &kappa, &cls).unwrap();
        let dual = select_dual_nodes(&hier, &aux, &a, 42).unwrap();
        let fns = build_dual_functions(&dual, &a).unwrap();
        (hier, a, aux, dual, fns)
    }

    #[test]
    fn separation_predicates() {
        assert!(!separated((5, 5), (5, 5)));
        assert!(!separated((5, 5), (6, 6)));
        assert!(!separated((5, 5), (4, 5)));
        assert!(separated((5, 5), (7, 5)));
        assert!(separated((5, 5), (7, 6)));
        assert!(separation_feasible(3, 1));
        assert!(!separation_feasible(2, 1));
        assert!(separation_feasible(5, 4));
        assert!(!separation_feasible(4, 4));
        assert!(!separation_feasible(5, 5));
        assert!(separation_feasible(7, 9));
    }

    #[test]
    fn scalar_case_unit_coefficient() {
        let hier = MeshHierarchy::build(3, 6).unwrap();
        let kappa = constant_field(&hier, 1.0).unwrap();
        let (_, _, aux, dual, fns) = setup(3, 6, kappa);
        // only the center element carries a mode
        let ed = &dual.per_element[4];
        assert_eq!(ed.nodes.len(), 1);
        assert_eq!(dual.n_aux, aux.l_total);
        let s = ed.s_mat[(0, 0)];
        assert!(s != 0.0, "coupling with the positive constant mode");
        let f = &fns.per_element[4];
        assert!((f.tau[(0, 0)] - 1.0 / s).abs() < 1e-12);
        // a(hat, hat) = 1, so M_i = 1/s^2
        assert!((f.m_i - 1.0 / (s * s)).abs() < 1e-8 / (s * s));
        let _ = hier;
    }

    #[test]
    fn high_contrast_invariants() {
        let hier = MeshHierarchy::build(4, 8).unwrap();
        let kappa = four_channels(&hier, 1.0e6).unwrap();
        let (hier, a, aux, dual, fns) = setup(4, 8, kappa);
        assert!(dual.n_aux >= 2);

        // hats are a-orthonormal: unit diagonal, disjoint supports off it
        let mut all: Vec<(usize, f64)> = Vec::new();
        for ed in &dual.per_element {
            for (l, &p) in ed.nodes.iter().enumerate() {
                assert!((a.get(p, p) * ed.hat_scale[l] * ed.hat_scale[l] - 1.0).abs() < 1e-12);
                all.push((p, ed.hat_scale[l]));
            }
        }
        for (i, &(p, sp)) in all.iter().enumerate() {
            for &(q, sq) in &all[i + 1..] {
                assert!(
                    (a.get(p, q) * sp * sq).abs() < 1e-10,
                    "hats at {p},{q} not a-orthogonal"
                );
                assert!(separated(hier.node_coords(p), hier.node_coords(q)));
            }
        }

        for (ed, f) in dual.per_element.iter().zip(&fns.per_element) {
            let l = ed.nodes.len();
            if l == 0 {
                continue;
            }
            assert!(ed.inv_cond >= 1e-8);
            // Kronecker property tau * S = I
            let prod = &f.tau * &ed.s_mat;
            for i in 0..l {
                for j in 0..l {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[(i, j)] - want).abs() < 1e-8);
                }
            }
            // with identity hat Gram, G = S^{-1} S^{-T}
            let alt = &f.tau * f.tau.transpose();
            assert!((&f.gram - &alt).amax() < 1e-10 * f.m_i.max(1.0));
            // G symmetric positive definite
            assert!((&f.gram - f.gram.transpose()).amax() < 1e-10 * f.m_i.max(1.0));
            assert!(f.gram.clone().cholesky().is_some());
            assert!(fns.m_max >= f.m_i);
        }

        // the aux projection restricted to the dual span is the identity:
        // dual function j of element i projects to coefficient e_j there
        for e in 0..hier.m {
            let l = dual.per_element[e].nodes.len();
            for j in 0..l {
                let mut v = vec![0.0; hier.n];
                for (p, val) in dual_function_vector(&dual, &fns, e, j) {
                    v[p] += val;
                }
                let c = pi_aux_coeffs(&aux, &v);
                for (i, ci) in c.iter().enumerate() {
                    for (k, &val) in ci.iter().enumerate() {
                        let want = if i == e && k == j { 1.0 } else { 0.0 };
                        assert!(
                            (val - want).abs() < 1e-8,
                            "element {e} dual {j}: coeff ({i},{k}) = {val}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn projection_fixes_aux_component() {
        let hier = MeshHierarchy::build(4, 8).unwrap();
        let kappa = four_channels(&hier, 1.0e4).unwrap();
        let (hier, _, aux, dual, fns) = setup(4, 8, kappa);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let v: Vec<f64> = (0..hier.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let proj = project_onto_dual(&v, &aux, &dual, &fns);
            let diff: Vec<f64> = v.iter().zip(&proj).map(|(x, y)| x - y).collect();
            for ci in pi_aux_coeffs(&aux, &diff) {
                for c in ci {
                    assert!(c.abs() < 1e-8, "residual aux coefficient {c}");
                }
            }
            // idempotence on the dual span, relative to its magnitude
            let twice = project_onto_dual(&proj, &aux, &dual, &fns);
            let scale = proj.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
            for (x, y) in proj.iter().zip(&twice) {
                assert!((x - y).abs() < 1e-8 * scale);
            }
        }
    }

    #[test]
    fn selection_deterministic_in_seed() {
        let hier = MeshHierarchy::build(4, 8).unwrap();
        let kappa = four_channels(&hier, 1.0e6).unwrap();
        let cls = classify_nodes(&hier);
        let a = assemble_stiffness(&hier, &kappa);
        let aux = build_aux_space(&hier, &kappa, &cls).unwrap();
        let d1 = select_dual_nodes(&hier, &aux, &a, 7).unwrap();
        let d2 = select_dual_nodes(&hier, &aux, &a, 7).unwrap();
        let nodes = |d: &DualNodeSet| {
            d.per_element
                .iter()
                .map(|ed| ed.nodes.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(nodes(&d1), nodes(&d2));
        let d3 = select_dual_nodes(&hier, &aux, &a, 8).unwrap();
        assert_ne!(nodes(&d1), nodes(&d3), "different seeds move the nodes");
    }
}
